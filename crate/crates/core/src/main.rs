//! `lgmjoint` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input (unreadable file, bad config,
//! schema mismatch, unknown suite), 3 numerical failure (non-convergence,
//! indefinite Hessian), 1 failed verification checks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use lgmjoint::assembly::Model;
use lgmjoint::data::Table;
use lgmjoint::inference::fit;
use lgmjoint::oracle::{simulate_joint, SimScenario};
use lgmjoint::predict::{predict, PredictRequest};
use lgmjoint::spec::{parse_config, IntStrategy};
use lgmjoint::summaries::{summarize, SummaryOptions};
use lgmjoint::{archive, verify, Error, Result};

#[derive(Parser)]
#[command(name = "lgmjoint", version, about = "Bayesian joint models for longitudinal and survival data")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Eb,
    Grid,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the fit archive, summary and manifest.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        long: Option<PathBuf>,
        #[arg(long)]
        surv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the strategy in the config.
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        /// Falls back to LGMJOINT_SEED, then to the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-summarize an existing fit archive.
    Summarize {
        #[arg(long)]
        fit: PathBuf,
        /// Output directory (default: the archive).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report random-effect standard deviations and correlations.
        #[arg(long)]
        sdcor: bool,
        /// Report fixed survival effects as hazard ratios.
        #[arg(long)]
        hr: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict marker trajectories and risk curves for new subjects.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        newdata: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 50)]
        n_time_points: usize,
        #[arg(long, default_value_t = 300)]
        nsample: usize,
        #[arg(long, default_value_t = 50)]
        nsample_re: usize,
        /// Report markers on the response scale.
        #[arg(long)]
        inv_link: bool,
        /// Add survival curves.
        #[arg(long)]
        survival: bool,
        /// Add cumulative incidence curves.
        #[arg(long)]
        cif: bool,
        /// Condition on survival up to this time.
        #[arg(long)]
        csurv: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate a joint data set from a JSON scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a verification suite.
    Verify {
        #[arg(value_parser = verify::SUITES)]
        suite: String,
    },
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    config_sha256: Option<String>,
    data_sha256: Vec<(String, String)>,
    seed: u64,
    strategy: Option<IntStrategy>,
    threads: usize,
    started_unix: u64,
    wall_seconds: f64,
    files: Vec<ManifestFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary sibling and a rename so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("LGMJOINT_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("LGMJOINT_SEED='{v}' is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

struct Run {
    started: Instant,
    started_unix: u64,
    threads: usize,
}

impl Run {
    fn manifest(
        &self,
        dir: &Path,
        command: &str,
        config: Option<&[u8]>,
        data: Vec<(String, String)>,
        seed: u64,
        strategy: Option<IntStrategy>,
        files: &[String],
    ) -> Result<()> {
        let files = files
            .iter()
            .map(|name| {
                Ok(ManifestFile {
                    name: name.clone(),
                    sha256: sha256_hex(&read_bytes(&dir.join(name))?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config.map(sha256_hex),
            data_sha256: data,
            seed,
            strategy,
            threads: self.threads,
            started_unix: self.started_unix,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            files,
        };
        write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&m)?.as_bytes())
    }
}

fn write_summary(dir: &Path, model: &Model, f: &lgmjoint::inference::Fit, opts: &SummaryOptions) -> Result<Vec<String>> {
    let s = summarize(model, f, opts);
    write_atomic(&dir.join("summary.json"), s.to_json().as_bytes())?;
    write_atomic(&dir.join("summary.txt"), s.to_text().as_bytes())?;
    Ok(vec!["summary.json".into(), "summary.txt".into()])
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = cli.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?;
    let ctx = Run {
        started: Instant::now(),
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        threads: rayon::current_num_threads(),
    };
    match cli.command {
        Command::Fit {
            config,
            long,
            surv,
            out,
            strategy,
            seed,
        } => {
            let config_bytes = read_bytes(&config)?;
            let config_text = String::from_utf8(config_bytes.clone())
                .map_err(|_| Error::Config(format!("{} is not UTF-8", config.display())))?;
            let mut data = Vec::new();
            let mut load = |p: &Option<PathBuf>| -> Result<Option<Table>> {
                p.as_ref()
                    .map(|p| {
                        let bytes = read_bytes(p)?;
                        data.push((p.display().to_string(), sha256_hex(&bytes)));
                        Table::from_reader(bytes.as_slice())
                    })
                    .transpose()
            };
            let long = load(&long)?;
            let surv = load(&surv)?;
            let mut spec = parse_config(&config_text, long.as_ref(), surv.as_ref())?;
            if let Some(s) = strategy {
                spec.controls.int_strategy = match s {
                    Strategy::Eb => IntStrategy::Eb,
                    Strategy::Grid => IntStrategy::Grid,
                };
            }
            spec.controls.seed = resolve_seed(seed, spec.controls.seed)?;
            let model = Model::build(&spec, long.as_ref(), surv.as_ref())?;
            let f = fit(&model, spec.controls.int_strategy)?;
            create_dir(&out)?;
            let mut files = archive::save(&out, &model, &f)?;
            let opts = SummaryOptions {
                seed: spec.controls.seed,
                ..SummaryOptions::default()
            };
            files.extend(write_summary(&out, &model, &f, &opts)?);
            ctx.manifest(
                &out,
                "fit",
                Some(&config_bytes),
                data,
                spec.controls.seed,
                Some(spec.controls.int_strategy),
                &files,
            )?;
            print!("{}", fs::read_to_string(out.join("summary.txt")).map_err(|e| Error::io(&out, e))?);
        }
        Command::Summarize {
            fit: dir,
            out,
            sdcor,
            hr,
            seed,
        } => {
            let (model, f) = archive::load(&dir)?;
            let out = out.unwrap_or_else(|| dir.clone());
            create_dir(&out)?;
            let seed = resolve_seed(seed, model.spec.controls.seed)?;
            let opts = SummaryOptions {
                sdcor,
                hr,
                seed,
                ..SummaryOptions::default()
            };
            let files = write_summary(&out, &model, &f, &opts)?;
            ctx.manifest(&out, "summarize", None, vec![], seed, Some(f.strategy), &files)?;
            print!("{}", summarize(&model, &f, &opts).to_text());
        }
        Command::Predict {
            fit: dir,
            newdata,
            out,
            horizon,
            n_time_points,
            nsample,
            nsample_re,
            inv_link,
            survival,
            cif,
            csurv,
            seed,
        } => {
            let (model, f) = archive::load(&dir)?;
            let bytes = read_bytes(&newdata)?;
            let table = Table::from_reader(bytes.as_slice())?;
            let seed = resolve_seed(seed, model.spec.controls.seed)?;
            let req = PredictRequest {
                n_time_points,
                n_sample: nsample,
                n_sample_re: nsample_re,
                inv_link,
                survival,
                cif,
                csurv,
                seed,
                ..PredictRequest::new(horizon)
            };
            let p = predict(&model, &f, &table, &req)?;
            create_dir(&out)?;
            let mut files = Vec::new();
            if model.spec.n_long() > 0 {
                let mut buf = Vec::new();
                p.write_long_csv(&mut buf)?;
                write_atomic(&out.join("predL.csv"), &buf)?;
                files.push("predL.csv".to_string());
            }
            if model.spec.n_surv() > 0 {
                let mut buf = Vec::new();
                p.write_surv_csv(&mut buf)?;
                write_atomic(&out.join("predS.csv"), &buf)?;
                files.push("predS.csv".to_string());
            }
            let data = vec![(newdata.display().to_string(), sha256_hex(&bytes))];
            ctx.manifest(&out, "predict", None, data, seed, Some(f.strategy), &files)?;
        }
        Command::Simulate { scenario, out } => {
            let bytes = read_bytes(&scenario)?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| Error::Config(format!("{} is not UTF-8", scenario.display())))?;
            let sc = SimScenario::from_json(&text)?;
            let (long, surv) = simulate_joint(&sc)?;
            create_dir(&out)?;
            let mut files = Vec::new();
            for (name, t) in [("long.csv", &long), ("surv.csv", &surv)] {
                if t.nrows() > 0 {
                    write_atomic(&out.join(name), t.to_csv_string()?.as_bytes())?;
                    files.push(name.to_string());
                }
            }
            ctx.manifest(&out, "simulate", Some(&bytes), vec![], sc.seed, None, &files)?;
        }
        Command::Verify { suite } => {
            let checks = verify::run_suite(&suite)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {} failed", checks.len(), failed);
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("lgmjoint: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
