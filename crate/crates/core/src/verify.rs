//! Built-in verification suites. Each suite fits models on simulated or
//! bundled data and compares the engine against an independent oracle.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::Model;
use crate::data::Table;
use crate::error::{Error, Result};
use crate::inference::{fit, Fit};
use crate::likelihoods::{self, Extras, Family};
use crate::oracle::{cox_partial_fit, metropolis, quadrature_posterior, simulate_joint, MetropolisOptions, SimScenario};
use crate::predict::{predict, PredictRequest};
use crate::spec::{parse_config, IntStrategy};
use crate::summaries::{summarize, SummaryOptions};
use crate::surv_augment::{decompose, Cutpoints};

pub const SUITES: [&str; 9] = [
    "cox-equivalence",
    "lmm-exactness",
    "quadrature",
    "mcmc",
    "recovery",
    "pbc2",
    "properties",
    "scalability",
    "all",
];

/// Suites run by `all`: the ones that finish in minutes.
const ALL: [&str; 4] = ["properties", "cox-equivalence", "lmm-exactness", "quadrature"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<16} {:<40} {:>8.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

pub fn checks_to_json(checks: &[Check]) -> String {
    serde_json::to_string_pretty(checks).expect("checks serialize")
}

struct Recorder {
    suite: &'static str,
    checks: Vec<Check>,
}

impl Recorder {
    fn new(suite: &'static str) -> Self {
        Recorder { suite, checks: Vec::new() }
    }

    /// Runs `f`, recording an error as a failed check.
    fn run(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String)>) {
        let start = Instant::now();
        let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check {
            suite: self.suite.into(),
            name: name.into(),
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
}

/// Runs one named suite (or `all`) and returns its checks.
pub fn run_suite(name: &str) -> Result<Vec<Check>> {
    let checks = match name {
        "cox-equivalence" => cox_equivalence(),
        "lmm-exactness" => lmm_exactness(),
        "quadrature" => quadrature(),
        "mcmc" => mcmc(),
        "recovery" => recovery(),
        "pbc2" => pbc2(),
        "properties" => properties(),
        "scalability" => scalability(),
        "all" => {
            let mut out = Vec::new();
            for s in ALL {
                out.extend(run_suite(s)?);
            }
            out
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown suite '{name}'; available: {}",
                SUITES.join(", ")
            )))
        }
    };
    Ok(checks)
}

fn sim(json: &str) -> Result<(Table, Table)> {
    simulate_joint(&SimScenario::from_json(json)?)
}

fn build(config: &str, long: Option<&Table>, surv: Option<&Table>) -> Result<Model> {
    let spec = parse_config(config, long, surv)?;
    Model::build(&spec, long, surv)
}

fn latent_index(model: &Model, name: &str) -> Result<usize> {
    model
        .layout
        .names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Precondition(format!("no latent element named '{name}'")))
}

fn free_index(model: &Model, name: &str) -> Result<usize> {
    model
        .hyper
        .free_names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Precondition(format!("no free hyperparameter named '{name}'")))
}

fn column(t: &Table, name: &str) -> Result<Vec<f64>> {
    t.values(name)?
        .iter()
        .map(|v| v.ok_or_else(|| Error::Data(format!("missing value in '{name}'"))))
        .collect()
}

/// (mean, sd) of a named parameter: latent marginal or free hyperparameter.
fn posterior_of(model: &Model, f: &Fit, name: &str) -> Result<(f64, f64)> {
    if let Ok(i) = latent_index(model, name) {
        return Ok((f.marginals[i].mean(), f.marginals[i].sd()));
    }
    let j = free_index(model, name)?;
    let (m, c) = f.hyper_moments();
    Ok((m[j], c[(j, j)].sqrt()))
}

// ---------------------------------------------------------------------------
// Cox equivalence

const COX_SCENARIO: &str = r#"{"n_subjects":200,"seed":2024,"visits":[0],
    "covariates":[{"kind":"binary","name":"x","p":0.5}],
    "survival":[{"baseline":"weibull","shape":1.3,"intercept":-1.5,"fixed":["x"],"gamma":[0.7]}],
    "censoring":{"admin":4.0,"rate":0.1}}"#;

fn cox_equivalence() -> Vec<Check> {
    let mut rec = Recorder::new("cox-equivalence");
    rec.run("augmented Poisson = Breslow Cox (1e-3)", || {
        let (_, surv) = sim(COX_SCENARIO)?;
        let t = column(&surv, "time")?;
        let e: Vec<bool> = column(&surv, "event")?.iter().map(|&v| v == 1.0).collect();
        let x: Vec<Vec<f64>> = column(&surv, "x")?.into_iter().map(|v| vec![v]).collect();
        let cox = cox_partial_fit(&t, &e, &x)?;
        let start = Instant::now();
        let mut cuts: Vec<f64> = t.iter().zip(&e).filter(|p| *p.1).map(|p| *p.0).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut points = vec![0.0];
        points.extend(&cuts);
        let max_exit = t.iter().copied().fold(0.0, f64::max);
        if max_exit > points[points.len() - 1] {
            points.push(max_exit);
        }
        let config = format!(
            r#"{{"id":"id","survival":[{{"exit":"time","event":"event","fixed":["x"],"baseline":"rw1",
                "cutpoints":{}}}],
               "control":{{"int_strategy":"eb",
                 "prior_fixed":{{"mean":0,"prec":1e-8,"mean_intercept":0,"prec_intercept":1e-8}},
                 "fix_hyper":{{"rw_logprec_S1":-20}},"tolerance":1e-10}}}}"#,
            serde_json::to_string(&points)?
        );
        let model = build(&config, None, Some(&surv))?;
        let f = fit(&model, IntStrategy::Eb)?;
        let (beta, _) = posterior_of(&model, &f, "x_S1")?;
        let secs = start.elapsed().as_secs_f64();
        let diff = (beta - cox.beta[0]).abs();
        Ok((
            diff < 1e-3 && secs < 30.0,
            format!("engine {beta:.6} cox {:.6} |diff| {diff:.2e} fit {secs:.1}s", cox.beta[0]),
        ))
    });
    rec.checks
}

// ---------------------------------------------------------------------------
// LMM exactness

const LMM_SCENARIO: &str = r#"{"n_subjects":60,"seed":7,"visits":[0,1,2,3,4],
    "covariates":[{"kind":"binary","name":"x","p":0.5}],
    "longitudinal":[{"family":"gaussian","fixed":["1","time","x"],"beta":[1.0,0.3,-0.4],"random":["1"],"sigma":0.5}],
    "re_cov":[[0.25]],"censoring":{"admin":10.0}}"#;

fn lmm_exactness() -> Vec<Check> {
    let mut rec = Recorder::new("lmm-exactness");
    rec.run("latent marginals = closed-form GLS", || {
        let start = Instant::now();
        let (long, _) = sim(LMM_SCENARIO)?;
        let (tau_e, tau_b) = (4.0f64, 4.0f64);
        let config = format!(
            r#"{{"id":"id","time":"time",
                "longitudinal":[{{"response":"y1","family":"gaussian","fixed":["1","time","x"],"random":["1"]}}],
                "control":{{"int_strategy":"eb","fix_hyper":{{"res_logprec_L1":{},"re_L1_logdiag_1":{}}}}}}}"#,
            tau_e.ln(),
            0.5 * tau_b.ln()
        );
        let model = build(&config, Some(&long), None)?;
        let f = fit(&model, IntStrategy::Eb)?;
        let n = model.n_latent();
        let omega = model.hyper.expand(&[]);
        let vals = model.amap.values(&omega);
        let nr = model.rows.len();
        let mut a = nalgebra::DMatrix::zeros(nr, n);
        for r in 0..nr {
            for p in model.amap.row_ptr[r]..model.amap.row_ptr[r + 1] {
                a[(r, model.amap.col[p] as usize)] += vals[p];
            }
        }
        let y = nalgebra::DVector::from_iterator(nr, model.rows.iter().map(|r| r.y));
        let mut qp = nalgebra::DMatrix::zeros(n, n);
        let prior_prec = model.spec.controls.prior_fixed.prec;
        for i in 0..n {
            qp[(i, i)] = if i < 3 { prior_prec } else { tau_b };
        }
        let q = a.transpose() * &a * tau_e + qp;
        let cov = q.try_inverse().ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
        let mean = &cov * a.transpose() * y * tau_e;
        let mut dm = 0.0f64;
        let mut ds = 0.0f64;
        for i in 0..n {
            dm = dm.max((f.marginals[i].mean() - mean[i]).abs());
            ds = ds.max((f.marginals[i].sd() - cov[(i, i)].sqrt()).abs());
        }
        let secs = start.elapsed().as_secs_f64();
        Ok((
            dm < 1e-8 && ds < 1e-6 && secs < 5.0,
            format!("max |mean diff| {dm:.2e}, max |sd diff| {ds:.2e}, {secs:.2}s"),
        ))
    });
    rec.checks
}

// ---------------------------------------------------------------------------
// Quadrature

const QUAD_SCENARIO: &str = r#"{"n_subjects":3,"seed":1,"visits":[0,1,2,3,4],
    "longitudinal":[{"family":"poisson","fixed":["1"],"beta":[1.0],"random":["1"]}],
    "re_cov":[[0.25]],"censoring":{"admin":10.0}}"#;

fn quadrature() -> Vec<Check> {
    let mut rec = Recorder::new("quadrature");
    rec.run("grid hyper mean/sd vs quadrature (2%)", || {
        let start = Instant::now();
        let (long, _) = sim(QUAD_SCENARIO)?;
        let config = r#"{"id":"id","longitudinal":[{"response":"y1","family":"poisson","fixed":["1"],"random":["1"]}]}"#;
        let model = build(config, Some(&long), None)?;
        let q = quadrature_posterior(&model, 61, 9)?;
        let f = fit(&model, IntStrategy::Grid)?;
        let (m, c) = f.hyper_moments();
        let rm = m[0] / q.hyper_mean[0] - 1.0;
        let rs = c[(0, 0)].sqrt() / q.hyper_sd[0] - 1.0;
        let secs = start.elapsed().as_secs_f64();
        Ok((
            rm.abs() < 0.02 && rs.abs() < 0.02 && secs < 60.0,
            format!(
                "grid {:.4} ({:.4}) quad {:.4} ({:.4}): rel mean {:+.2}%, rel sd {:+.2}%, {} points",
                m[0],
                c[(0, 0)].sqrt(),
                q.hyper_mean[0],
                q.hyper_sd[0],
                100.0 * rm,
                100.0 * rs,
                f.points.len()
            ),
        ))
    });
    rec.checks
}

// ---------------------------------------------------------------------------
// MCMC equivalence and recovery

fn joint_scenario(n: usize, seed: u64) -> String {
    format!(
        r#"{{"n_subjects":{n},"seed":{seed},"visits":[0,0.5,1,1.5,2,2.5,3,3.5,4,4.5],
        "longitudinal":[{{"family":"gaussian","fixed":["1","time"],"beta":[1.0,-0.3],"random":["1"],"sigma":0.5}}],
        "re_cov":[[0.36]],
        "survival":[{{"baseline":"exponential","intercept":-2.0,"assoc":[{{"marker":0,"kind":"CV","phi":[0.5]}}]}}],
        "censoring":{{"admin":5.0,"rate":0.05}}}}"#
    )
}

const JOINT_CONFIG: &str = r#"{"id":"id","time":"time",
    "longitudinal":[{"response":"y1","family":"gaussian","fixed":["1","time"],"random":["1"]}],
    "survival":[{"exit":"time","event":"event","baseline":"exponential"}],
    "assoc":["CV"]}"#;

const JOINT_PARAMS: [&str; 4] = ["Intercept_L1", "time_L1", "Intercept_S1", "CV_L1_S1"];

fn mcmc() -> Vec<Check> {
    let mut rec = Recorder::new("mcmc");
    let prepared = (|| -> Result<(Model, Fit, f64)> {
        let (long, surv) = sim(&joint_scenario(100, 41))?;
        let model = build(JOINT_CONFIG, Some(&long), Some(&surv))?;
        let start = Instant::now();
        let f = fit(&model, IntStrategy::Grid)?;
        Ok((model, f, start.elapsed().as_secs_f64()))
    })();
    let (model, f, engine_secs) = match prepared {
        Ok(v) => v,
        Err(e) => {
            rec.run("engine fit", || Err(e));
            return rec.checks;
        }
    };
    rec.run("engine runtime < 60 s", || Ok((engine_secs < 60.0, format!("{engine_secs:.1}s"))));
    let start = Instant::now();
    let mut opts = MetropolisOptions::new(300_000, 99);
    opts.burn_in = 30_000;
    opts.init = Some((f.mode.theta.clone(), f.mode.approx.mode.clone()));
    let chain = metropolis(&model, &opts);
    let oracle_secs = start.elapsed().as_secs_f64();
    let chain = match chain {
        Ok(c) => c,
        Err(e) => {
            rec.run("oracle chain", || Err(e));
            return rec.checks;
        }
    };
    rec.run("oracle runtime < 30 min", || Ok((oracle_secs < 1800.0, format!("{oracle_secs:.1}s"))));
    let n = model.n_latent();
    for name in JOINT_PARAMS {
        rec.run(&format!("{name} within 0.5 sd of oracle"), || {
            let (m, s) = posterior_of(&model, &f, name)?;
            let k = match latent_index(&model, name) {
                Ok(i) => i,
                Err(_) => n + free_index(&model, name)?,
            };
            let z = (m - chain.mean[k]) / s;
            Ok((
                z.abs() < 0.5,
                format!(
                    "engine {m:.4} ({s:.4}) oracle {:.4} ({:.4}, mcse {:.4}): {z:+.3} sd",
                    chain.mean[k], chain.sd[k], chain.mcse[k]
                ),
            ))
        });
    }
    rec.checks
}

fn recovery() -> Vec<Check> {
    let mut rec = Recorder::new("recovery");
    let truth = [
        ("Intercept_L1", 1.0),
        ("time_L1", -0.3),
        ("Exponential (rate)_S1", (-2.0f64).exp()),
        ("CV_L1_S1", 0.5),
        ("Res. err. (variance)", 0.25),
        ("RE variance", 0.36),
    ];
    let start = Instant::now();
    let mut covered = vec![0usize; truth.len()];
    let mut phi = Vec::new();
    let mut failures = Vec::new();
    let reps = 20;
    for r in 0..reps {
        let outcome = (|| -> Result<Vec<(f64, f64, f64)>> {
            let (long, surv) = sim(&joint_scenario(300, 1000 + r))?;
            let model = build(JOINT_CONFIG, Some(&long), Some(&surv))?;
            let f = fit(&model, IntStrategy::Grid)?;
            let s = summarize(&model, &f, &SummaryOptions::default());
            truth
                .iter()
                .map(|(name, _)| {
                    let row = if *name == "RE variance" {
                        s.sections
                            .iter()
                            .find(|sec| sec.title.starts_with("Random effects"))
                            .and_then(|sec| sec.rows.first())
                    } else {
                        s.row(name)
                    };
                    row.map(|r| (r.mean, r.q025, r.q975))
                        .ok_or_else(|| Error::Precondition(format!("summary lacks '{name}'")))
                })
                .collect()
        })();
        match outcome {
            Ok(rows) => {
                for (i, ((_, t), (mean, lo, hi))) in truth.iter().zip(&rows).enumerate() {
                    if lo <= t && t <= hi {
                        covered[i] += 1;
                    }
                    if i == 3 {
                        phi.push(*mean);
                    }
                }
            }
            Err(e) => failures.push(format!("replicate {r}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    for (i, (name, t)) in truth.iter().enumerate() {
        let c = covered[i];
        rec.run(&format!("coverage {name}"), || {
            Ok((
                (16..=20).contains(&c) && failures.is_empty(),
                format!("{c}/{reps} intervals cover {t:.4}"),
            ))
        });
    }
    rec.run("phi |mean bias| < 0.1", || {
        if phi.is_empty() {
            return Ok((false, failures.join("; ")));
        }
        let bias = phi.iter().sum::<f64>() / phi.len() as f64 - 0.5;
        Ok((bias.abs() < 0.1 && failures.is_empty(), format!("bias {bias:+.4} over {} fits", phi.len())))
    });
    rec.run("total runtime < 30 min", || Ok((secs < 1800.0, format!("{secs:.1}s"))));
    rec.checks
}

// ---------------------------------------------------------------------------
// pbc2

const PBC2_LONG: &str = include_str!("../tests/data/pbc2_long.csv");
const PBC2_SURV: &str = include_str!("../tests/data/pbc2_surv.csv");

/// The two-marker, one-event model on the bundled pbc2 extract.
pub const PBC2_CONFIG: &str = r#"{"id":"id","time":"year",
    "longitudinal":[
      {"response":"SGOT","family":"lognormal","fixed":["1","year","drug","year:drug"],"random":["1"]},
      {"response":"platelets","family":"poisson","fixed":["1","year","drug","year:drug"],"random":["1"]}],
    "survival":[{"exit":"years","event":"status2","fixed":["drug"],"baseline":"weibull"}],
    "assoc":["CV","CV"],"cor_long":true}"#;

/// Reference posterior (mean, sd) for the pbc2 model.
const PBC2_REFERENCE: [(&str, f64, f64); 11] = [
    ("Intercept_L1", 4.7971, 0.0388),
    ("year_L1", -0.0051, 0.0038),
    ("drug_L1", -0.1545, 0.0547),
    ("year:drug_L1", -0.0014, 0.0053),
    ("Intercept_L2", 5.5102, 0.0319),
    ("year_L2", -0.0478, 0.0009),
    ("drug_L2", -0.1014, 0.0449),
    ("year:drug_L2", 0.0138, 0.0012),
    ("drug_S1", 0.1116, 0.1715),
    ("CV_L1_S1", 1.3724, 0.2184),
    ("CV_L2_S1", -1.1338, 0.2072),
];

pub fn pbc2_tables() -> Result<(Table, Table)> {
    Ok((Table::from_csv_str(PBC2_LONG)?, Table::from_csv_str(PBC2_SURV)?))
}

fn pbc2() -> Vec<Check> {
    let mut rec = Recorder::new("pbc2");
    let start = Instant::now();
    let fitted = (|| -> Result<(Model, Fit)> {
        let (long, surv) = pbc2_tables()?;
        let model = build(PBC2_CONFIG, Some(&long), Some(&surv))?;
        let f = fit(&model, IntStrategy::Grid)?;
        Ok((model, f))
    })();
    let secs = start.elapsed().as_secs_f64();
    let (model, f) = match fitted {
        Ok(v) => v,
        Err(e) => {
            rec.run("fit", || Err(e));
            return rec.checks;
        }
    };
    for (name, m_ref, s_ref) in PBC2_REFERENCE {
        rec.run(&format!("{name} within 3 reference sd"), || {
            let (m, s) = posterior_of(&model, &f, name)?;
            let z = (m - m_ref) / s_ref;
            Ok((z.abs() < 3.0, format!("{m:.4} ({s:.4}) vs {m_ref:.4} ({s_ref:.4}): {z:+.2} sd")))
        });
    }
    rec.run("runtime < 2 min", || Ok((secs < 120.0, format!("{secs:.1}s"))));
    rec.checks
}

// ---------------------------------------------------------------------------
// Properties

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn likelihood_derivatives() -> Result<(bool, String)> {
    // (family, y, precision or shape, extras)
    let cases: [(Family, f64, f64, Extras); 9] = [
        (Family::Gaussian, 1.3, 3.2, Extras::default()),
        (Family::Lognormal, 2.5, 0.7, Extras::default()),
        (Family::Poisson, 4.0, 0.0, Extras::default()),
        (Family::Poisson, 0.0, 0.0, Extras { offset: 0.7, ..Default::default() }),
        (Family::Binomial, 3.0, 0.0, Extras { ntrials: 5.0, ..Default::default() }),
        (Family::Binomial, 0.0, 0.0, Extras::default()),
        (Family::PoissonSurv, 1.0, 0.0, Extras { offset: -0.3, ..Default::default() }),
        (Family::ExponentialSurv, 1.0, 0.0, Extras { t0: 0.0, t1: 2.0, ..Default::default() }),
        (Family::WeibullSurv, 1.0, 1.3, Extras { t0: 0.5, t1: 2.0, ..Default::default() }),
    ];
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (family, y, hyper, ex) in cases {
        for eta in [-1.5, -0.2, 0.4, 1.7] {
            let f = |e: f64| likelihoods::eval(family, y, e, hyper, &ex);
            let d = f(eta);
            let g = (f(eta + h).value - f(eta - h).value) / (2.0 * h);
            let c = (f(eta + h).d1 - f(eta - h).d1) / (2.0 * h);
            for (a, b) in [(d.d1, g), (d.d2, c)] {
                if !rel_close(a, b, 1e-5) {
                    bad.push(format!("{family:?} eta={eta}: {a} vs {b}"));
                }
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
            }
        }
    }
    if !bad.is_empty() {
        return Ok((false, bad.join("; ")));
    }
    Ok((true, format!("worst relative error {worst:.1e}")))
}

fn exposure_conservation() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cuts = Cutpoints::new(vec![0.0, 0.3, 1.1, 2.0, 2.2, 5.0])?;
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let entry = rng.random::<f64>() * 3.0;
        let exit = entry + rng.random::<f64>() * 5.0 + 1e-9;
        let rows = decompose(entry, exit, rng.random::<bool>(), &cuts, 0, 0)?;
        let total: f64 = rows.iter().map(|r| r.exposure()).sum();
        worst = worst.max((total - (exit - entry)).abs());
    }
    Ok((worst < 1e-12, format!("max |sum exposure - follow-up| {worst:.1e}")))
}

const SMALL_POISSON: &str = r#"{"id":"id","time":"time",
    "longitudinal":[{"response":"y1","family":"poisson","fixed":["1","time"],"random":["1"]}]}"#;

fn small_poisson() -> Result<(Model, Fit)> {
    let (long, _) = sim(
        r#"{"n_subjects":30,"seed":3,"visits":[0,1,2,3],
        "longitudinal":[{"family":"poisson","fixed":["1","time"],"beta":[1.0,0.2],"random":["1"]}],
        "re_cov":[[0.3]],"censoring":{"admin":10.0}}"#,
    )?;
    let model = build(SMALL_POISSON, Some(&long), None)?;
    let f = fit(&model, IntStrategy::Grid)?;
    Ok((model, f))
}

fn marginal_normalization() -> Result<(bool, String)> {
    let (_, f) = small_poisson()?;
    let mut worst = 0.0f64;
    for m in &f.marginals {
        let g = m.grid(2001);
        let area: f64 = g.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
        worst = worst.max((area - 1.0).abs());
    }
    Ok((worst < 1e-3, format!("max |integral - 1| {worst:.1e} over {} marginals", f.marginals.len())))
}

fn competing_fit() -> Result<(Model, Fit, Table)> {
    let (long, surv) = sim(
        r#"{"n_subjects":120,"seed":8,"visits":[0,1,2,3,4],
        "longitudinal":[{"family":"gaussian","fixed":["1","time"],"beta":[0.0,0.2],"random":["1"],"sigma":0.4}],
        "re_cov":[[0.3]],
        "survival":[{"baseline":"exponential","intercept":-2.0,"assoc":[{"marker":0,"kind":"CV","phi":[0.6]}]},
                    {"baseline":"weibull","shape":1.4,"intercept":-2.5}],
        "censoring":{"admin":6.0}}"#,
    )?;
    let config = r#"{"id":"id","time":"time",
        "longitudinal":[{"response":"y1","family":"gaussian","fixed":["1","time"],"random":["1"]}],
        "survival":[{"exit":"time","event":"event1","baseline":"exponential"},
                    {"exit":"time","event":"event2","baseline":"rw1","n_intervals":10}],
        "assoc":[["CV",""]],"control":{"int_strategy":"eb"}}"#;
    let model = build(config, Some(&long), Some(&surv))?;
    let f = fit(&model, IntStrategy::Eb)?;
    let ids = long.raw("id")?;
    let keep: Vec<usize> = (0..long.nrows()).filter(|&i| ids[i] == "1" || ids[i] == "2").collect();
    Ok((model, f, long.select_rows(&keep)))
}

fn survival_curves() -> Result<(bool, String)> {
    let (model, f, newdata) = competing_fit()?;
    let mut req = PredictRequest::new(8.0);
    req.survival = true;
    req.cif = true;
    req.n_sample = 40;
    req.n_sample_re = 10;
    req.return_samples = true;
    let p = predict(&model, &f, &newdata, &req)?;
    let draws = p.surv_samples.as_ref().ok_or_else(|| Error::Precondition("no samples".into()))?;
    let mut monotone = true;
    let mut bounded = true;
    let mut sum_gap = 0.0f64;
    let mut n_curves = 0usize;
    let ids: Vec<String> = {
        let mut v: Vec<String> = p.surv.iter().map(|r| r.id.clone()).collect();
        v.dedup();
        v
    };
    for id in &ids {
        let by_outcome: Vec<Vec<usize>> = model
            .spec
            .survival
            .iter()
            .map(|s| {
                let mut rows: Vec<usize> = (0..p.surv.len())
                    .filter(|&i| &p.surv[i].id == id && p.surv[i].outcome == s.event)
                    .collect();
                rows.sort_by(|&a, &b| p.surv[a].time.total_cmp(&p.surv[b].time));
                rows
            })
            .collect();
        let n_real = draws[by_outcome[0][0]].len();
        for r in 0..n_real {
            n_curves += 1;
            for rows in &by_outcome {
                for w in rows.windows(2) {
                    monotone &= draws[w[1]][r][1] <= draws[w[0]][r][1] + 1e-14;
                    monotone &= draws[w[1]][r][2] >= draws[w[0]][r][2] - 1e-14;
                }
                bounded &= draws[rows[0]][r][2] == 0.0;
            }
            for j in 0..by_outcome[0].len() {
                let s_all: f64 = by_outcome.iter().map(|o| draws[o[j]][r][1]).product();
                let total: f64 = by_outcome.iter().map(|o| draws[o[j]][r][2]).sum();
                bounded &= by_outcome.iter().all(|o| (0.0..=1.0).contains(&draws[o[j]][r][2]));
                bounded &= (0.0..=1.0).contains(&s_all) && total <= 1.0 + 1e-12;
                sum_gap = sum_gap.max((total - (1.0 - s_all)).abs());
            }
        }
    }
    Ok((
        monotone && bounded && sum_gap < 1e-10,
        format!("{n_curves} sampled curves; monotone {monotone}, bounds {bounded}, max |sum CIF - (1 - prod S)| {sum_gap:.1e}"),
    ))
}

fn zero_association() -> Result<(bool, String)> {
    let (long, surv) = sim(&joint_scenario(80, 5))?;
    let control = r#""control":{"int_strategy":"eb","tolerance":1e-10,
        "fix_hyper":{"res_logprec_L1":1.3862943611198906,"re_L1_logdiag_1":0.5108256237659907,"CV_L1_S1":0}}"#;
    let joint_cfg = format!(
        r#"{{"id":"id","time":"time",
        "longitudinal":[{{"response":"y1","family":"gaussian","fixed":["1","time"],"random":["1"]}}],
        "survival":[{{"exit":"time","event":"event","baseline":"exponential"}}],
        "assoc":["CV"],{control}}}"#
    );
    let long_cfg = format!(
        r#"{{"id":"id","time":"time",
        "longitudinal":[{{"response":"y1","family":"gaussian","fixed":["1","time"],"random":["1"]}}],{}}}"#,
        control.replace(r#","CV_L1_S1":0"#, "")
    );
    let surv_cfg = r#"{"id":"id","survival":[{"exit":"time","event":"event","baseline":"exponential"}],
        "control":{"int_strategy":"eb","tolerance":1e-10}}"#;
    let joint = build(&joint_cfg, Some(&long), Some(&surv))?;
    let lm = build(&long_cfg, Some(&long), None)?;
    let sm = build(surv_cfg, None, Some(&surv))?;
    let fj = fit(&joint, IntStrategy::Eb)?;
    let fl = fit(&lm, IntStrategy::Eb)?;
    let fs = fit(&sm, IntStrategy::Eb)?;
    let mut worst = 0.0f64;
    for (m, f) in [(&lm, &fl), (&sm, &fs)] {
        for (i, name) in m.layout.names.iter().enumerate() {
            let j = latent_index(&joint, name)?;
            worst = worst.max((f.marginals[i].mean() - fj.marginals[j].mean()).abs());
            worst = worst.max((f.marginals[i].sd() - fj.marginals[j].sd()).abs());
        }
    }
    Ok((worst < 1e-6, format!("max |joint - separate| {worst:.1e}")))
}

fn one_cause_cif() -> Result<(bool, String)> {
    let (long, surv) = sim(&joint_scenario(60, 12))?;
    let mut cfg: serde_json::Value = serde_json::from_str(JOINT_CONFIG)?;
    cfg["control"] = serde_json::json!({"int_strategy": "eb"});
    let model = build(&cfg.to_string(), Some(&long), Some(&surv))?;
    let f = fit(&model, IntStrategy::Eb)?;
    let ids = long.raw("id")?;
    let keep: Vec<usize> = (0..long.nrows()).filter(|&i| ids[i] == "3").collect();
    let mut req = PredictRequest::new(7.0);
    req.survival = true;
    req.cif = true;
    req.n_sample = 30;
    req.n_sample_re = 10;
    req.return_samples = true;
    let p = predict(&model, &f, &long.select_rows(&keep), &req)?;
    let draws = p.surv_samples.as_ref().ok_or_else(|| Error::Precondition("no samples".into()))?;
    let worst = draws
        .iter()
        .flatten()
        .map(|d| (d[2] - (1.0 - d[1])).abs())
        .fold(0.0f64, f64::max);
    Ok((worst < 1e-10, format!("max |CIF - (1 - S)| {worst:.1e}")))
}

fn determinism() -> Result<(bool, String)> {
    let (m1, f1) = small_poisson()?;
    let (_, f2) = small_poisson()?;
    let same_fit = f1.marginals == f2.marginals && f1.mlik_integration == f2.mlik_integration;
    let opts = SummaryOptions::default();
    let same_summary = summarize(&m1, &f1, &opts).to_json() == summarize(&m1, &f2, &opts).to_json();
    let newdata = m1.long.as_ref().expect("longitudinal").select_rows(&[0, 1, 2]);
    let req = PredictRequest::new(5.0);
    let p1 = predict(&m1, &f1, &newdata, &req)?;
    let p2 = predict(&m1, &f1, &newdata, &req)?;
    let same_pred = p1 == p2;
    Ok((
        same_fit && same_summary && same_pred,
        format!("fit {same_fit}, summary {same_summary}, prediction {same_pred}"),
    ))
}

fn properties() -> Vec<Check> {
    let mut rec = Recorder::new("properties");
    rec.run("likelihood derivatives vs finite differences", likelihood_derivatives);
    rec.run("marginal densities integrate to 1", marginal_normalization);
    rec.run("exposure conservation", exposure_conservation);
    rec.run("survival monotone, CIF bounded (2 risks)", survival_curves);
    rec.run("single cause CIF = 1 - S", one_cause_cif);
    rec.run("zero association factorizes", zero_association);
    rec.run("seeded determinism", determinism);
    rec.checks
}

// ---------------------------------------------------------------------------
// Scalability

const SCALE_SCENARIO: &str = r#"{"n_subjects":300,"seed":77,
    "visits":[0,0.5,1,2,3,4,5,6,7,8,9],
    "covariates":[{"kind":"binary","name":"drug","p":0.5},{"kind":"binary","name":"sex","p":0.5}],
    "time_functions":[{"name":"f1","knots":[1.0],"boundary":[0,10],"column":0},
                      {"name":"f2","knots":[1.0],"boundary":[0,10],"column":1}],
    "longitudinal":[
      {"name":"serBilir","family":"gaussian","fixed":["1","f1","f2"],"beta":[0.0,1.0,1.2],"random":["1","f1","f2"],"sigma":0.3},
      {"name":"platelets","family":"poisson","fixed":["1","time","drug","sex","time:drug","time:sex","drug:sex","time:drug:sex"],
       "beta":[5.0,-0.05,-0.1,0.05,0.01,0.0,0.02,0.0],"random":["1","time"]},
      {"name":"SGOT","family":"gaussian","fixed":["1","time"],"beta":[0.0,0.05],"random":["1"],"sigma":0.5},
      {"name":"albumin","family":"gaussian","fixed":["1","time"],"beta":[0.0,-0.1],"random":["1"],"sigma":0.5},
      {"name":"ascites","family":"binomial","fixed":["1","time"],"beta":[-3.0,0.2],"random":["1"]},
      {"name":"spiders","family":"binomial","fixed":["1","time"],"beta":[-1.0,0.1],"random":["1"]},
      {"name":"prothrombin","family":"gaussian","fixed":["1","time"],"beta":[0.0,0.1],"random":["1"],"sigma":0.5}],
    "re_cov":[[0.5,0,0,0,0,0,0,0,0,0],[0,0.3,0,0,0,0,0,0,0,0],[0,0,0.3,0,0,0,0,0,0,0],
              [0,0,0,0.1,0,0,0,0,0,0],[0,0,0,0,0.002,0,0,0,0,0],
              [0,0,0,0,0,0.5,0,0,0,0],[0,0,0,0,0,0,0.5,0,0,0],[0,0,0,0,0,0,0,1.0,0,0],
              [0,0,0,0,0,0,0,0,1.0,0],[0,0,0,0,0,0,0,0,0,0.5]],
    "survival":[
      {"event":"death","baseline":"exponential","intercept":-1.0,
       "assoc":[{"marker":0,"kind":"CV","phi":[0.5]},{"marker":1,"kind":"CV","phi":[-0.3]},
                {"marker":4,"kind":"SRE","phi":[0.3]},{"marker":6,"kind":"CS","phi":[0.5]}]},
      {"event":"tsp","baseline":"weibull","shape":1.2,"intercept":-4.5,
       "assoc":[{"marker":1,"kind":"CV","phi":[0.2]},{"marker":2,"kind":"CV","phi":[0.3]},
                {"marker":3,"kind":"SRE","phi":[-0.3]},{"marker":5,"kind":"CV_CS","phi":[0.3,0.2]}]}],
    "censoring":{"admin":10.0,"rate":0.02}}"#;

/// The seven-marker, two-risk model used for the scalability check.
pub const SCALE_CONFIG: &str = r#"{"id":"id","time":"time",
    "time_functions":[{"name":"f1","knots":[1.0],"column":0},{"name":"f2","knots":[1.0],"column":1}],
    "longitudinal":[
      {"response":"serBilir","family":"gaussian","fixed":["1","f1","f2"],"random":["1","f1","f2"]},
      {"response":"platelets","family":"poisson","fixed":["1","time","drug","sex","time:drug","time:sex","drug:sex","time:drug:sex"],"random":["1","time"]},
      {"response":"SGOT","family":"gaussian","fixed":["1","time"],"random":["1"]},
      {"response":"albumin","family":"gaussian","fixed":["1","time"],"random":["1"]},
      {"response":"ascites","family":"binomial","fixed":["1","time"],"random":["1"]},
      {"response":"spiders","family":"binomial","fixed":["1","time"],"random":["1"]},
      {"response":"prothrombin","family":"gaussian","fixed":["1","time"],"random":["1"]}],
    "survival":[{"exit":"time","event":"death","baseline":"rw2"},
                {"exit":"time","event":"tsp","baseline":"rw1"}],
    "assoc":[["CV",""],["CV","CV"],["","CV"],["","SRE"],["SRE",""],["","CV_CS"],["CS",""]],
    "cor_long":false,
    "control":{"int_strategy":"eb"}}"#;

pub fn scale_tables() -> Result<(Table, Table)> {
    sim(SCALE_SCENARIO)
}

fn scalability() -> Vec<Check> {
    let mut rec = Recorder::new("scalability");
    rec.run("7 markers, 2 risks, EB: finite, SPD, < 30 min", || {
        let start = Instant::now();
        let (long, surv) = scale_tables()?;
        let model = build(SCALE_CONFIG, Some(&long), Some(&surv))?;
        let f = fit(&model, IntStrategy::Eb)?;
        let s = summarize(&model, &f, &SummaryOptions::default());
        let secs = start.elapsed().as_secs_f64();
        let finite = s.sections.iter().flat_map(|x| &x.rows).all(|r| {
            [r.mean, r.sd, r.q025, r.q50, r.q975].iter().all(|v| v.is_finite())
        }) && s.criteria.dic.is_finite()
            && s.criteria.waic.is_finite();
        let spd = f.neg_hessian.clone().cholesky().is_some();
        Ok((
            finite && spd && secs < 1800.0,
            format!(
                "{} latent, {} hyperparameters, {} rows; finite {finite}, SPD Hessian {spd}, {secs:.1}s",
                model.n_latent(),
                model.hyper.n_free(),
                model.rows.len()
            ),
        ))
    });
    rec.checks
}
