use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCENARIO: &str = r#"{"n_subjects":40,"seed":3,"visits":[0,0.5,1,1.5,2,2.5,3],
 "longitudinal":[{"family":"gaussian","fixed":["1","time"],"beta":[1.0,-0.3],"random":["1"],"sigma":0.5}],
 "re_cov":[[0.36]],
 "survival":[{"baseline":"exponential","intercept":-1.5,"assoc":[{"marker":0,"kind":"CV","phi":[0.5]}]}],
 "censoring":{"admin":4.0,"rate":0.05}}"#;

const CONFIG: &str = r#"{"id":"id","time":"time",
 "longitudinal":[{"response":"y1","family":"gaussian","fixed":["1","time"],"random":["1"]}],
 "survival":[{"exit":"time","event":"event","baseline":"exponential"}],
 "assoc":["CV"]}"#;

fn lgmjoint(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgmjoint"))
        .args(args)
        .current_dir(dir)
        .env_remove("LGMJOINT_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Simulates a small data set and fits it into `fit/`.
fn fitted_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scenario.json"), SCENARIO).unwrap();
    fs::write(dir.path().join("config.json"), CONFIG).unwrap();
    let o = lgmjoint(&["simulate", "--scenario", "scenario.json", "--out", "sim"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = lgmjoint(
        &["--threads", "1", "fit", "--config", "config.json", "--long", "sim/long.csv", "--surv", "sim/surv.csv", "--out", "fit", "--seed", "5"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn read_csv(path: PathBuf) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn fit_writes_archive_summary_and_manifest() {
    let dir = fitted_dir();
    let fit = dir.path().join("fit");
    for f in ["summary.json", "summary.txt", "manifest.json", "spec.json"] {
        assert!(fit.join(f).exists(), "missing {f}");
    }
    let text = fs::read_to_string(fit.join("summary.txt")).unwrap();
    for heading in ["Longitudinal outcome (L1, gaussian)", "Survival outcome", "Association longitudinal - survival"] {
        assert!(text.contains(heading), "no heading {heading}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["threads"], 1);
}

#[test]
fn seeded_single_thread_reruns_are_byte_identical() {
    let dir = fitted_dir();
    let o = lgmjoint(
        &["--threads", "1", "fit", "--config", "config.json", "--long", "sim/long.csv", "--surv", "sim/surv.csv", "--out", "again", "--seed", "5"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(dir.path().join("fit/summary.json")).unwrap();
    let b = fs::read(dir.path().join("again/summary.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_data_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), CONFIG).unwrap();
    let o = lgmjoint(&["fit", "--config", "config.json", "--long", "absent.csv", "--out", "fit"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"), "{}", stderr(&o));
}

#[test]
fn schema_mismatch_exits_2() {
    let dir = fitted_dir();
    fs::write(dir.path().join("bad.json"), CONFIG.replace("\"y1\"", "\"nope\"")).unwrap();
    let o = lgmjoint(&["fit", "--config", "bad.json", "--long", "sim/long.csv", "--surv", "sim/surv.csv", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn predict_defaults_to_fifty_times_and_cif_is_one_minus_survival() {
    let dir = fitted_dir();
    fs::write(dir.path().join("new.csv"), "id,time,y1\n7,0,1.1\n7,0.5,0.9\n7,1,1.0\n").unwrap();
    let o = lgmjoint(
        &["predict", "--fit", "fit", "--newdata", "new.csv", "--out", "pred", "--horizon", "4", "--survival", "--cif", "--seed", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, long) = read_csv(dir.path().join("pred/predL.csv"));
    assert_eq!(long.len(), 50);
    let times: Vec<f64> = long.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(times[0], 0.0);
    assert!((times[49] - 4.0).abs() < 1e-12);
    let (header, surv) = read_csv(dir.path().join("pred/predS.csv"));
    let s = header.iter().position(|h| h == "Surv_Mean").unwrap();
    let c = header.iter().position(|h| h == "CIF_Mean").unwrap();
    assert!(!surv.is_empty());
    for r in &surv {
        let (sv, cv): (f64, f64) = (r[s].parse().unwrap(), r[c].parse().unwrap());
        assert!((sv + cv - 1.0).abs() < 1e-10, "S {sv} CIF {cv}");
    }
}

#[test]
fn horizon_before_last_observation_exits_2() {
    let dir = fitted_dir();
    fs::write(dir.path().join("new.csv"), "id,time,y1\n7,0,1.1\n7,1,1.0\n").unwrap();
    let o = lgmjoint(&["predict", "--fit", "fit", "--newdata", "new.csv", "--out", "p", "--horizon", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn summarize_with_transforms() {
    let dir = fitted_dir();
    let o = lgmjoint(&["summarize", "--fit", "fit", "--out", "s", "--sdcor", "--hr"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("s/summary.txt")).unwrap();
    assert!(text.contains("Random effects standard deviation"), "{text}");
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgmjoint(&["verify", "lmm-exactness"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[PASS]"));
    let o = lgmjoint(&["verify", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cox-equivalence"));
}

#[test]
fn pbc2_style_summary_headings() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let dir = tempfile::tempdir().unwrap();
    // The first 60 subjects keep the run short.
    let keep = |path: &str, out: &str| {
        let text = fs::read_to_string(data.join(path)).unwrap();
        let mut lines = text.lines();
        let mut kept = vec![lines.next().unwrap().to_string()];
        kept.extend(lines.filter(|l| l.split(',').next().unwrap().parse::<u32>().unwrap() <= 60).map(String::from));
        fs::write(dir.path().join(out), kept.join("\n") + "\n").unwrap();
    };
    keep("pbc2_long.csv", "long.csv");
    keep("pbc2_surv.csv", "surv.csv");
    fs::write(dir.path().join("config.json"), lgmjoint::verify::PBC2_CONFIG).unwrap();
    let o = lgmjoint(
        &["fit", "--config", "config.json", "--long", "long.csv", "--surv", "surv.csv", "--out", "fit", "--strategy", "eb"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("fit/summary.txt")).unwrap();
    let order = [
        "Longitudinal outcome (L1, lognormal)",
        "Longitudinal outcome (L2, poisson)",
        "Random effects variance-covariance",
        "Survival outcome",
        "Association longitudinal - survival",
    ];
    let mut at = 0;
    for h in order {
        let pos = text[at..].find(h).unwrap_or_else(|| panic!("heading {h} missing or out of order:\n{text}"));
        at += pos + h.len();
    }
}
