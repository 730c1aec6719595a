use lgmjoint::assembly::Model;
use lgmjoint::data::Table;
use lgmjoint::inference::fit;
use lgmjoint::oracle::{
    cox_partial_fit, kaplan_meier, km_at, ks_pvalue, ks_statistic, metropolis, quadrature_posterior, simulate_joint,
    MetropolisOptions, SimScenario,
};
use lgmjoint::spec::{parse_config, IntStrategy};

fn model_from(cfg: &str, long: &Table) -> Model {
    let spec = parse_config(cfg, Some(long), None).unwrap();
    Model::build(&spec, Some(long), None).unwrap()
}

const POISSON_RI: &str =
    r#"{"id":"id","longitudinal":[{"response":"y","family":"poisson","fixed":["1"],"random":["1"]}]}"#;

fn poisson_three() -> Table {
    Table::from_csv_str("id,y\n1,0\n1,1\n1,0\n2,3\n2,5\n2,2\n3,1\n3,2\n3,4\n").unwrap()
}

#[test]
fn quadrature_is_converged_in_its_grid_sizes() {
    let long = poisson_three();
    let model = model_from(POISSON_RI, &long);
    let a = quadrature_posterior(&model, 41, 9).unwrap();
    let b = quadrature_posterior(&model, 81, 13).unwrap();
    assert!((a.hyper_mean[0] - b.hyper_mean[0]).abs() < 1e-4);
    assert!((a.hyper_sd[0] - b.hyper_sd[0]).abs() < 1e-4);
    for i in 0..4 {
        assert!((a.latent_mean[i] - b.latent_mean[i]).abs() < 1e-4);
        assert!((a.latent_sd[i] - b.latent_sd[i]).abs() < 1e-4);
    }
}

#[test]
fn refined_grid_fit_matches_quadrature() {
    let long = poisson_three();
    let q = quadrature_posterior(&model_from(POISSON_RI, &long), 41, 9).unwrap();
    let fine = format!(r#"{},"control":{{"grid_dz":0.25,"grid_drop":10}}}}"#, &POISSON_RI[..POISSON_RI.len() - 1]);
    let f = fit(&model_from(&fine, &long), IntStrategy::Grid).unwrap();
    let (m, c) = f.hyper_moments();
    assert!((m[0] / q.hyper_mean[0] - 1.0).abs() < 0.005, "{} vs {}", m[0], q.hyper_mean[0]);
    assert!((c[(0, 0)].sqrt() / q.hyper_sd[0] - 1.0).abs() < 0.01);
}

#[test]
fn metropolis_matches_quadrature() {
    let long = poisson_three();
    let model = model_from(POISSON_RI, &long);
    let q = quadrature_posterior(&model, 41, 9).unwrap();
    let mut opts = MetropolisOptions::new(60_000, 3);
    opts.burn_in = 10_000;
    let c = metropolis(&model, &opts).unwrap();
    for i in 0..4 {
        assert!((c.mean[i] - q.latent_mean[i]).abs() < 5.0 * c.mcse[i] + 0.02);
    }
    assert!((c.mean[4] - q.hyper_mean[0]).abs() < 5.0 * c.mcse[4] + 0.02);
}

#[test]
fn simulated_exponential_times_pass_ks() {
    let sc = SimScenario::from_json(
        r#"{"n_subjects":400,"seed":11,"visits":[0],
            "survival":[{"baseline":"exponential","intercept":-1.0}],
            "censoring":{"admin":1000.0}}"#,
    )
    .unwrap();
    let (_, surv) = simulate_joint(&sc).unwrap();
    let t: Vec<f64> = surv.values("time").unwrap().iter().map(|v| v.unwrap()).collect();
    let rate = (-1.0f64).exp();
    let d = ks_statistic(&t, |x| 1.0 - (-rate * x).exp());
    assert!(ks_pvalue(d, t.len()) > 0.01, "D = {d}");
}

#[test]
fn simulated_weibull_with_censoring_matches_km() {
    let sc = SimScenario::from_json(
        r#"{"n_subjects":2000,"seed":5,"visits":[0],
            "survival":[{"baseline":"weibull","shape":1.5,"intercept":-0.5}],
            "censoring":{"admin":3.0,"rate":0.1}}"#,
    )
    .unwrap();
    let (_, surv) = simulate_joint(&sc).unwrap();
    let t: Vec<f64> = surv.values("time").unwrap().iter().map(|v| v.unwrap()).collect();
    let e: Vec<bool> = surv.values("event").unwrap().iter().map(|v| v.unwrap() == 1.0).collect();
    let km = kaplan_meier(&t, &e);
    for &x in &[0.5f64, 1.0, 2.0] {
        let truth = (-(-0.5f64).exp() * x.powf(1.5)).exp();
        assert!((km_at(&km, x) - truth).abs() < 0.04, "{x}");
    }
}

#[test]
fn simulated_marker_has_the_requested_moments() {
    let sc = SimScenario::from_json(
        r#"{"n_subjects":3000,"seed":9,"visits":[0,1],
            "covariates":[{"kind":"binary","name":"x","p":0.5}],
            "longitudinal":[{"family":"gaussian","fixed":["1","time","x"],"beta":[1.0,-0.5,0.3],
                             "random":["1"],"sigma":0.5}],
            "re_cov":[[0.25]],
            "censoring":{"admin":10.0}}"#,
    )
    .unwrap();
    let (long, _) = simulate_joint(&sc).unwrap();
    let y = long.values("y1").unwrap();
    let t = long.values("time").unwrap();
    let x = long.values("x").unwrap();
    let mean_at = |tt: f64, xx: f64| {
        let v: Vec<f64> = (0..long.nrows())
            .filter(|&i| t[i] == Some(tt) && x[i] == Some(xx))
            .map(|i| y[i].unwrap())
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var)
    };
    let (m, var) = mean_at(1.0, 1.0);
    assert!((m - 0.8).abs() < 0.05);
    assert!((var - 0.5).abs() < 0.06);
    let (m, _) = mean_at(0.0, 0.0);
    assert!((m - 1.0).abs() < 0.05);
}

#[test]
fn cox_oracle_recovers_a_large_sample_effect() {
    let sc = SimScenario::from_json(
        r#"{"n_subjects":3000,"seed":2,"visits":[0],
            "covariates":[{"kind":"binary","name":"x","p":0.5}],
            "survival":[{"baseline":"weibull","shape":0.8,"intercept":0.0,"fixed":["x"],"gamma":[0.7]}],
            "censoring":{"admin":5.0,"rate":0.2}}"#,
    )
    .unwrap();
    let (_, surv) = simulate_joint(&sc).unwrap();
    let t: Vec<f64> = surv.values("time").unwrap().iter().map(|v| v.unwrap()).collect();
    let e: Vec<bool> = surv.values("event").unwrap().iter().map(|v| v.unwrap() == 1.0).collect();
    let x: Vec<Vec<f64>> = surv.values("x").unwrap().iter().map(|v| vec![v.unwrap()]).collect();
    let f = cox_partial_fit(&t, &e, &x).unwrap();
    assert!((f.beta[0] - 0.7).abs() < 3.0 * f.se[0], "{:?}", f);
}

#[test]
fn zero_association_gives_exact_exponential_times() {
    let sc = SimScenario::from_json(
        r#"{"n_subjects":5000,"seed":21,"visits":[0,1,2],
            "covariates":[{"kind":"normal","name":"z","mean":0.0,"sd":1.0}],
            "longitudinal":[{"family":"gaussian","fixed":["1","time"],"beta":[1.0,0.5],"random":["1"],"sigma":0.3}],
            "re_cov":[[0.5]],
            "survival":[{"baseline":"exponential","intercept":-1.0,"fixed":["z"],"gamma":[0.4],
                         "assoc":[{"marker":0,"kind":"CV","phi":[0.0]}]}],
            "censoring":{"admin":1e6}}"#,
    )
    .unwrap();
    let (_, surv) = simulate_joint(&sc).unwrap();
    let t = surv.values("time").unwrap();
    let z = surv.values("z").unwrap();
    // Probability integral transform with each subject's own rate.
    let u: Vec<f64> = (0..surv.nrows())
        .map(|i| 1.0 - (-(-1.0 + 0.4 * z[i].unwrap()).exp() * t[i].unwrap()).exp())
        .collect();
    let d = ks_statistic(&u, |x| x);
    assert!(ks_pvalue(d, u.len()) > 0.01, "D = {d}");
}

#[test]
fn cox_oracle_at_n_200() {
    let sc = SimScenario::from_json(
        r#"{"n_subjects":200,"seed":31,"visits":[0],
            "covariates":[{"kind":"binary","name":"x","p":0.5}],
            "survival":[{"baseline":"exponential","intercept":-1.0,"fixed":["x"],"gamma":[0.7]}],
            "censoring":{"admin":4.0,"rate":0.1}}"#,
    )
    .unwrap();
    let (_, surv) = simulate_joint(&sc).unwrap();
    let t: Vec<f64> = surv.values("time").unwrap().iter().map(|v| v.unwrap()).collect();
    let e: Vec<bool> = surv.values("event").unwrap().iter().map(|v| v.unwrap() == 1.0).collect();
    let x: Vec<Vec<f64>> = surv.values("x").unwrap().iter().map(|v| vec![v.unwrap()]).collect();
    let f = cox_partial_fit(&t, &e, &x).unwrap();
    assert!((f.beta[0] - 0.7).abs() < 3.0 * f.se[0], "{:?}", f);
}
