mod common;

use lgmjoint::data::Table;
use lgmjoint::predict::{impute_missing, predict, PredictRequest};

use common::{exact_posterior, lmm_fit, lmm_table, TAU_B, TAU_E};

fn request(horizon: f64, seed: u64) -> PredictRequest {
    let mut req = PredictRequest::new(horizon);
    req.n_sample = 2000;
    req.n_sample_re = 20;
    req.seed = seed;
    req
}

#[test]
fn conditional_prediction_matches_the_gaussian_oracle() {
    let (model, f) = lmm_fit(&lmm_table(12));
    let ex = exact_posterior(&model, &f);
    let beta = [ex.mean[0], ex.mean[1], ex.mean[2]];
    let obs = [(0.0, 1.4), (0.5, 1.7)];
    let x = 1.0;
    let newdata = Table::from_csv_str(&format!("id,t,x,y\n99,0,1,{}\n99,0.5,1,{}\n", obs[0].1, obs[1].1)).unwrap();
    let out = predict(&model, &f, &newdata, &request(2.0, 4)).unwrap();
    assert_eq!(out.long.len(), 50);
    // b | y, beta is Gaussian and linear in beta, so its mean follows from E[beta].
    let resid: f64 = obs.iter().map(|&(t, y)| y - beta[0] - beta[1] * t - beta[2] * x).sum();
    let b_hat = TAU_E * resid / (TAU_B + 2.0 * TAU_E);
    for p in &out.long {
        let expected = beta[0] + beta[1] * p.time + beta[2] * x + b_hat;
        let se = p.stats.sd / 2000f64.sqrt();
        assert!((p.stats.mean - expected).abs() < 3.0 * se, "t={}: {} vs {expected}", p.time, p.stats.mean);
    }
}

#[test]
fn subject_without_rows_gets_the_marginal_trajectory() {
    let (model, f) = lmm_fit(&lmm_table(12));
    let ex = exact_posterior(&model, &f);
    let newdata = Table::from_csv_str("id,t,x,y\n5,0,0,\n").unwrap();
    let out = predict(&model, &f, &newdata, &request(2.0, 9)).unwrap();
    for p in &out.long {
        let expected = ex.mean[0] + ex.mean[1] * p.time;
        let var_beta = ex.cov[(0, 0)] + 2.0 * p.time * ex.cov[(0, 1)] + p.time * p.time * ex.cov[(1, 1)];
        let sd = (var_beta + 1.0 / TAU_B).sqrt();
        assert!((p.stats.mean - expected).abs() < 3.0 * sd / 2000f64.sqrt(), "t={}", p.time);
        assert!((p.stats.sd / sd - 1.0).abs() < 0.1, "sd {} vs {sd}", p.stats.sd);
    }
}

#[test]
fn explicit_times_and_default_grid() {
    let (model, f) = lmm_fit(&lmm_table(6));
    let newdata = Table::from_csv_str("id,t,x,y\n1,0,1,1.0\n").unwrap();
    let mut req = request(3.0, 1);
    req.n_sample = 50;
    req.times = Some(vec![0.5, 1.0, 2.5]);
    let out = predict(&model, &f, &newdata, &req).unwrap();
    let times: Vec<f64> = out.long.iter().map(|p| p.time).collect();
    assert_eq!(times, vec![0.5, 1.0, 2.5]);
    req.times = None;
    let out = predict(&model, &f, &newdata, &req).unwrap();
    assert_eq!(out.long.len(), 50);
    assert!((out.long[1].time - 3.0 / 49.0).abs() < 1e-12);
}

#[test]
fn horizon_before_last_observation_is_rejected() {
    let (model, f) = lmm_fit(&lmm_table(6));
    let newdata = Table::from_csv_str("id,t,x,y\n1,0,1,1.0\n1,1.5,1,1.2\n").unwrap();
    let err = predict(&model, &f, &newdata, &request(1.0, 1)).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn same_seed_same_prediction() {
    let (model, f) = lmm_fit(&lmm_table(6));
    let newdata = Table::from_csv_str("id,t,x,y\n1,0,1,1.0\n").unwrap();
    let mut req = request(2.0, 11);
    req.n_sample = 100;
    let a = predict(&model, &f, &newdata, &req).unwrap();
    let b = predict(&model, &f, &newdata, &req).unwrap();
    assert_eq!(a, b);
}

#[test]
fn imputation_keeps_observations_and_uses_the_posterior_mean() {
    let long = lmm_table(8);
    let mut csv = long.to_csv_string().unwrap();
    // Drop the response on two rows.
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    for i in [3usize, 10] {
        let (head, _) = lines[i].rsplit_once(',').unwrap();
        lines[i] = format!("{head},");
    }
    csv = lines.join("\n") + "\n";
    let holed = Table::from_csv_str(&csv).unwrap();
    let (model, f) = lmm_fit(&holed);
    let ex = exact_posterior(&model, &f);
    let imputed = impute_missing(&model, &f, false, 200, 1).unwrap();
    let before = holed.values("y").unwrap();
    let after = imputed.values("y").unwrap();
    let t = holed.values("t").unwrap();
    let x = holed.values("x").unwrap();
    let ids = holed.values("id").unwrap();
    for r in 0..holed.nrows() {
        match before[r] {
            Some(y) => assert_eq!(after[r], Some(y)),
            None => {
                let subject = ids[r].unwrap() as usize;
                let expected = ex.mean[0] + ex.mean[1] * t[r].unwrap() + ex.mean[2] * x[r].unwrap() + ex.mean[3 + subject];
                assert!((after[r].unwrap() - expected).abs() < 1e-6, "row {r}");
            }
        }
    }
}
