mod common;

use lgmjoint::archive::{load, save};
use lgmjoint::data::Table;
use lgmjoint::predict::{predict, PredictRequest};
use lgmjoint::summaries::{summarize, SummaryOptions};

use common::{lmm_fit, lmm_table};

#[test]
fn saved_fit_reloads_to_the_same_results() {
    let (model, f) = lmm_fit(&lmm_table(8));
    let dir = tempfile::tempdir().unwrap();
    let files = save(dir.path(), &model, &f).unwrap();
    assert!(files.iter().any(|n| n == "fit.json"));
    let (model2, f2) = load(dir.path()).unwrap();
    assert_eq!(model2.n_latent(), model.n_latent());
    assert_eq!(f2.marginals, f.marginals);
    assert_eq!(f2.mode.theta, f.mode.theta);
    let opts = SummaryOptions::default();
    assert_eq!(summarize(&model, &f, &opts).to_json(), summarize(&model2, &f2, &opts).to_json());
    let newdata = Table::from_csv_str("id,t,x,y\n1,0,1,1.0\n").unwrap();
    let mut req = PredictRequest::new(2.0);
    req.n_sample = 50;
    assert_eq!(predict(&model, &f, &newdata, &req).unwrap(), predict(&model2, &f2, &newdata, &req).unwrap());
}

#[test]
fn foreign_or_missing_archives_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("format.json"), "{err}");
    std::fs::write(dir.path().join("format.json"), r#"{"format":"other","version":1,"writer":"x"}"#).unwrap();
    assert!(load(dir.path()).is_err());
}
