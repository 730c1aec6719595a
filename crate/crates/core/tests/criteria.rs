mod common;

use std::f64::consts::PI;

use lgmjoint::data::Table;
use lgmjoint::summaries::criteria;

use common::{exact_posterior, lmm_fit, lmm_table, TAU_E};

/// Closed-form (dic, p_d, waic, p_waic, lppd) for the Gaussian fixture: each
/// row's predictor is N(m, v) under the posterior.
fn exact_criteria(subjects: usize) -> ([f64; 5], lgmjoint::summaries::Criteria) {
    let (model, f) = lmm_fit(&lmm_table(subjects));
    let ex = exact_posterior(&model, &f);
    let m = &ex.a * &ex.mean;
    let v = (&ex.a * &ex.cov * ex.a.transpose()).diagonal();
    let (mut d_bar, mut d_hat, mut lppd, mut p_waic) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..ex.y.len() {
        let e = ex.y[r] - m[r];
        let c = (2.0 * PI / TAU_E).ln();
        d_bar += c + TAU_E * (e * e + v[r]);
        d_hat += c + TAU_E * e * e;
        let s2 = v[r] + 1.0 / TAU_E;
        lppd += -0.5 * (2.0 * PI * s2).ln() - 0.5 * e * e / s2;
        p_waic += 0.25 * TAU_E * TAU_E * (2.0 * v[r] * v[r] + 4.0 * e * e * v[r]);
    }
    let p_d = d_bar - d_hat;
    let got = criteria(&model, &f, 40_000, 3);
    ([d_bar + p_d, p_d, -2.0 * (lppd - p_waic), p_waic, lppd], got)
}

#[test]
fn dic_and_waic_match_closed_form() {
    let ([dic, p_d, waic, p_waic, lppd], got) = exact_criteria(12);
    assert!((got.p_d / p_d - 1.0).abs() < 0.05, "pD {} vs {p_d}", got.p_d);
    assert!((got.p_waic / p_waic - 1.0).abs() < 0.05, "pWAIC {} vs {p_waic}", got.p_waic);
    assert!((got.lppd - lppd).abs() < 0.05, "lppd {} vs {lppd}", got.lppd);
    assert!((got.dic - dic).abs() < 0.5, "DIC {} vs {dic}", got.dic);
    assert!((got.waic - waic).abs() < 0.5, "WAIC {} vs {waic}", got.waic);
}

#[test]
fn dic_roughly_doubles_on_duplicated_data() {
    let long = lmm_table(12);
    let csv = long.to_csv_string().unwrap();
    let mut twice = csv.clone();
    for line in csv.lines().skip(1) {
        let (id, rest) = line.split_once(',').unwrap();
        twice.push_str(&format!("1{id:0>3},{rest}\n"));
    }
    let doubled = Table::from_csv_str(&twice).unwrap();
    let one = {
        let (model, f) = lmm_fit(&long);
        criteria(&model, &f, 4000, 1)
    };
    let two = {
        let (model, f) = lmm_fit(&doubled);
        criteria(&model, &f, 4000, 1)
    };
    let ratio = two.dic / one.dic;
    assert!((ratio - 2.0).abs() < 0.1, "DIC {} vs {} (ratio {ratio})", two.dic, one.dic);
}
