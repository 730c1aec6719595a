#![allow(dead_code)]

//! Gaussian random-intercept fixture with hyperparameters held at known
//! values, and its exact latent posterior.

use lgmjoint::assembly::Model;
use lgmjoint::data::Table;
use lgmjoint::inference::{fit, Fit};
use lgmjoint::spec::{parse_config, IntStrategy};
use nalgebra::{DMatrix, DVector};

pub const TAU_E: f64 = 20.0;
pub const TAU_B: f64 = 4.0;

pub fn lmm_table(subjects: usize) -> Table {
    let mut rows = String::from("id,t,x,y\n");
    let mut state = 7u64;
    let mut unif = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64)
    };
    for i in 0..subjects {
        let b = unif() - 0.5;
        let x = if i % 2 == 0 { 1.0 } else { 0.0 };
        for j in 0..4 {
            let t = j as f64 * 0.5;
            let y = 1.0 + 0.3 * t - 0.4 * x + b + 0.3 * (unif() - 0.5);
            rows.push_str(&format!("{i},{t},{x},{y}\n"));
        }
    }
    Table::from_csv_str(&rows).unwrap()
}

pub fn lmm_config() -> String {
    format!(
        r#"{{"id":"id","time":"t",
        "longitudinal":[{{"response":"y","family":"gaussian","fixed":["1","t","x"],"random":["1"]}}],
        "control":{{"fix_hyper":{{"res_logprec_L1":{},"re_L1_logdiag_1":{}}}}}}}"#,
        TAU_E.ln(),
        0.5 * TAU_B.ln()
    )
}

pub fn lmm_fit(long: &Table) -> (Model, Fit) {
    let spec = parse_config(&lmm_config(), Some(long), None).unwrap();
    let model = Model::build(&spec, Some(long), None).unwrap();
    let f = fit(&model, IntStrategy::Eb).unwrap();
    (model, f)
}

pub struct Exact {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Dense GLS posterior of the latent vector (3 fixed effects, then one
/// random intercept per subject).
pub fn exact_posterior(model: &Model, f: &Fit) -> Exact {
    let n = model.n_latent();
    let vals = model.amap.values(&f.points[0].approx.omega);
    let nr = model.rows.len();
    let mut a = DMatrix::zeros(nr, n);
    for r in 0..nr {
        for p in model.amap.row_ptr[r]..model.amap.row_ptr[r + 1] {
            a[(r, model.amap.col[p] as usize)] += vals[p];
        }
    }
    let y = DVector::from_iterator(nr, model.rows.iter().map(|r| r.y));
    let mut qp = DMatrix::zeros(n, n);
    for i in 0..n {
        qp[(i, i)] = if i < 3 { 0.01 } else { TAU_B };
    }
    let q = a.transpose() * &a * TAU_E + qp;
    let cov = q.try_inverse().unwrap();
    let mean = &cov * a.transpose() * &y * TAU_E;
    Exact { a, y, mean, cov }
}
