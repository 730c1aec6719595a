//! Survival outcomes as Poisson pseudo-observations over follow-up intervals,
//! random-walk structure matrices and parametric baseline log-likelihoods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing interval boundaries starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutpoints(pub Vec<f64>);

impl Cutpoints {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("cutpoints must be strictly increasing".into()));
        }
        Ok(Cutpoints(points))
    }

    pub fn n_intervals(&self) -> usize {
        self.0.len() - 1
    }

    pub fn last(&self) -> f64 {
        *self.0.last().unwrap()
    }

    /// Interval index containing `t`, intervals being (c_{m}, c_{m+1}];
    /// times beyond the last cutpoint fall in the last interval.
    pub fn interval_of(&self, t: f64) -> usize {
        let pos = self.0.partition_point(|&c| c < t);
        pos.saturating_sub(1).min(self.n_intervals() - 1)
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.0.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

pub fn make_cutpoints(n_intervals: usize, max_time: f64) -> Result<Cutpoints> {
    if n_intervals == 0 {
        return Err(Error::Precondition("n_intervals must be at least 1".into()));
    }
    if !(max_time > 0.0 && max_time.is_finite()) {
        return Err(Error::Precondition(format!("max_time {max_time} must be positive")));
    }
    let step = max_time / n_intervals as f64;
    let mut c: Vec<f64> = (0..n_intervals).map(|i| i as f64 * step).collect();
    c.push(max_time);
    Cutpoints::new(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonPseudoRow {
    pub subject: usize,
    pub outcome: usize,
    pub interval: usize,
    pub y: f64,
    pub offset: f64,
    pub start: f64,
    pub end: f64,
    /// Time at which shared longitudinal terms are evaluated.
    pub eval_time: f64,
}

impl PoissonPseudoRow {
    pub fn exposure(&self) -> f64 {
        self.end - self.start
    }
}

/// Splits (entry, exit] over the cutpoints; the final interval absorbs any
/// follow-up beyond the last cutpoint.
pub fn decompose(
    entry: f64,
    exit: f64,
    event: bool,
    cuts: &Cutpoints,
    subject: usize,
    outcome: usize,
) -> Result<Vec<PoissonPseudoRow>> {
    if !(exit > entry) || entry < 0.0 || !exit.is_finite() {
        return Err(Error::Precondition(format!("exit {exit} must exceed entry {entry} >= 0")));
    }
    let c = &cuts.0;
    let m = cuts.n_intervals();
    let mut rows = Vec::new();
    for k in 0..m {
        let lo = c[k];
        let hi = if k + 1 == m { f64::INFINITY } else { c[k + 1] };
        let start = entry.max(lo);
        let end = exit.min(hi);
        if end > start {
            rows.push(PoissonPseudoRow {
                subject,
                outcome,
                interval: k,
                y: 0.0,
                offset: (end - start).ln(),
                start,
                end,
                eval_time: 0.5 * (start + end),
            });
        }
        if exit <= hi {
            break;
        }
    }
    if let Some(last) = rows.last_mut() {
        last.end = exit;
        last.y = if event { 1.0 } else { 0.0 };
    }
    Ok(rows)
}

/// Structure matrix D'D of order-`order` differences as (row, col, value)
/// triplets of the upper triangle, row <= col.
pub fn rw_precision(order: usize, m: usize) -> Result<Vec<(usize, usize, f64)>> {
    if !(order == 1 || order == 2) {
        return Err(Error::Precondition(format!("random-walk order {order} not supported")));
    }
    if m < order + 1 {
        return Err(Error::Precondition(format!(
            "order-{order} random walk needs at least {} intervals, got {m}",
            order + 1
        )));
    }
    let stencil: &[f64] = if order == 1 { &[-1.0, 1.0] } else { &[1.0, -2.0, 1.0] };
    let mut dense = vec![vec![0.0; m]; m];
    for start in 0..=(m - stencil.len()) {
        for (a, &va) in stencil.iter().enumerate() {
            for (b, &vb) in stencil.iter().enumerate() {
                dense[start + a][start + b] += va * vb;
            }
        }
    }
    let mut out = Vec::new();
    for (i, row) in dense.iter().enumerate() {
        for (j, &v) in row.iter().enumerate().skip(i) {
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    Ok(out)
}

pub fn rw_dense(order: usize, m: usize) -> Result<Vec<Vec<f64>>> {
    let mut d = vec![vec![0.0; m]; m];
    for (i, j, v) in rw_precision(order, m)? {
        d[i][j] = v;
        d[j][i] = v;
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParametricKind {
    Exponential,
    Weibull,
}

/// Log-likelihood contribution event*log h(exit) - [H(exit) - H(entry)] for
/// h(t) = exp(eta) (exponential) or shape * t^(shape-1) * exp(eta) (Weibull).
pub fn parametric_baseline_loglik(
    kind: ParametricKind,
    shape: f64,
    entry: f64,
    exit: f64,
    event: bool,
    eta: f64,
) -> Result<f64> {
    if !(exit > entry && entry >= 0.0) {
        return Err(Error::Precondition(format!("exit {exit} must exceed entry {entry} >= 0")));
    }
    let a = match kind {
        ParametricKind::Exponential => 1.0,
        ParametricKind::Weibull => {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(Error::Precondition(format!("nonpositive Weibull shape {shape}")));
            }
            shape
        }
    };
    let cum = eta.exp() * (exit.powf(a) - entry.powf(a));
    let log_h = a.ln() + (a - 1.0) * exit.ln() + eta;
    Ok(if event { log_h } else { 0.0 } - cum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_grid() {
        let c = make_cutpoints(15, 14.3).unwrap();
        assert_eq!(c.0.len(), 16);
        for w in c.0.windows(2) {
            assert!((w[1] - w[0] - 14.3 / 15.0).abs() < 1e-12);
        }
        assert_eq!(c.last(), 14.3);
        assert_eq!(make_cutpoints(1, 2.0).unwrap().0, vec![0.0, 2.0]);
        assert!(make_cutpoints(0, 2.0).is_err());
    }

    #[test]
    fn split_over_two_intervals() {
        let c = Cutpoints::new(vec![0.0, 1.0, 2.0]).unwrap();
        let r = decompose(0.0, 1.5, true, &c, 0, 0).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].interval, r[0].y), (0, 0.0));
        assert!(r[0].offset.abs() < 1e-15);
        assert_eq!((r[1].interval, r[1].y), (1, 1.0));
        assert!((r[1].offset - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn left_truncated_single_interval() {
        let c = Cutpoints::new(vec![0.0, 1.0]).unwrap();
        let r = decompose(0.25, 0.75, false, &c, 0, 0).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].offset - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(r[0].y, 0.0);
        assert_eq!(r[0].eval_time, 0.5);
    }

    #[test]
    fn exit_beyond_last_cut_extends_final_interval() {
        let c = Cutpoints::new(vec![0.0, 1.0, 2.0]).unwrap();
        let r = decompose(0.0, 3.0, true, &c, 0, 0).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].end, 3.0);
        assert!((r[1].offset - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn exit_before_entry_rejected() {
        let c = Cutpoints::new(vec![0.0, 1.0]).unwrap();
        assert!(decompose(0.5, 0.5, false, &c, 0, 0).is_err());
    }

    #[test]
    fn rw1_three() {
        let d = rw_dense(1, 3).unwrap();
        assert_eq!(d, vec![vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]);
        assert!(rw_precision(2, 2).is_err());
    }

    #[test]
    fn rw2_null_space() {
        let d = rw_dense(2, 4).unwrap();
        for v in [[1.0, 1.0, 1.0, 1.0], [1.0, 2.0, 3.0, 4.0]] {
            for row in &d {
                let s: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parametric_examples() {
        let e = parametric_baseline_loglik(ParametricKind::Exponential, 1.0, 0.0, 1.0, false, 0.0).unwrap();
        assert!((e + 1.0).abs() < 1e-15);
        let w = parametric_baseline_loglik(ParametricKind::Weibull, 2.0, 0.0, 1.0, true, 0.0).unwrap();
        assert!((w - (2f64.ln() - 1.0)).abs() < 1e-15);
        assert!(parametric_baseline_loglik(ParametricKind::Weibull, 0.0, 0.0, 1.0, true, 0.0).is_err());
    }
}
