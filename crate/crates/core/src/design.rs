//! Design rows for fixed and random effects, and time-basis functions that can
//! be evaluated at arbitrary times (hazard integration, slopes, prediction).

use std::collections::HashMap;
use std::sync::Arc;

use crate::assembly::LatentLayout;
use crate::data::Table;
use crate::error::{Error, Result};
use crate::spec::{ModelSpec, Term};

/// Values (or derivatives) of every cubic B-spline on `knots` at `x`.
/// `x` must lie in the closed knot range; the right end uses the last
/// nonempty span so the basis is continuous there.
fn bsplines(knots: &[f64], x: f64, deriv: usize) -> Vec<f64> {
    const ORDER: usize = 4;
    let nb = knots.len() - ORDER;
    let last = knots.len() - 1;
    let mut span = ORDER - 1;
    for i in (ORDER - 1)..(last - ORDER + 1) {
        if knots[i] <= x && knots[i] < knots[i + 1] {
            span = i;
        }
    }
    let low = 3 - deriv.min(3);
    // degree-0 indicators on a knots.len()-1 grid
    let mut vals = vec![0.0; knots.len() - 1];
    vals[span] = 1.0;
    for p in 1..=low {
        let mut next = vec![0.0; knots.len() - 1 - p];
        for (i, v) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            let d1 = knots[i + p] - knots[i];
            if d1 > 0.0 {
                acc += (x - knots[i]) / d1 * vals[i];
            }
            let d2 = knots[i + p + 1] - knots[i + 1];
            if d2 > 0.0 {
                acc += (knots[i + p + 1] - x) / d2 * vals[i + 1];
            }
            *v = acc;
        }
        vals = next;
    }
    for q in (low + 1)..=3 {
        let mut next = vec![0.0; knots.len() - 1 - q];
        for (i, v) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            let d1 = knots[i + q] - knots[i];
            if d1 > 0.0 {
                acc += vals[i] / d1;
            }
            let d2 = knots[i + q + 1] - knots[i + 1];
            if d2 > 0.0 {
                acc -= vals[i + 1] / d2;
            }
            *v = q as f64 * acc;
        }
        vals = next;
    }
    vals.truncate(nb);
    vals
}

/// Natural cubic spline basis without intercept, anchored at zero on the
/// lower boundary and linear beyond both boundaries. Column construction
/// follows the usual B-spline-plus-Householder recipe so coefficients are
/// comparable with other statistical software.
#[derive(Debug, Clone, PartialEq)]
pub struct NsBasis {
    knots: Vec<f64>,
    boundary: (f64, f64),
    /// Householder vectors (stored LINPACK style) and their leading entries.
    house: Vec<Vec<f64>>,
    qraux: Vec<f64>,
}

impl NsBasis {
    pub fn new(interior: &[f64], boundary: (f64, f64)) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Precondition(format!("invalid boundary ({lo}, {hi})")));
        }
        let mut inner = interior.to_vec();
        inner.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if inner.iter().any(|&k| !(k > lo && k < hi)) {
            return Err(Error::Precondition(format!(
                "interior knots {interior:?} must lie strictly inside ({lo}, {hi})"
            )));
        }
        let mut knots = vec![lo; 4];
        knots.extend(&inner);
        knots.extend([hi; 4]);
        let mut basis = NsBasis {
            knots,
            boundary,
            house: vec![],
            qraux: vec![],
        };
        // second derivatives at the boundaries, first column dropped
        let c_lo = bsplines(&basis.knots, lo, 2);
        let c_hi = bsplines(&basis.knots, hi, 2);
        let m = c_lo.len() - 1;
        let mut x: Vec<Vec<f64>> = vec![c_lo[1..].to_vec(), c_hi[1..].to_vec()];
        let mut qraux = vec![0.0; 2];
        for l in 0..2 {
            let nrm = x[l][l..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm == 0.0 {
                continue;
            }
            let nrmxl = if x[l][l] != 0.0 { nrm.copysign(x[l][l]) } else { nrm };
            for v in &mut x[l][l..] {
                *v /= nrmxl;
            }
            x[l][l] += 1.0;
            for j in (l + 1)..2 {
                let dot: f64 = (l..m).map(|i| x[l][i] * x[j][i]).sum();
                let t = -dot / x[l][l];
                for i in l..m {
                    let xl = x[l][i];
                    x[j][i] += t * xl;
                }
            }
            qraux[l] = x[l][l];
            x[l][l] = -nrmxl;
        }
        basis.house = x;
        basis.qraux = qraux;
        Ok(basis)
    }

    pub fn ncols(&self) -> usize {
        self.knots.len() - 4 - 3
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    fn project(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b[1..].to_vec();
        let m = y.len();
        for j in 0..2 {
            if self.qraux[j] == 0.0 {
                continue;
            }
            let mut v = self.house[j].clone();
            v[j] = self.qraux[j];
            let dot: f64 = (j..m).map(|i| v[i] * y[i]).sum();
            let t = -dot / v[j];
            for i in j..m {
                y[i] += t * v[i];
            }
        }
        y[2..].to_vec()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        let b = if x < lo || x > hi {
            let piv = if x < lo { lo } else { hi };
            let b0 = bsplines(&self.knots, piv, 0);
            let b1 = bsplines(&self.knots, piv, 1);
            b0.iter().zip(&b1).map(|(v, d)| v + (x - piv) * d).collect()
        } else {
            bsplines(&self.knots, x, 0)
        };
        self.project(&b)
    }

    pub fn deriv(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        let xe = x.clamp(lo, hi);
        self.project(&bsplines(&self.knots, xe, 1))
    }
}

/// A univariate function of time usable as a term factor.
#[derive(Debug, Clone)]
pub struct TimeFunction {
    pub name: String,
    pub basis: Arc<NsBasis>,
    pub column: usize,
}

impl TimeFunction {
    pub fn eval(&self, t: f64) -> f64 {
        self.basis.eval(t)[self.column]
    }

    pub fn deriv(&self, t: f64) -> f64 {
        self.basis.deriv(t)[self.column]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Factor {
    Column(String),
    Time,
    Func(usize),
}

/// A term resolved against the time variable and registered time functions.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledTerm {
    factors: Vec<Factor>,
    pub label: String,
}

impl CompiledTerm {
    pub fn is_constant_in_time(&self) -> bool {
        self.factors.iter().all(|f| matches!(f, Factor::Column(_)))
    }

    fn eval(&self, cov: &dyn Fn(&str) -> f64, t: f64, funcs: &[TimeFunction]) -> f64 {
        self.factors.iter().fold(1.0, |acc, f| {
            acc * match f {
                Factor::Column(c) => cov(c),
                Factor::Time => t,
                Factor::Func(i) => funcs[*i].eval(t),
            }
        })
    }
}

/// Time functions and compiled terms for a whole model.
#[derive(Debug, Clone)]
pub struct DesignContext {
    pub funcs: Vec<TimeFunction>,
    pub long_fixed: Vec<Vec<CompiledTerm>>,
    pub long_random: Vec<Vec<CompiledTerm>>,
    pub surv_fixed: Vec<Vec<CompiledTerm>>,
    /// Relative step for slope rows.
    pub cs_delta: f64,
}

impl DesignContext {
    pub fn new(spec: &ModelSpec, max_time: f64) -> Result<Self> {
        let mut funcs = Vec::new();
        let mut cache: HashMap<String, Arc<NsBasis>> = HashMap::new();
        for tf in &spec.time_functions {
            let bnd = tf.boundary.unwrap_or((0.0, max_time));
            let key = format!("{:?}{:?}", tf.knots, bnd);
            let basis = match cache.get(&key) {
                Some(b) => b.clone(),
                None => {
                    let b = Arc::new(NsBasis::new(&tf.knots, bnd)?);
                    cache.insert(key, b.clone());
                    b
                }
            };
            funcs.push(TimeFunction {
                name: tf.name.clone(),
                basis,
                column: tf.column,
            });
        }
        let compile = |terms: &[Term]| -> Vec<CompiledTerm> {
            terms
                .iter()
                .map(|t| CompiledTerm {
                    factors: t
                        .factors
                        .iter()
                        .map(|f| {
                            if Some(f) == spec.time_column.as_ref() {
                                Factor::Time
                            } else if let Some(i) = funcs.iter().position(|tf| &tf.name == f) {
                                Factor::Func(i)
                            } else {
                                Factor::Column(f.clone())
                            }
                        })
                        .collect(),
                    label: t.label(),
                })
                .collect()
        };
        let long_fixed = spec.longitudinal.iter().map(|l| compile(&l.fixed)).collect();
        let long_random = spec.longitudinal.iter().map(|l| compile(&l.random)).collect();
        let surv_fixed = spec
            .survival
            .iter()
            .map(|s| {
                let mut v = vec![CompiledTerm {
                    factors: vec![],
                    label: "Intercept".into(),
                }];
                v.extend(compile(&s.fixed));
                v
            })
            .collect();
        Ok(DesignContext {
            funcs,
            long_fixed,
            long_random,
            surv_fixed,
            cs_delta: spec.controls.cs_delta * max_time.max(f64::MIN_POSITIVE),
        })
    }

    pub fn long_fixed_values(&self, k: usize, cov: &dyn Fn(&str) -> f64, t: f64) -> Vec<f64> {
        self.long_fixed[k].iter().map(|c| c.eval(cov, t, &self.funcs)).collect()
    }

    pub fn long_random_values(&self, k: usize, cov: &dyn Fn(&str) -> f64, t: f64) -> Vec<f64> {
        self.long_random[k].iter().map(|c| c.eval(cov, t, &self.funcs)).collect()
    }

    pub fn surv_fixed_values(&self, s: usize, cov: &dyn Fn(&str) -> f64) -> Vec<f64> {
        self.surv_fixed[s].iter().map(|c| c.eval(cov, 0.0, &self.funcs)).collect()
    }
}

/// Sparse linear-predictor row: latent columns and coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub outcome: usize,
    pub subject: usize,
    pub time: f64,
}

impl DesignRow {
    fn push_nonzero(&mut self, col: usize, v: f64) {
        if v != 0.0 {
            self.cols.push(col);
            self.vals.push(v);
        }
    }

    pub fn dot(&self, u: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, &v)| u[c] * v).sum()
    }
}

/// Covariate values of one subject, carried forward from its longitudinal rows.
#[derive(Debug, Clone, Default)]
pub struct SubjectCovariates {
    /// (time, row index) sorted by time then row.
    pub visits: Vec<(f64, usize)>,
}

impl SubjectCovariates {
    /// Row to read covariates from at time `t`: the last visit at or before
    /// `t`, or the first visit when `t` precedes all visits.
    pub fn row_at(&self, t: f64) -> Option<usize> {
        let pos = self.visits.partition_point(|v| v.0 <= t);
        if pos == 0 {
            self.visits.first().map(|v| v.1)
        } else {
            Some(self.visits[pos - 1].1)
        }
    }
}

/// Closure reading a numeric column at a fixed table row (missing reads as 0;
/// validation rejects missing design covariates beforehand).
pub fn table_lookup<'a>(table: &'a Table, row: usize) -> impl Fn(&str) -> f64 + 'a {
    move |name: &str| {
        table
            .values(name)
            .ok()
            .and_then(|v| v[row])
            .unwrap_or(0.0)
    }
}

/// Predictor row of longitudinal model `k` for `subject` at time `t`,
/// with covariates supplied by `cov`.
pub fn eval_predictor_basis(
    ctx: &DesignContext,
    layout: &LatentLayout,
    k: usize,
    subject: usize,
    cov: &dyn Fn(&str) -> f64,
    t: f64,
) -> DesignRow {
    let mut row = DesignRow {
        cols: vec![],
        vals: vec![],
        outcome: k,
        subject,
        time: t,
    };
    let fixed = layout.long_fixed[k].clone();
    for (c, v) in fixed.zip(ctx.long_fixed_values(k, cov, t)) {
        row.push_nonzero(c, v);
    }
    for (j, v) in ctx.long_random_values(k, cov, t).into_iter().enumerate() {
        row.push_nonzero(layout.re_col(k, j, subject), v);
    }
    row
}

/// Random-effect part only (the subject's deviation from the population mean).
pub fn eval_random_basis(
    ctx: &DesignContext,
    layout: &LatentLayout,
    k: usize,
    subject: usize,
    cov: &dyn Fn(&str) -> f64,
    t: f64,
) -> DesignRow {
    let mut row = DesignRow {
        cols: vec![],
        vals: vec![],
        outcome: k,
        subject,
        time: t,
    };
    for (j, v) in ctx.long_random_values(k, cov, t).into_iter().enumerate() {
        row.push_nonzero(layout.re_col(k, j, subject), v);
    }
    row
}

/// Central-difference time derivative of a row produced by `f`.
pub fn derivative_row(f: impl Fn(f64) -> DesignRow, t: f64, delta: f64) -> DesignRow {
    let hi = f(t + delta);
    let lo = f(t - delta);
    let mut acc: Vec<(usize, f64)> = Vec::new();
    for (&c, &v) in hi.cols.iter().zip(&hi.vals) {
        acc.push((c, v));
    }
    for (&c, &v) in lo.cols.iter().zip(&lo.vals) {
        match acc.iter_mut().find(|e| e.0 == c) {
            Some(e) => e.1 -= v,
            None => acc.push((c, -v)),
        }
    }
    let mut row = DesignRow {
        cols: vec![],
        vals: vec![],
        outcome: hi.outcome,
        subject: hi.subject,
        time: t,
    };
    for (c, v) in acc {
        row.push_nonzero(c, v / (2.0 * delta));
    }
    row
}

/// One design row per longitudinal observation of model `k`.
pub fn build_rows(
    ctx: &DesignContext,
    layout: &LatentLayout,
    k: usize,
    spec: &ModelSpec,
    long: &Table,
    subject_of_row: &[usize],
) -> Result<Vec<DesignRow>> {
    let times: Vec<f64> = match &spec.time_column {
        Some(tc) => long.values(tc)?.iter().map(|v| v.unwrap_or(0.0)).collect(),
        None => vec![0.0; long.nrows()],
    };
    (0..long.nrows())
        .map(|i| {
            let s = subject_of_row[i];
            if s >= layout.n_subjects {
                return Err(Error::Data(format!("row {} references an unknown subject", i + 1)));
            }
            let cov = table_lookup(long, i);
            Ok(eval_predictor_basis(ctx, layout, k, s, &cov, times[i]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    // Reference values of ns(x, knots = 1, Boundary.knots = c(0, 14.3)).
    const ONE_KNOT: [(f64, [f64; 2]); 7] = [
        (0.0, [0.0, 0.0]),
        (0.5, [0.0792420308299245, -0.0407398471785024]),
        (1.0, [0.154613786148057, -0.0775741692748969]),
        (3.0, [0.384379461219613, -0.152536890098807]),
        (7.7, [0.543125865604751, 0.0559755557514649]),
        (14.3, [0.248076609683381, 0.871467553678527]),
        (16.0, [0.143347079861835, 1.11051220137592]),
    ];

    #[test]
    fn one_interior_knot_gives_two_columns() {
        let b = NsBasis::new(&[1.0], (0.0, 14.3)).unwrap();
        assert_eq!(b.ncols(), 2);
        for (x, want) in ONE_KNOT {
            assert!(close(&b.eval(x), &want, 1e-10), "x={x}: {:?}", b.eval(x));
        }
    }

    #[test]
    fn two_interior_knots_match_reference() {
        let b = NsBasis::new(&[2.0, 5.0], (0.0, 10.0)).unwrap();
        let refs: [(f64, [f64; 3]); 4] = [
            (-1.0, [0.128275427672056, -0.33351611194735, 0.205240684275293]),
            (1.5, [-0.137400814803012, 0.444992118487839, -0.273841303684825]),
            (9.0, [0.084106377834703, 0.369823417629771, 0.543570204535526]),
            (12.0, [-0.643410852713143, 0.472868217054261, 1.17054263565889]),
        ];
        for (x, want) in refs {
            assert!(close(&b.eval(x), &want, 1e-10), "x={x}: {:?}", b.eval(x));
        }
    }

    #[test]
    fn knots_outside_boundary_rejected() {
        assert!(NsBasis::new(&[20.0], (0.0, 14.3)).is_err());
        assert!(NsBasis::new(&[0.0], (0.0, 14.3)).is_err());
        assert!(NsBasis::new(&[1.0], (2.0, 1.0)).is_err());
    }

    #[test]
    fn linear_beyond_upper_boundary() {
        let b = NsBasis::new(&[1.0, 4.0], (0.0, 6.0)).unwrap();
        let (f0, f1, f2) = (b.eval(7.0), b.eval(8.0), b.eval(9.0));
        for j in 0..b.ncols() {
            assert!((f2[j] - 2.0 * f1[j] + f0[j]).abs() < 1e-12);
        }
    }

    /// Truncated-power natural spline: columns must lie in its span,
    /// restricted to functions vanishing at the lower boundary.
    #[test]
    fn spans_truncated_power_space() {
        use nalgebra::{DMatrix, DVector};
        let knots = [0.0, 1.5, 3.0, 8.0];
        let b = NsBasis::new(&knots[1..3], (0.0, 8.0)).unwrap();
        let kk = knots.len();
        let d = |k: usize, x: f64| {
            let c = |a: f64| (x - a).max(0.0).powi(3);
            (c(knots[k]) - c(knots[kk - 1])) / (knots[kk - 1] - knots[k])
        };
        let tp = |x: f64| -> Vec<f64> {
            let mut v = vec![x];
            for k in 0..kk - 2 {
                v.push(d(k, x) - d(kk - 2, x));
            }
            v
        };
        let xs: Vec<f64> = (0..60).map(|i| -1.0 + i as f64 * 0.17).collect();
        let tp0 = tp(0.0);
        let m = DMatrix::from_fn(xs.len(), tp0.len(), |i, j| tp(xs[i])[j] - tp0[j]);
        for col in 0..b.ncols() {
            let y = DVector::from_iterator(xs.len(), xs.iter().map(|&x| b.eval(x)[col]));
            let coef = m.clone().svd(true, true).solve(&y, 1e-12).unwrap();
            let resid = (&m * coef - &y).amax();
            assert!(resid < 1e-9, "column {col} residual {resid}");
        }
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let b = NsBasis::new(&[1.0, 4.0], (0.0, 6.0)).unwrap();
        for &x in &[0.3, 1.7, 3.9, 5.5, 7.0] {
            let h = 1e-6;
            let (p, m, d) = (b.eval(x + h), b.eval(x - h), b.deriv(x));
            for j in 0..b.ncols() {
                let fd = (p[j] - m[j]) / (2.0 * h);
                assert!((fd - d[j]).abs() <= 1e-6 * d[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn locf_lookup() {
        let s = SubjectCovariates {
            visits: vec![(0.0, 4), (1.0, 5), (2.5, 9)],
        };
        assert_eq!(s.row_at(-1.0), Some(4));
        assert_eq!(s.row_at(1.0), Some(5));
        assert_eq!(s.row_at(2.0), Some(5));
        assert_eq!(s.row_at(10.0), Some(9));
    }
}
