//! Nested Laplace inference: Gaussian approximation of the latent field by
//! sparse Newton, quasi-Newton search for the hyperparameter mode, grid or
//! empirical-Bayes exploration, and mixture marginals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::assembly::Model;
use crate::error::{Error, Result};
use crate::spec::IntStrategy;
use crate::sparse::Factor;

/// Kriging correction onto the sum-to-zero constraints.
#[derive(Debug, Clone)]
pub struct ConstraintCorrection {
    /// Q*^{-1} a_j for every constraint row a_j.
    pub w: Vec<Vec<f64>>,
    /// (A Q*^{-1} A')^{-1}.
    pub m: DMatrix<f64>,
    pub log_det_s: f64,
}

impl ConstraintCorrection {
    fn new(model: &Model, factor: &Factor) -> Option<Self> {
        let cons = model.constraint_rows();
        if cons.is_empty() {
            return None;
        }
        let n = model.n_latent();
        let w: Vec<Vec<f64>> = cons
            .iter()
            .map(|r| {
                let mut a = vec![0.0; n];
                for i in r.clone() {
                    a[i] = 1.0;
                }
                factor.solve(&model.sym, &a)
            })
            .collect();
        let c = cons.len();
        let s = DMatrix::from_fn(c, c, |j, k| cons[j].clone().map(|i| w[k][i]).sum::<f64>());
        let chol = s.clone().cholesky()?;
        let log_det_s = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Some(ConstraintCorrection {
            w,
            m: chol.inverse(),
            log_det_s,
        })
    }

    /// x <- x - W M A x.
    fn apply(&self, model: &Model, x: &mut [f64]) {
        let ax = DVector::from_iterator(
            self.w.len(),
            model.constraint_rows().iter().map(|r| r.clone().map(|i| x[i]).sum::<f64>()),
        );
        let coef = &self.m * ax;
        for (j, wj) in self.w.iter().enumerate() {
            let cj = coef[j];
            if cj != 0.0 {
                for (xi, wi) in x.iter_mut().zip(wj) {
                    *xi -= cj * wi;
                }
            }
        }
    }

    fn variance_correction(&self, i: usize) -> f64 {
        let c = self.w.len();
        let mut acc = 0.0;
        for j in 0..c {
            for k in 0..c {
                acc += self.w[j][i] * self.m[(j, k)] * self.w[k][i];
            }
        }
        acc
    }
}

/// Gaussian approximation of p(u | omega, y) at its mode.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub omega: Vec<f64>,
    pub mode: Vec<f64>,
    pub factor: Factor,
    /// log|Q*|.
    pub log_det: f64,
    pub loglik: f64,
    /// Laplace approximation of log p(omega, y).
    pub log_post: f64,
    pub iterations: usize,
    /// Size of the last applied Newton step.
    pub last_step: f64,
    pub constraint: Option<ConstraintCorrection>,
}

impl GaussianApprox {
    /// Marginal variances of every latent element.
    pub fn variances(&self, model: &Model) -> Vec<f64> {
        let mut v = self.factor.inverse_diagonal(&model.sym);
        if let Some(c) = &self.constraint {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = (*vi - c.variance_correction(i)).max(0.0);
            }
        }
        v
    }

    /// One draw from N(mode, Q*^{-1}) restricted to the constraint set.
    pub fn sample(&self, model: &Model, rng: &mut impl Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..model.n_latent()).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.factor.sample_from(&model.sym, &z);
        if let Some(c) = &self.constraint {
            c.apply(model, &mut x);
        }
        for (xi, m) in x.iter_mut().zip(&self.mode) {
            *xi += m;
        }
        x
    }
}

struct Linearization {
    objective: f64,
    loglik: f64,
    grad: Vec<f64>,
    factor: Factor,
}

fn linearize(model: &Model, omega: &[f64], vals: &[f64], qp: &[f64], st: &crate::assembly::PriorState, mu: &[f64], u: &[f64]) -> Result<Linearization> {
    let n_rows = model.rows.len();
    let floor = model.spec.controls.w_floor;
    let mut d1 = vec![0.0; n_rows];
    let mut w = vec![0.0; n_rows];
    let mut ll = 0.0;
    for r in 0..n_rows {
        let eta = model.amap.row_eta(r, vals, u);
        let d = model.row_loglik(r, eta, omega);
        if !d.value.is_finite() {
            return Err(Error::NonFinite(format!("log-likelihood of row {r}")));
        }
        ll += d.value;
        d1[r] = d.d1;
        w[r] = (-d.d2).max(floor);
    }
    let dev: Vec<f64> = u.iter().zip(mu).map(|(a, b)| a - b).collect();
    let qd = model.prior_mul(st, &dev);
    let quad: f64 = dev.iter().zip(&qd).map(|(a, b)| a * b).sum();
    let mut grad: Vec<f64> = qd.iter().map(|v| -v).collect();
    model.amap.add_transpose(vals, &d1, &mut grad);
    let mut cx = qp.to_vec();
    model.amap.add_weighted_gram(vals, &w, &mut cx);
    let factor = model.sym.factor(&cx)?;
    Ok(Linearization {
        objective: ll - 0.5 * quad,
        loglik: ll,
        grad,
        factor,
    })
}

fn objective(model: &Model, omega: &[f64], vals: &[f64], st: &crate::assembly::PriorState, mu: &[f64], u: &[f64]) -> f64 {
    let mut ll = 0.0;
    for r in 0..model.rows.len() {
        ll += model.row_loglik(r, model.amap.row_eta(r, vals, u), omega).value;
    }
    let dev: Vec<f64> = u.iter().zip(mu).map(|(a, b)| a - b).collect();
    let qd = model.prior_mul(st, &dev);
    let quad: f64 = dev.iter().zip(&qd).map(|(a, b)| a * b).sum();
    if ll.is_finite() {
        ll - 0.5 * quad
    } else {
        f64::NEG_INFINITY
    }
}

/// Sparse Newton iterations for the conditional mode of u given omega.
pub fn gaussian_approx(model: &Model, omega: &[f64], u_init: Option<&[f64]>, tolerance: f64) -> Result<GaussianApprox> {
    let st = model.prior_state(omega)?;
    let vals = model.amap.values(omega);
    let qp = model.prior_values(&st);
    let mu = model.prior_mean();
    let mut u = match u_init {
        Some(u0) => u0.to_vec(),
        None => mu.clone(),
    };
    model.project_constraints(&mut u);
    let max_iter = model.spec.controls.max_newton;
    let mut iterations = 0;
    let last_step;
    let mut lin = linearize(model, omega, &vals, &qp, &st, &mu, &u)?;
    loop {
        let mut delta = lin.factor.solve(&model.sym, &lin.grad);
        let cc = ConstraintCorrection::new(model, &lin.factor);
        if let Some(c) = &cc {
            c.apply(model, &mut delta);
        }
        let size = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if !size.is_finite() {
            return Err(Error::NonFinite("Newton step".into()));
        }
        if size < tolerance {
            for (ui, d) in u.iter_mut().zip(&delta) {
                *ui += d;
            }
            last_step = size;
            lin = linearize(model, omega, &vals, &qp, &st, &mu, &u)?;
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence(format!(
                "inner Newton did not converge in {max_iter} iterations (last step {size:.3e})"
            )));
        }
        // step halving on the objective
        let f0 = lin.objective;
        let mut t = 1.0;
        let mut cand: Vec<f64>;
        loop {
            cand = u.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let f1 = objective(model, omega, &vals, &st, &mu, &cand);
            if f1 >= f0 - 1e-10 * f0.abs().max(1.0) || t < 1e-8 {
                break;
            }
            t *= 0.5;
        }
        u = cand;
        iterations += 1;
        lin = linearize(model, omega, &vals, &qp, &st, &mu, &u)?;
    }
    Ok(finish(model, omega, &st, u, lin, iterations, last_step))
}

/// The Gaussian approximation at a known conditional mode, without Newton
/// steps. Used to restore saved fits bit for bit.
pub fn approx_at(model: &Model, omega: &[f64], mode: &[f64]) -> Result<GaussianApprox> {
    let st = model.prior_state(omega)?;
    let vals = model.amap.values(omega);
    let qp = model.prior_values(&st);
    let lin = linearize(model, omega, &vals, &qp, &st, &model.prior_mean(), mode)?;
    Ok(finish(model, omega, &st, mode.to_vec(), lin, 0, 0.0))
}

fn finish(
    model: &Model,
    omega: &[f64],
    st: &crate::assembly::PriorState,
    u: Vec<f64>,
    lin: Linearization,
    iterations: usize,
    last_step: f64,
) -> GaussianApprox {
    let log_det = lin.factor.log_det(&model.sym);
    let constraint = ConstraintCorrection::new(model, &lin.factor);
    let cons_det = constraint.as_ref().map(|c| c.log_det_s).unwrap_or(0.0);
    let log_post = lin.objective + 0.5 * st.log_det - 0.5 * log_det - 0.5 * cons_det + model.log_prior_omega(omega);
    GaussianApprox {
        omega: omega.to_vec(),
        mode: u,
        factor: lin.factor,
        log_det,
        loglik: lin.loglik,
        log_post,
        iterations,
        last_step,
        constraint,
    }
}

/// Laplace approximation of log p(omega, y) at free hyperparameters `theta`.
pub fn log_post_omega(model: &Model, theta: &[f64], u_init: Option<&[f64]>) -> Result<f64> {
    let omega = model.hyper.expand(theta);
    Ok(gaussian_approx(model, &omega, u_init, model.spec.controls.tolerance)?.log_post)
}

/// Inner tolerance for finite-difference evaluations. Differences of
/// log p(omega|y) over a step h amplify its error by 1/h^2, and the Laplace
/// log-determinant is first-order sensitive to an unconverged mode.
fn fd_tolerance(model: &Model) -> f64 {
    model.spec.controls.tolerance * 1e-6
}

fn fd_log_post(model: &Model, theta: &[f64], u0: &[f64]) -> Result<f64> {
    Ok(gaussian_approx(model, &model.hyper.expand(theta), Some(u0), fd_tolerance(model))?.log_post)
}

/// Result of the outer optimization.
#[derive(Debug, Clone)]
pub struct OmegaMode {
    pub theta: Vec<f64>,
    pub approx: GaussianApprox,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn central_gradient(model: &Model, theta: &[f64], u0: &[f64], h: f64) -> Result<Vec<f64>> {
    let d = theta.len();
    let evals: Vec<Result<f64>> = (0..2 * d)
        .into_par_iter()
        .map(|k| {
            let mut x = theta.to_vec();
            x[k / 2] += if k % 2 == 0 { h } else { -h };
            fd_log_post(model, &x, u0)
        })
        .collect();
    let mut g = vec![0.0; d];
    for i in 0..d {
        let fp = evals[2 * i].as_ref().map_err(clone_err)?;
        let fm = evals[2 * i + 1].as_ref().map_err(clone_err)?;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::NotPositiveDefinite { pivot } => Error::NotPositiveDefinite { pivot: *pivot },
        Error::NonConvergence(s) => Error::NonConvergence(s.clone()),
        Error::NonFinite(s) => Error::NonFinite(s.clone()),
        Error::IndefiniteHessian => Error::IndefiniteHessian,
        other => Error::Precondition(other.to_string()),
    }
}

/// Quasi-Newton (BFGS) ascent of the Laplace log posterior with central
/// finite-difference gradients.
pub fn optimize_omega(model: &Model, init: &[f64]) -> Result<OmegaMode> {
    let c = &model.spec.controls;
    let tol = c.tolerance;
    let h = c.h;
    let d = init.len();
    let mut x = init.to_vec();
    let mut approx = gaussian_approx(model, &model.hyper.expand(&x), None, tol)?;
    if d == 0 {
        return Ok(OmegaMode {
            theta: x,
            approx,
            iterations: 0,
            grad_norm: 0.0,
        });
    }
    let mut f = -approx.log_post;
    let mut g: Vec<f64> = central_gradient(model, &x, &approx.mode, h)?.iter().map(|v| -v).collect();
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut first = true;
    for iter in 0..c.max_outer {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < 1e-3 {
            return Ok(OmegaMode {
                theta: x,
                approx,
                iterations: iter,
                grad_norm: gmax,
            });
        }
        let gv = DVector::from_vec(g.clone());
        let mut p = -(&hinv * &gv);
        if p.dot(&gv) >= 0.0 {
            hinv = DMatrix::identity(d, d);
            p = -gv.clone();
        }
        let pmax = p.amax();
        let cap = if first { 1.0 } else { 3.0 };
        if pmax > cap {
            p *= cap / pmax;
        }
        first = false;
        // backtracking line search with Armijo condition
        let slope = p.dot(&gv);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + t * b).collect();
            if let Ok(a) = gaussian_approx(model, &model.hyper.expand(&xn), Some(&approx.mode), tol) {
                let fnew = -a.log_post;
                if fnew.is_finite() && fnew <= f + 1e-4 * t * slope {
                    accepted = Some((xn, a, fnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, an, fnew)) = accepted else {
            // no further decrease possible at this gradient accuracy
            return Ok(OmegaMode {
                theta: x,
                approx,
                iterations: iter,
                grad_norm: gmax,
            });
        };
        let gn: Vec<f64> = central_gradient(model, &xn, &an.mode, h)?.iter().map(|v| -v).collect();
        let s = DVector::from_iterator(d, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if iter == 0 {
                let scale = sy / y.dot(&y);
                hinv = DMatrix::identity(d, d) * scale;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let a = &i - rho * &s * y.transpose();
            let b = &i - rho * &y * s.transpose();
            hinv = &a * &hinv * &b + rho * &s * s.transpose();
        }
        let small = (f - fnew).abs() < 1e-10 * (1.0 + f.abs()) && s.amax() < 1e-6;
        x = xn;
        approx = an;
        f = fnew;
        g = gn;
        if small {
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Ok(OmegaMode {
                theta: x,
                approx,
                iterations: iter + 1,
                grad_norm: gmax,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "hyperparameter search exceeded {} iterations",
        c.max_outer
    )))
}

/// Finite-difference Hessian of the negative log posterior at `theta`.
pub fn neg_hessian(model: &Model, theta: &[f64], approx: &GaussianApprox) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let h = model.spec.controls.h;
    let f0 = -fd_log_post(model, theta, &approx.mode)?;
    let mut jobs: Vec<(usize, usize, f64, f64)> = Vec::new();
    for i in 0..d {
        jobs.push((i, i, h, 0.0));
        jobs.push((i, i, -h, 0.0));
        for j in 0..i {
            for (a, b) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
                jobs.push((i, j, a, b));
            }
        }
    }
    let vals: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, j, a, b)| {
            let mut x = theta.to_vec();
            x[i] += a;
            if i != j {
                x[j] += b;
            }
            fd_log_post(model, &x, &approx.mode).map(|v| -v)
        })
        .collect();
    let mut map: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (job, v) in jobs.iter().zip(vals) {
        map.entry((job.0, job.1)).or_default().push(v.map_err(|e| clone_err(&e))?);
    }
    let mut hm = DMatrix::zeros(d, d);
    for i in 0..d {
        let v = &map[&(i, i)];
        hm[(i, i)] = (v[0] - 2.0 * f0 + v[1]) / (h * h);
        for j in 0..i {
            let v = &map[&(i, j)];
            let e = (v[0] - v[1] - v[2] + v[3]) / (4.0 * h * h);
            hm[(i, j)] = e;
            hm[(j, i)] = e;
        }
    }
    Ok(hm)
}

/// A point of the hyperparameter integration.
#[derive(Debug, Clone)]
pub struct IntegrationPoint {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub weight: f64,
    pub log_post: f64,
    pub approx: GaussianApprox,
}

/// Standardization of the hyperparameter space at the mode.
#[derive(Debug, Clone)]
pub struct ZMap {
    pub mode: Vec<f64>,
    /// theta = mode + transform * z.
    pub transform: DMatrix<f64>,
    pub log_det_transform: f64,
}

impl ZMap {
    pub fn new(mode: &[f64], neg_hess: &DMatrix<f64>) -> Result<Self> {
        let d = mode.len();
        if d == 0 {
            return Ok(ZMap {
                mode: vec![],
                transform: DMatrix::zeros(0, 0),
                log_det_transform: 0.0,
            });
        }
        let sym = (neg_hess + neg_hess.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::IndefiniteHessian);
        }
        let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let transform = &eig.eigenvectors * scale;
        let log_det_transform = -0.5 * eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
        Ok(ZMap {
            mode: mode.to_vec(),
            transform,
            log_det_transform,
        })
    }

    pub fn theta(&self, z: &[f64]) -> Vec<f64> {
        let zv = DVector::from_column_slice(z);
        let t = &self.transform * zv;
        self.mode.iter().zip(t.iter()).map(|(m, v)| m + v).collect()
    }

    /// Covariance of the Gaussian approximation, transform * transform'.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.transform * self.transform.transpose()
    }
}

/// Integration points for the chosen strategy.
pub fn explore_omega(model: &Model, mode: &OmegaMode, zmap: &ZMap, strategy: IntStrategy) -> Result<Vec<IntegrationPoint>> {
    let d = mode.theta.len();
    if strategy == IntStrategy::Eb || d == 0 {
        return Ok(vec![IntegrationPoint {
            theta: mode.theta.clone(),
            z: vec![0.0; d],
            weight: 1.0,
            log_post: mode.approx.log_post,
            approx: mode.approx.clone(),
        }]);
    }
    let c = &model.spec.controls;
    let dz = c.grid_dz;
    let drop = c.grid_drop;
    let top = mode.approx.log_post;
    let mut kept: BTreeMap<Vec<i64>, (f64, GaussianApprox)> = BTreeMap::new();
    let mut visited: BTreeSet<Vec<i64>> = BTreeSet::new();
    let origin = vec![0i64; d];
    kept.insert(origin.clone(), (top, mode.approx.clone()));
    visited.insert(origin.clone());
    let mut frontier: VecDeque<Vec<i64>> = VecDeque::from([origin]);
    while !frontier.is_empty() {
        let mut cands: BTreeSet<Vec<i64>> = BTreeSet::new();
        for p in frontier.drain(..) {
            for axis in 0..d {
                for step in [-1i64, 1] {
                    let mut q = p.clone();
                    q[axis] += step;
                    if visited.insert(q.clone()) {
                        cands.insert(q);
                    }
                }
            }
        }
        let cands: Vec<Vec<i64>> = cands.into_iter().collect();
        let evals: Vec<Result<GaussianApprox>> = cands
            .par_iter()
            .map(|q| {
                let z: Vec<f64> = q.iter().map(|&k| k as f64 * dz).collect();
                let th = zmap.theta(&z);
                gaussian_approx(model, &model.hyper.expand(&th), Some(&mode.approx.mode), c.tolerance)
            })
            .collect();
        for (q, a) in cands.into_iter().zip(evals) {
            // points where the inner problem breaks down are outside the support
            let Ok(a) = a else { continue };
            if top - a.log_post < drop {
                kept.insert(q.clone(), (a.log_post, a));
                frontier.push_back(q);
            }
        }
    }
    let lmax = kept.values().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = kept.values().map(|v| (v.0 - lmax).exp()).sum();
    Ok(kept
        .into_iter()
        .map(|(q, (lp, a))| {
            let z: Vec<f64> = q.iter().map(|&k| k as f64 * dz).collect();
            IntegrationPoint {
                theta: zmap.theta(&z),
                z,
                weight: (lp - lmax).exp() / total,
                log_post: lp,
                approx: a,
            }
        })
        .collect())
}

/// One-dimensional posterior as a mixture of Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMarginal {
    /// (weight, mean, sd).
    pub components: Vec<(f64, f64, f64)>,
}

impl PosteriorMarginal {
    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.0 * c.1).sum()
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        let v: f64 = self.components.iter().map(|c| c.0 * (c.2 * c.2 + c.1 * c.1)).sum::<f64>() - m * m;
        v.max(0.0).sqrt()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, m, s)| {
                if s > 0.0 {
                    w * Normal::new(m, s).expect("positive sd").cdf(x)
                } else if x >= m {
                    w
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .filter(|c| c.2 > 0.0)
            .map(|&(w, m, s)| {
                let z = (x - m) / s;
                w * (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let lo0 = self.components.iter().map(|c| c.1 - 10.0 * c.2).fold(f64::INFINITY, f64::min);
        let hi0 = self.components.iter().map(|c| c.1 + 10.0 * c.2).fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo0, hi0);
        if lo == hi {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Density on an equispaced grid covering the bulk of the mass.
    pub fn grid(&self, n: usize) -> Vec<(f64, f64)> {
        let lo = self.components.iter().map(|c| c.1 - 6.0 * c.2).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|c| c.1 + 6.0 * c.2).fold(f64::NEG_INFINITY, f64::max);
        let n = n.max(2);
        (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                (x, self.density(x))
            })
            .collect()
    }
}

/// Mixture marginals for every latent element.
pub fn latent_marginals(model: &Model, points: &[IntegrationPoint]) -> Vec<PosteriorMarginal> {
    let vars: Vec<Vec<f64>> = points.par_iter().map(|p| p.approx.variances(model)).collect();
    (0..model.n_latent())
        .map(|i| PosteriorMarginal {
            components: points
                .iter()
                .zip(&vars)
                .map(|(p, v)| (p.weight, p.approx.mode[i], v[i].sqrt()))
                .collect(),
        })
        .collect()
}

/// A completed fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub strategy: IntStrategy,
    pub mode: OmegaMode,
    pub neg_hessian: DMatrix<f64>,
    pub zmap: ZMap,
    pub points: Vec<IntegrationPoint>,
    pub marginals: Vec<PosteriorMarginal>,
    pub mlik_integration: f64,
    pub mlik_gaussian: f64,
    /// Grid spacing in z-space.
    pub dz: f64,
}

impl Fit {
    /// Posterior mean and covariance of the free hyperparameters. For the grid
    /// each point stands for a uniform cell in z-space.
    pub fn hyper_moments(&self) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.mode.theta.len();
        if d == 0 {
            return (vec![], DMatrix::zeros(0, 0));
        }
        if self.strategy == IntStrategy::Eb || self.points.len() == 1 {
            return (self.mode.theta.clone(), self.zmap.covariance());
        }
        let mut mean = vec![0.0; d];
        for p in &self.points {
            for i in 0..d {
                mean[i] += p.weight * p.theta[i];
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for p in &self.points {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += p.weight * (p.theta[i] - mean[i]) * (p.theta[j] - mean[j]);
                }
            }
        }
        let dz = self.cell_width();
        cov += self.zmap.covariance() * (dz * dz / 12.0);
        (mean, cov)
    }

    fn cell_width(&self) -> f64 {
        self.dz
    }

    /// Samples of the free hyperparameters: Gaussian at the mode for EB,
    /// a histogram draw over the grid cells otherwise.
    pub fn sample_hyper(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = self.mode.theta.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eb = self.strategy == IntStrategy::Eb || self.points.len() == 1;
        let dz = if eb { 0.0 } else { self.cell_width() };
        (0..n)
            .map(|_| {
                if d == 0 {
                    return vec![];
                }
                let (base, z): (Vec<f64>, Vec<f64>) = if eb {
                    (vec![0.0; d], (0..d).map(|_| rng.sample(StandardNormal)).collect())
                } else {
                    let h = pick(&self.points, rng.random::<f64>());
                    let p = &self.points[h];
                    (p.z.clone(), (0..d).map(|_| (rng.random::<f64>() - 0.5) * dz).collect())
                };
                let zz: Vec<f64> = base.iter().zip(&z).map(|(a, b)| a + b).collect();
                self.zmap.theta(&zz)
            })
            .collect()
    }

    /// Draws (point index, latent vector) pairs.
    pub fn sample_posterior(&self, model: &Model, n: usize, seed: u64) -> Vec<(usize, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.draw(model, &mut rng)).collect()
    }

    pub fn draw(&self, model: &Model, rng: &mut impl Rng) -> (usize, Vec<f64>) {
        let h = pick(&self.points, rng.random::<f64>());
        (h, self.points[h].approx.sample(model, rng))
    }

    /// Posterior mean of the full hyperparameter vector (fixed entries included).
    pub fn omega_mean(&self, model: &Model) -> Vec<f64> {
        model.hyper.expand(&self.hyper_moments().0)
    }
}

fn pick(points: &[IntegrationPoint], r: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        acc += p.weight;
        if r < acc {
            return i;
        }
    }
    points.len() - 1
}

/// Full pipeline: mode search, Hessian, exploration, marginals.
pub fn fit(model: &Model, strategy: IntStrategy) -> Result<Fit> {
    let init = model.hyper.initial_free();
    let mode = optimize_omega(model, &init)?;
    let d = mode.theta.len();
    let neg_hessian = if d > 0 {
        neg_hessian(model, &mode.theta, &mode.approx)?
    } else {
        DMatrix::zeros(0, 0)
    };
    let zmap = ZMap::new(&mode.theta, &neg_hessian)?;
    let points = explore_omega(model, &mode, &zmap, strategy)?;
    let marginals = latent_marginals(model, &points);
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mlik_gaussian = mode.approx.log_post + d as f64 * half_log_2pi + zmap.log_det_transform;
    let mlik_integration = if points.len() > 1 {
        let dz = model.spec.controls.grid_dz;
        let lmax = points.iter().map(|p| p.log_post).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = points.iter().map(|p| (p.log_post - lmax).exp()).sum();
        lmax + s.ln() + d as f64 * dz.ln() + zmap.log_det_transform
    } else {
        mlik_gaussian
    };
    Ok(Fit {
        strategy,
        mode,
        neg_hessian,
        zmap,
        points,
        marginals,
        mlik_integration,
        mlik_gaussian,
        dz: model.spec.controls.grid_dz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_moments() {
        let m = PosteriorMarginal {
            components: vec![(0.5, -1.0, 1.0), (0.5, 1.0, 1.0)],
        };
        assert!(m.mean().abs() < 1e-15);
        assert!((m.sd() - 2f64.sqrt()).abs() < 1e-12);
        assert!(m.quantile(0.5).abs() < 1e-9);
        let g = m.grid(2001);
        let area: f64 = g.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
        assert!((area - 1.0).abs() < 1e-3);
    }

    #[test]
    fn single_component_is_gaussian() {
        let m = PosteriorMarginal {
            components: vec![(1.0, 2.0, 0.5)],
        };
        assert!((m.quantile(0.975) - (2.0 + 0.5 * 1.959963984540054)).abs() < 1e-9);
    }
}
