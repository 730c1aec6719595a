//! Independent reference machinery used to check the engine: a componentwise
//! Metropolis sampler and an adaptive Gauss-Hermite quadrature over the exact
//! posterior, a Breslow Cox fitter, a joint-data simulator, and the
//! Kolmogorov-Smirnov and Kaplan-Meier estimators used with it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::Model;
use crate::data::Table;
use crate::error::{Error, Result};
use crate::inference::{gaussian_approx, neg_hessian, optimize_omega};
use crate::likelihoods::{logistic, Family};
use crate::design::NsBasis;
use crate::spec::{AssociationKind, Term, TimeFunctionSpec};

// ---------------------------------------------------------------------------
// Metropolis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetropolisOptions {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in sweep; 0 keeps none.
    pub thin: usize,
    pub seed: u64,
    /// Proposal scales for the latent field followed by the free hyperparameters.
    pub scales: Option<Vec<f64>>,
    /// Starting point: free hyperparameters and latent field.
    pub init: Option<(Vec<f64>, Vec<f64>)>,
    pub adapt: bool,
}

impl MetropolisOptions {
    pub fn new(n_iter: usize, seed: u64) -> Self {
        MetropolisOptions {
            n_iter,
            burn_in: n_iter / 5,
            thin: 0,
            seed,
            scales: None,
            init: None,
            adapt: true,
        }
    }
}

/// Post-burn-in summaries of a chain over (u, free hyperparameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub n_kept: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Batch-means Monte Carlo standard errors.
    pub mcse: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub scales: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub last: Vec<f64>,
}

enum PriorKind {
    Fixed { mean: f64, prec: f64 },
    Re { group: usize, start: usize, pos: usize },
}

/// Componentwise random-walk Metropolis on the exact unnormalized posterior.
pub fn metropolis(model: &Model, opts: &MetropolisOptions) -> Result<Chain> {
    if opts.n_iter == 0 {
        return Err(Error::Precondition("n_iter must be at least 1".into()));
    }
    if !model.constraints.is_empty() {
        return Err(Error::Precondition("the sampler does not handle linearly constrained models".into()));
    }
    let n = model.n_latent();
    let nh = model.hyper.n_free();
    let dim = n + nh;
    let mut kind: Vec<Option<PriorKind>> = (0..n).map(|_| None).collect();
    for &(i, mean, prec) in &model.prior.fixed {
        kind[i] = Some(PriorKind::Fixed { mean, prec });
    }
    for (g, grp) in model.layout.groups.iter().enumerate() {
        for s in 0..model.layout.n_subjects {
            let b = grp.block(s);
            for pos in 0..grp.dim {
                kind[b.start + pos] = Some(PriorKind::Re {
                    group: g,
                    start: b.start,
                    pos,
                });
            }
        }
    }
    let kind: Vec<PriorKind> = kind
        .into_iter()
        .enumerate()
        .map(|(i, k)| k.ok_or_else(|| Error::Precondition(format!("latent {i} has no supported prior"))))
        .collect::<Result<_>>()?;
    // column -> entries of the predictor map
    let mut col_entries: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for r in 0..model.amap.n_rows() {
        for p in model.amap.row_ptr[r]..model.amap.row_ptr[r + 1] {
            col_entries[model.amap.col[p] as usize].push((r, p));
        }
    }

    let (mut theta, mut u) = match &opts.init {
        Some((t, u)) => (t.clone(), u.clone()),
        None => (model.hyper.initial_free(), model.prior_mean()),
    };
    if theta.len() != nh || u.len() != n {
        return Err(Error::Precondition("initial state has the wrong dimension".into()));
    }
    let mut scales = opts.scales.clone().unwrap_or_else(|| vec![0.1; dim]);
    if scales.len() != dim {
        return Err(Error::Precondition("scale vector has the wrong dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut omega = model.hyper.expand(&theta);
    let mut vals = model.amap.values(&omega);
    let mut st = model.prior_state(&omega)?;
    let mut eta = model.amap.eta(&vals, &u);
    let mut current = model.log_joint(&omega, &u)?;

    let mut accepts = vec![0usize; dim];
    let mut window = vec![0usize; dim];
    let mut window_len = 0usize;
    let kept_total = opts.n_iter.saturating_sub(opts.burn_in);
    let n_batches = 50.min(kept_total.max(1));
    let batch_len = (kept_total / n_batches).max(1);
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut batch_sum = vec![0.0; dim];
    let mut batch_means: Vec<Vec<f64>> = Vec::new();
    let mut in_batch = 0usize;
    let mut n_kept = 0usize;
    let mut samples = Vec::new();
    let mut row_delta: Vec<(usize, f64)> = Vec::new();

    for it in 0..opts.n_iter {
        for i in 0..n {
            let step = scales[i] * rng.sample::<f64, _>(StandardNormal);
            // per-row change of the predictor
            row_delta.clear();
            for &(r, p) in &col_entries[i] {
                let c = vals[p] * step;
                match row_delta.last_mut() {
                    Some(last) if last.0 == r => last.1 += c,
                    _ => row_delta.push((r, c)),
                }
            }
            let mut delta = 0.0;
            for &(r, d) in &row_delta {
                delta += model.row_loglik(r, eta[r] + d, &omega).value - model.row_loglik(r, eta[r], &omega).value;
            }
            delta += match kind[i] {
                PriorKind::Fixed { mean, prec } => {
                    let a = u[i] - mean;
                    -prec * a * step - 0.5 * prec * step * step
                }
                PriorKind::Re { group, start, pos } => {
                    let p = &st.re_prec[group];
                    let pb: f64 = (0..p.nrows()).map(|j| p[(pos, j)] * u[start + j]).sum();
                    -pb * step - 0.5 * p[(pos, pos)] * step * step
                }
            };
            if delta.is_finite() && (delta >= 0.0 || rng.random::<f64>().ln() < delta) {
                u[i] += step;
                for &(r, d) in &row_delta {
                    eta[r] += d;
                }
                current += delta;
                accepts[i] += 1;
                window[i] += 1;
            }
        }
        for j in 0..nh {
            let mut prop = theta.clone();
            prop[j] += scales[n + j] * rng.sample::<f64, _>(StandardNormal);
            let pomega = model.hyper.expand(&prop);
            let cand = match model.log_joint(&pomega, &u) {
                Ok(v) if v.is_finite() => v,
                _ => f64::NEG_INFINITY,
            };
            let delta = cand - current;
            if delta >= 0.0 || rng.random::<f64>().ln() < delta {
                theta = prop;
                omega = pomega;
                vals = model.amap.values(&omega);
                st = model.prior_state(&omega)?;
                eta = model.amap.eta(&vals, &u);
                current = cand;
                accepts[n + j] += 1;
                window[n + j] += 1;
            }
        }
        window_len += 1;
        if opts.adapt && it < opts.burn_in && window_len == 50 {
            for c in 0..dim {
                let rate = window[c] as f64 / window_len as f64;
                if rate < 0.2 {
                    scales[c] *= 0.7;
                } else if rate > 0.4 {
                    scales[c] *= 1.4;
                }
                window[c] = 0;
            }
            window_len = 0;
        }
        if it == opts.burn_in.saturating_sub(1) {
            accepts.iter_mut().for_each(|a| *a = 0);
            // refresh the running value to avoid drift from accumulated deltas
            current = model.log_joint(&omega, &u)?;
        }
        if it >= opts.burn_in {
            n_kept += 1;
            let state = u.iter().chain(theta.iter());
            for (c, &x) in state.enumerate() {
                let d = x - mean[c];
                mean[c] += d / n_kept as f64;
                m2[c] += d * (x - mean[c]);
                batch_sum[c] += x;
            }
            in_batch += 1;
            if in_batch == batch_len {
                batch_means.push(batch_sum.iter().map(|s| s / batch_len as f64).collect());
                batch_sum.iter_mut().for_each(|s| *s = 0.0);
                in_batch = 0;
            }
            if opts.thin > 0 && (it - opts.burn_in).is_multiple_of(opts.thin) {
                samples.push(u.iter().chain(theta.iter()).copied().collect());
            }
        }
    }
    let sd: Vec<f64> = m2.iter().map(|v| (v / (n_kept.max(2) - 1) as f64).sqrt()).collect();
    let nb = batch_means.len();
    let mcse = (0..dim)
        .map(|c| {
            if nb < 2 {
                return f64::NAN;
            }
            let bm: f64 = batch_means.iter().map(|b| b[c]).sum::<f64>() / nb as f64;
            let v: f64 = batch_means.iter().map(|b| (b[c] - bm) * (b[c] - bm)).sum::<f64>() / (nb - 1) as f64;
            (v / nb as f64).sqrt()
        })
        .collect();
    let denom = n_kept.max(1) as f64;
    Ok(Chain {
        n_kept,
        mean,
        sd,
        mcse,
        acceptance: accepts.iter().map(|&a| a as f64 / denom).collect(),
        scales,
        samples,
        last: u.iter().chain(theta.iter()).copied().collect(),
    })
}

// ---------------------------------------------------------------------------
// Quadrature

/// Gauss-Hermite nodes and weights for the weight function exp(-x^2).
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(m, m);
    for i in 1..m {
        let b = (i as f64 / 2.0).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSummary {
    pub hyper_mean: Vec<f64>,
    pub hyper_sd: Vec<f64>,
    pub latent_mean: Vec<f64>,
    pub latent_sd: Vec<f64>,
    pub log_evidence: f64,
    pub hyper_grid: Vec<Vec<f64>>,
    pub hyper_log_density: Vec<f64>,
}

struct LatentIntegral {
    log_value: f64,
    mean: Vec<f64>,
    second: Vec<f64>,
}

/// log of the integral of exp(log_joint(omega, u)) over u by adaptive
/// Gauss-Hermite quadrature centred at the conditional mode.
fn integrate_latent(model: &Model, omega: &[f64], nodes: &(Vec<f64>, Vec<f64>), warm: Option<&[f64]>) -> Result<LatentIntegral> {
    let n = model.n_latent();
    let approx = gaussian_approx(model, omega, warm, 1e-10)?;
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = approx.factor.solve(&model.sym, &e);
        for i in 0..n {
            cov[(i, j)] = col[i];
        }
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    let l = cov
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
        .l();
    let jac = l * std::f64::consts::SQRT_2;
    let log_det_j: f64 = jac.diagonal().iter().map(|v| v.ln()).sum();
    let (x, w) = nodes;
    let m = x.len();
    let total = m.pow(n as u32);
    let mut logs = Vec::with_capacity(total);
    let mut pts = Vec::with_capacity(total);
    let mode = DVector::from_column_slice(&approx.mode);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let z = DVector::from_iterator(n, idx.iter().map(|&i| x[i]));
        let u = &mode + &jac * &z;
        let lw: f64 = idx.iter().map(|&i| w[i].ln() + x[i] * x[i]).sum();
        let lj = model.log_joint(omega, u.as_slice())?;
        logs.push(lw + lj);
        pts.push(u);
        for d in 0..n {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
        }
    }
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = ws.iter().sum();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for (p, wt) in pts.iter().zip(&ws) {
        for i in 0..n {
            mean[i] += wt * p[i] / s;
            second[i] += wt * p[i] * p[i] / s;
        }
    }
    Ok(LatentIntegral {
        log_value: mx + s.ln() + log_det_j,
        mean,
        second,
    })
}

/// Dense-grid posterior of a tiny model: tensor trapezoid over at most two
/// free hyperparameters, adaptive Gauss-Hermite over at most five latent
/// elements.
pub fn quadrature_posterior(model: &Model, n_hyper_grid: usize, n_gh: usize) -> Result<QuadratureSummary> {
    let n = model.n_latent();
    let d = model.hyper.n_free();
    if n > 5 || d > 2 {
        return Err(Error::Precondition(format!(
            "quadrature supports at most 5 latent and 2 hyperparameters, got {n} and {d}"
        )));
    }
    if !model.constraints.is_empty() {
        return Err(Error::Precondition("quadrature does not handle linearly constrained models".into()));
    }
    let nodes = gauss_hermite(n_gh.max(2));
    if d == 0 {
        let omega = model.hyper.expand(&[]);
        let li = integrate_latent(model, &omega, &nodes, None)?;
        return Ok(QuadratureSummary {
            hyper_mean: vec![],
            hyper_sd: vec![],
            latent_sd: li.mean.iter().zip(&li.second).map(|(m, s)| (s - m * m).max(0.0).sqrt()).collect(),
            latent_mean: li.mean,
            log_evidence: li.log_value,
            hyper_grid: vec![],
            hyper_log_density: vec![],
        });
    }
    let mode = optimize_omega(model, &model.hyper.initial_free())?;
    let h = neg_hessian(model, &mode.theta, &mode.approx)?;
    let sd0: Vec<f64> = match h.clone().try_inverse() {
        Some(c) => (0..d).map(|i| c[(i, i)].max(1e-4).sqrt()).collect(),
        None => vec![1.0; d],
    };
    let ng = n_hyper_grid.max(3);
    let mut half = vec![8.0; d];
    for _ in 0..10 {
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let lo = mode.theta[i] - half[i] * sd0[i];
                let hi = mode.theta[i] + half[i] * sd0[i];
                (0..ng).map(|k| lo + (hi - lo) * k as f64 / (ng - 1) as f64).collect()
            })
            .collect();
        let grid: Vec<Vec<f64>> = if d == 1 {
            axes[0].iter().map(|&a| vec![a]).collect()
        } else {
            axes[0].iter().flat_map(|&a| axes[1].iter().map(move |&b| vec![a, b])).collect()
        };
        let warm = mode.approx.mode.clone();
        let vals: Vec<Result<LatentIntegral>> = grid
            .par_iter()
            .map(|t| integrate_latent(model, &model.hyper.expand(t), &nodes, Some(&warm)))
            .collect();
        let mut logs = Vec::with_capacity(grid.len());
        let mut ints = Vec::with_capacity(grid.len());
        for v in vals {
            match v {
                Ok(li) => {
                    logs.push(li.log_value);
                    ints.push(Some(li));
                }
                Err(_) => {
                    logs.push(f64::NEG_INFINITY);
                    ints.push(None);
                }
            }
        }
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // widen until every edge of the box is negligible
        let on_edge = |k: usize, axis: usize| -> bool {
            let c = if d == 1 { k } else if axis == 0 { k / ng } else { k % ng };
            c == 0 || c == ng - 1
        };
        let mut widened = false;
        for axis in 0..d {
            let edge_max = (0..grid.len())
                .filter(|&k| on_edge(k, axis))
                .map(|k| logs[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if edge_max > mx - 20.0 {
                half[axis] *= 1.5;
                widened = true;
            }
        }
        if widened {
            continue;
        }
        // trapezoid weights
        let tw = |c: usize| if c == 0 || c == ng - 1 { 0.5 } else { 1.0 };
        let cell: f64 = (0..d).map(|i| axes[i][1] - axes[i][0]).product();
        let mut weights: Vec<f64> = (0..grid.len())
            .map(|k| {
                let t = if d == 1 { tw(k) } else { tw(k / ng) * tw(k % ng) };
                t * (logs[k] - mx).exp()
            })
            .collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        let log_evidence = mx + (z * cell).ln();
        let mut hm = vec![0.0; d];
        let mut hs = vec![0.0; d];
        let mut lm = vec![0.0; n];
        let mut ls = vec![0.0; n];
        for (k, w) in weights.iter().enumerate() {
            for i in 0..d {
                hm[i] += w * grid[k][i];
                hs[i] += w * grid[k][i] * grid[k][i];
            }
            if let Some(li) = &ints[k] {
                for i in 0..n {
                    lm[i] += w * li.mean[i];
                    ls[i] += w * li.second[i];
                }
            }
        }
        let density: Vec<f64> = logs.iter().map(|l| l - log_evidence).collect();
        return Ok(QuadratureSummary {
            hyper_sd: hm.iter().zip(&hs).map(|(m, s)| (s - m * m).max(0.0).sqrt()).collect(),
            hyper_mean: hm,
            latent_sd: lm.iter().zip(&ls).map(|(m, s)| (s - m * m).max(0.0).sqrt()).collect(),
            latent_mean: lm,
            log_evidence,
            hyper_grid: grid,
            hyper_log_density: density,
        });
    }
    Err(Error::NonConvergence("quadrature box kept growing".into()))
}

// ---------------------------------------------------------------------------
// Cox partial likelihood

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

/// Breslow partial log-likelihood with gradient and negative Hessian.
fn cox_terms(times: &[f64], events: &[bool], x: &[Vec<f64>], beta: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
    let p = beta.len();
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    // descending time so risk sets accumulate
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let lin: Vec<f64> = x.iter().map(|xi| xi.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut ll = 0.0;
    let mut grad = vec![0.0; p];
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut k = 0;
    while k < n {
        let t = times[order[k]];
        let mut j = k;
        let mut d = 0.0;
        let mut xsum = vec![0.0; p];
        let mut lsum = 0.0;
        while j < n && times[order[j]] == t {
            let i = order[j];
            let e = lin[i].exp();
            s0 += e;
            for a in 0..p {
                s1[a] += e * x[i][a];
                for b in 0..p {
                    s2[(a, b)] += e * x[i][a] * x[i][b];
                }
            }
            if events[i] {
                d += 1.0;
                lsum += lin[i];
                for a in 0..p {
                    xsum[a] += x[i][a];
                }
            }
            j += 1;
        }
        if d > 0.0 {
            ll += lsum - d * s0.ln();
            for a in 0..p {
                grad[a] += xsum[a] - d * s1[a] / s0;
                for b in 0..p {
                    info[(a, b)] += d * (s2[(a, b)] / s0 - s1[a] * s1[b] / (s0 * s0));
                }
            }
        }
        k = j;
    }
    (ll, grad, info)
}

/// Newton-Raphson on the Breslow partial likelihood.
pub fn cox_partial_fit(times: &[f64], events: &[bool], covariates: &[Vec<f64>]) -> Result<CoxFit> {
    if !events.iter().any(|&e| e) {
        return Err(Error::Precondition("the Cox fit needs at least one event".into()));
    }
    if times.len() != events.len() || times.len() != covariates.len() {
        return Err(Error::Precondition("times, events and covariates differ in length".into()));
    }
    let p = covariates.first().map(|r| r.len()).unwrap_or(0);
    let mut beta = vec![0.0; p];
    let (mut ll, mut grad, mut info) = cox_terms(times, events, covariates, &beta);
    for it in 0..200 {
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < 1e-10 {
            let cov = info.clone().try_inverse().ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
            let se: Vec<f64> = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
            // a flat likelihood far from the origin means the estimate is at infinity
            if se.iter().zip(&beta).any(|(s, b)| *s > 1e4 || b.abs() > 15.0) {
                break;
            }
            return Ok(CoxFit {
                se,
                beta,
                loglik: ll,
                iterations: it,
            });
        }
        if beta.iter().any(|b| b.abs() > 30.0) {
            break;
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&DVector::from_column_slice(&grad)))
            .ok_or(Error::NonConvergence("Cox information matrix is singular (separation)".into()))?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let (l2, g2, i2) = cox_terms(times, events, covariates, &cand);
            if l2 >= ll - 1e-12 * ll.abs() || t < 1e-8 {
                beta = cand;
                ll = l2;
                grad = g2;
                info = i2;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NonConvergence(
        "Cox estimate diverges (separation) or Newton did not converge".into(),
    ))
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateSpec {
    Binary { name: String, p: f64 },
    Normal { name: String, mean: f64, sd: f64 },
}

impl CovariateSpec {
    fn name(&self) -> &str {
        match self {
            CovariateSpec::Binary { name, .. } | CovariateSpec::Normal { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLong {
    #[serde(default)]
    pub name: Option<String>,
    pub family: Family,
    pub fixed: Vec<Term>,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub random: Vec<Term>,
    /// Residual standard deviation for gaussian and lognormal markers.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "one")]
    pub ntrials: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimBaseline {
    Exponential,
    Weibull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAssoc {
    pub marker: usize,
    pub kind: AssociationKind,
    /// One value per shared quantity (two for CV_CS, one per random effect for SRE_ind).
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSurv {
    #[serde(default)]
    pub event: Option<String>,
    pub baseline: SimBaseline,
    #[serde(default = "unit")]
    pub shape: f64,
    /// Log-hazard intercept.
    pub intercept: f64,
    #[serde(default)]
    pub fixed: Vec<Term>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub assoc: Vec<SimAssoc>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Censoring {
    /// Administrative censoring time.
    pub admin: f64,
    /// Rate of exponential random censoring (0 for none).
    #[serde(default)]
    pub rate: f64,
}

/// Full description of a simulated joint dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n_subjects: usize,
    pub seed: u64,
    #[serde(default = "time_name")]
    pub time: String,
    pub visits: Vec<f64>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    /// Spline functions of time usable as term factors; boundary defaults to (0, admin).
    #[serde(default)]
    pub time_functions: Vec<TimeFunctionSpec>,
    #[serde(default)]
    pub longitudinal: Vec<SimLong>,
    /// Covariance of the stacked random effects of all markers.
    #[serde(default)]
    pub re_cov: Vec<Vec<f64>>,
    #[serde(default)]
    pub survival: Vec<SimSurv>,
    pub censoring: Censoring,
}

fn time_name() -> String {
    "time".into()
}

impl SimScenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let sc: SimScenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    fn re_dim(&self) -> usize {
        self.longitudinal.iter().map(|l| l.random.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.re_dim();
        if self.re_cov.len() != q || self.re_cov.iter().any(|r| r.len() != q) {
            return Err(Error::Config(format!("re_cov must be {q} x {q}")));
        }
        if q > 0 {
            let m = DMatrix::from_fn(q, q, |i, j| self.re_cov[i][j]);
            let e = SymmetricEigen::new(m.clone()).eigenvalues;
            if e.iter().any(|&v| v < -1e-12) || (&m - m.transpose()).amax() > 1e-12 {
                return Err(Error::Config("re_cov must be symmetric positive semidefinite".into()));
            }
        }
        for l in &self.longitudinal {
            if l.beta.len() != l.fixed.len() {
                return Err(Error::Config("beta must match the fixed terms".into()));
            }
            if l.family.has_precision() && !(l.sigma >= 0.0) {
                return Err(Error::Config("sigma must be nonnegative".into()));
            }
        }
        for s in &self.survival {
            if s.gamma.len() != s.fixed.len() {
                return Err(Error::Config("gamma must match the fixed terms".into()));
            }
            if !(s.shape > 0.0) {
                return Err(Error::Config("Weibull shape must be positive".into()));
            }
            for a in &s.assoc {
                if a.marker >= self.longitudinal.len() {
                    return Err(Error::Config("association references an unknown marker".into()));
                }
                let need = match a.kind {
                    AssociationKind::CvCs => 2,
                    AssociationKind::SreInd => self.longitudinal[a.marker].random.len(),
                    AssociationKind::None => 0,
                    _ => 1,
                };
                if a.phi.len() != need {
                    return Err(Error::Config(format!("association {:?} needs {need} values", a.kind)));
                }
            }
        }
        if !(self.censoring.admin > 0.0) || self.censoring.rate < 0.0 {
            return Err(Error::Config("invalid censoring".into()));
        }
        if self.visits.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("visit times must be nonnegative".into()));
        }
        Ok(())
    }
}

struct SimFunction {
    name: String,
    basis: NsBasis,
    column: usize,
}

fn eval_term(term: &Term, time_name: &str, t: f64, cov: &[(String, f64)], funcs: &[SimFunction]) -> f64 {
    term.factors.iter().fold(1.0, |acc, f| {
        acc * if f == time_name {
            t
        } else if let Some(tf) = funcs.iter().find(|tf| &tf.name == f) {
            tf.basis.eval(t)[tf.column]
        } else {
            cov.iter().find(|c| &c.0 == f).map(|c| c.1).unwrap_or(0.0)
        }
    })
}

struct SimSubject<'a> {
    sc: &'a SimScenario,
    funcs: &'a [SimFunction],
    cov: Vec<(String, f64)>,
    re: Vec<f64>,
    re_offset: Vec<usize>,
}

impl SimSubject<'_> {
    fn eta(&self, k: usize, t: f64) -> f64 {
        let l = &self.sc.longitudinal[k];
        let fixed: f64 = l
            .fixed
            .iter()
            .zip(&l.beta)
            .map(|(term, b)| b * eval_term(term, &self.sc.time, t, &self.cov, self.funcs))
            .sum();
        fixed + self.random_part(k, t)
    }

    fn random_part(&self, k: usize, t: f64) -> f64 {
        let l = &self.sc.longitudinal[k];
        l.random
            .iter()
            .enumerate()
            .map(|(j, term)| self.re[self.re_offset[k] + j] * eval_term(term, &self.sc.time, t, &self.cov, self.funcs))
            .sum()
    }

    fn hazard(&self, s: usize, t: f64) -> f64 {
        let sv = &self.sc.survival[s];
        let mut lin = sv.intercept
            + sv.fixed
                .iter()
                .zip(&sv.gamma)
                .map(|(term, g)| g * eval_term(term, &self.sc.time, 0.0, &self.cov, self.funcs))
                .sum::<f64>();
        let delta = 1e-5 * self.sc.censoring.admin;
        for a in &sv.assoc {
            let k = a.marker;
            lin += match a.kind {
                AssociationKind::Cv => a.phi[0] * self.eta(k, t),
                AssociationKind::Cs => a.phi[0] * (self.eta(k, t + delta) - self.eta(k, t - delta)) / (2.0 * delta),
                AssociationKind::CvCs => {
                    a.phi[0] * self.eta(k, t) + a.phi[1] * (self.eta(k, t + delta) - self.eta(k, t - delta)) / (2.0 * delta)
                }
                AssociationKind::Sre => a.phi[0] * self.random_part(k, t),
                AssociationKind::SreInd => a
                    .phi
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p * self.re[self.re_offset[k] + j])
                    .sum(),
                AssociationKind::None => 0.0,
            };
        }
        match sv.baseline {
            SimBaseline::Exponential => lin.exp(),
            SimBaseline::Weibull => sv.shape * t.powf(sv.shape - 1.0) * lin.exp(),
        }
    }

    fn total_hazard(&self, t: f64) -> f64 {
        (0..self.sc.survival.len()).map(|s| self.hazard(s, t)).sum()
    }
}

/// Simulated longitudinal and survival tables.
pub fn simulate_joint(sc: &SimScenario) -> Result<(Table, Table)> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let q = sc.re_dim();
    let root = if q > 0 {
        let m = DMatrix::from_fn(q, q, |i, j| sc.re_cov[i][j]);
        let e = SymmetricEigen::new(m);
        let lam = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
        &e.eigenvectors * lam
    } else {
        DMatrix::zeros(0, 0)
    };
    let mut re_offset = Vec::new();
    let mut acc = 0;
    for l in &sc.longitudinal {
        re_offset.push(acc);
        acc += l.random.len();
    }
    let admin = sc.censoring.admin;
    let funcs = sc
        .time_functions
        .iter()
        .map(|tf| {
            Ok(SimFunction {
                name: tf.name.clone(),
                basis: NsBasis::new(&tf.knots, tf.boundary.unwrap_or((0.0, admin)))?,
                column: tf.column,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_grid = 2000;
    let grid: Vec<f64> = (0..=n_grid).map(|i| admin * i as f64 / n_grid as f64).collect();
    let resp_names: Vec<String> = sc
        .longitudinal
        .iter()
        .enumerate()
        .map(|(k, l)| l.name.clone().unwrap_or_else(|| format!("y{}", k + 1)))
        .collect();
    let event_names: Vec<String> = sc
        .survival
        .iter()
        .enumerate()
        .map(|(s, v)| {
            v.event.clone().unwrap_or_else(|| {
                if sc.survival.len() == 1 {
                    "event".into()
                } else {
                    format!("event{}", s + 1)
                }
            })
        })
        .collect();
    let mut long_rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut surv_rows: Vec<Vec<Option<f64>>> = Vec::new();
    for i in 0..sc.n_subjects {
        let cov: Vec<(String, f64)> = sc
            .covariates
            .iter()
            .map(|c| {
                let v = match c {
                    CovariateSpec::Binary { p, .. } => (rng.random::<f64>() < *p) as u8 as f64,
                    CovariateSpec::Normal { mean, sd, .. } => mean + sd * rng.sample::<f64, _>(StandardNormal),
                };
                (c.name().to_string(), v)
            })
            .collect();
        let z = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let re: Vec<f64> = if q > 0 { (&root * z).iter().copied().collect() } else { vec![] };
        let subj = SimSubject {
            sc,
            funcs: &funcs,
            cov,
            re,
            re_offset: re_offset.clone(),
        };
        // event time by inversion of the cumulative hazard
        let (exit, cause) = if sc.survival.is_empty() {
            (admin, None)
        } else {
            let target: f64 = rng.sample(Exp1);
            let weibull_small = sc
                .survival
                .iter()
                .any(|s| matches!(s.baseline, SimBaseline::Weibull) && s.shape < 1.0);
            let h_at = |t: f64| {
                let v = subj.total_hazard(if weibull_small { t.max(1e-12 * admin) } else { t });
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("hazard {v} is not a nonnegative number")));
                }
                Ok(v)
            };
            let mut cum = 0.0;
            let mut h_prev = h_at(grid[0])?;
            let mut found = None;
            for w in grid.windows(2) {
                let h_next = h_at(w[1])?;
                let inc = 0.5 * (h_prev + h_next) * (w[1] - w[0]);
                if cum + inc >= target {
                    let (a, ha) = (w[0], h_prev);
                    let part = |t: f64| -> Result<f64> { Ok(cum + 0.5 * (ha + h_at(t)?) * (t - a)) };
                    let (mut lo, mut hi) = (w[0], w[1]);
                    while hi - lo > 1e-8 {
                        let mid = 0.5 * (lo + hi);
                        if part(mid)? < target {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    found = Some(0.5 * (lo + hi));
                    break;
                }
                cum += inc;
                h_prev = h_next;
            }
            match found {
                None => (admin, None),
                Some(t) => {
                    let hs: Vec<f64> = (0..sc.survival.len()).map(|s| subj.hazard(s, t.max(1e-12 * admin))).collect();
                    let tot: f64 = hs.iter().sum();
                    let mut r = rng.random::<f64>() * tot;
                    let mut c = hs.len() - 1;
                    for (s, h) in hs.iter().enumerate() {
                        if r < *h {
                            c = s;
                            break;
                        }
                        r -= h;
                    }
                    (t, Some(c))
                }
            }
        };
        let censor = if sc.censoring.rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / sc.censoring.rate
        } else {
            f64::INFINITY
        };
        let (exit, cause) = if censor < exit { (censor, None) } else { (exit, cause) };
        let id = (i + 1) as f64;
        for &v in &sc.visits {
            if !sc.survival.is_empty() && v >= exit && v > 0.0 {
                continue;
            }
            let mut row = vec![Some(id), Some(v)];
            row.extend(subj.cov.iter().map(|c| Some(c.1)));
            for (k, l) in sc.longitudinal.iter().enumerate() {
                let eta = subj.eta(k, v);
                let y = match l.family {
                    Family::Gaussian => eta + l.sigma * rng.sample::<f64, _>(StandardNormal),
                    Family::Lognormal => (eta + l.sigma * rng.sample::<f64, _>(StandardNormal)).exp(),
                    Family::Poisson => {
                        let mu = eta.exp();
                        if mu > 0.0 {
                            Poisson::new(mu)
                                .map_err(|e| Error::Config(e.to_string()))?
                                .sample(&mut rng)
                        } else {
                            0.0
                        }
                    }
                    Family::Binomial => Binomial::new(l.ntrials, logistic(eta))
                        .map_err(|e| Error::Config(e.to_string()))?
                        .sample(&mut rng) as f64,
                    other => return Err(Error::UnknownFamily(other.name().into())),
                };
                row.push(Some(y));
            }
            long_rows.push(row);
        }
        if !sc.survival.is_empty() {
            let mut row = vec![Some(id), Some(exit)];
            for s in 0..sc.survival.len() {
                row.push(Some((cause == Some(s)) as u8 as f64));
            }
            row.extend(subj.cov.iter().map(|c| Some(c.1)));
            surv_rows.push(row);
        }
    }
    let mut long_names = vec!["id".to_string(), sc.time.clone()];
    long_names.extend(sc.covariates.iter().map(|c| c.name().to_string()));
    long_names.extend(resp_names);
    let mut surv_names = vec!["id".to_string(), sc.time.clone()];
    surv_names.extend(event_names);
    surv_names.extend(sc.covariates.iter().map(|c| c.name().to_string()));
    let to_table = |names: Vec<String>, rows: Vec<Vec<Option<f64>>>| {
        let cols = names
            .into_iter()
            .enumerate()
            .map(|(j, n)| (n, rows.iter().map(|r| r[j]).collect()))
            .collect();
        Table::from_numeric(cols)
    };
    Ok((to_table(long_names, long_rows)?, to_table(surv_names, surv_rows)?))
}

// ---------------------------------------------------------------------------
// Goodness of fit

/// Kolmogorov-Smirnov statistic of `samples` against a continuous `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS statistic `d` for `n` samples.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * lam * lam).exp();
        sum += term;
        if term.abs() < 1e-14 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Kaplan-Meier step function: (event time, survival just after it, Greenwood variance).
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len() as f64;
    let mut s = 1.0;
    let mut gw = 0.0;
    let mut out = Vec::new();
    let mut k = 0;
    while k < idx.len() {
        let t = times[idx[k]];
        let mut d = 0.0;
        let mut c = 0.0;
        while k < idx.len() && times[idx[k]] == t {
            if events[idx[k]] {
                d += 1.0;
            } else {
                c += 1.0;
            }
            k += 1;
        }
        if d > 0.0 {
            s *= 1.0 - d / at_risk;
            if at_risk > d {
                gw += d / (at_risk * (at_risk - d));
            }
            out.push((t, s, s * s * gw));
        }
        at_risk -= d + c;
    }
    out
}

/// Evaluates a Kaplan-Meier step function at `t`.
pub fn km_at(km: &[(f64, f64, f64)], t: f64) -> f64 {
    let pos = km.partition_point(|e| e.0 <= t);
    if pos == 0 {
        1.0
    } else {
        km[pos - 1].1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_polynomials() {
        let (x, w) = gauss_hermite(10);
        let pi_sqrt = std::f64::consts::PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - pi_sqrt).abs() < 1e-12);
        assert!((m2 - pi_sqrt / 2.0).abs() < 1e-12);
        assert!((m4 - 3.0 * pi_sqrt / 4.0).abs() < 1e-12);
    }

    #[test]
    fn cox_symmetric_groups_give_zero() {
        let times = vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
        let events = vec![true, false, true, true, true, false, true, true];
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![(i >= 4) as u8 as f64]).collect();
        let f = cox_partial_fit(&times, &events, &x).unwrap();
        assert!(f.beta[0].abs() < 1e-10);
    }

    #[test]
    fn cox_separation_is_reported() {
        let times = vec![1.0, 2.0, 3.0, 4.0];
        let events = vec![true, true, true, true];
        let x = vec![vec![1.0], vec![1.0], vec![0.0], vec![0.0]];
        assert!(cox_partial_fit(&times, &events, &x).is_err());
    }

    #[test]
    fn km_without_censoring_is_empirical() {
        let km = kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[true; 4]);
        assert_eq!(km.len(), 4);
        assert!((km_at(&km, 2.5) - 0.5).abs() < 1e-15);
        assert_eq!(km_at(&km, 0.5), 1.0);
    }

    #[test]
    fn ks_uniform_grid_is_small() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&x, |v| v);
        assert!(d <= 0.0005 + 1e-12);
        assert!(ks_pvalue(d, 1000) > 0.99);
        assert!(ks_pvalue(0.2, 1000) < 1e-10);
    }
}
