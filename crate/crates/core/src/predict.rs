//! Posterior prediction for new subjects and imputation of missing responses.
//!
//! Each draw of the latent field and hyperparameters is combined with
//! random-effect draws from the subject's conditional posterior given the
//! longitudinal rows supplied, so that trajectories and event curves are
//! summarized over `n_sample * n_sample_re` equally weighted realizations.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{cholesky_precision, HyperRole, Model, ReSource};
use crate::data::{format_num, Table};
use crate::design::{table_lookup, SubjectCovariates};
use crate::error::{Error, Result};
use crate::inference::Fit;
use crate::likelihoods::{self, Extras, Family};
use crate::spec::{AssociationKind, BaselineKind};
use crate::summaries::sorted_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub horizon: f64,
    /// Explicit prediction times; otherwise `n_time_points` equidistant points on [0, horizon].
    pub times: Option<Vec<f64>>,
    pub n_time_points: usize,
    pub n_sample: usize,
    pub n_sample_re: usize,
    pub inv_link: bool,
    pub survival: bool,
    pub cif: bool,
    pub csurv: Option<f64>,
    pub return_samples: bool,
    pub seed: u64,
}

impl PredictRequest {
    pub fn new(horizon: f64) -> Self {
        PredictRequest {
            horizon,
            times: None,
            n_time_points: 50,
            n_sample: 300,
            n_sample_re: 50,
            inv_link: false,
            survival: false,
            cif: false,
            csurv: None,
            return_samples: false,
            seed: 1,
        }
    }

    fn grid(&self) -> Result<Vec<f64>> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Precondition(format!("horizon {} must be positive", self.horizon)));
        }
        if self.n_sample == 0 || self.n_sample_re == 0 {
            return Err(Error::Precondition("sample counts must be at least 1".into()));
        }
        match &self.times {
            Some(t) => {
                if t.is_empty() || t.windows(2).any(|w| !(w[1] > w[0])) || t[0] < 0.0 {
                    return Err(Error::Precondition("prediction times must be increasing and nonnegative".into()));
                }
                Ok(t.clone())
            }
            None => {
                let n = self.n_time_points.max(2);
                Ok((0..n).map(|i| self.horizon * i as f64 / (n - 1) as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl Stats {
    pub fn of(samples: &mut [f64]) -> Stats {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        Stats {
            mean,
            sd: var.sqrt(),
            q025: sorted_quantile(samples, 0.025),
            q50: sorted_quantile(samples, 0.5),
            q975: sorted_quantile(samples, 0.975),
        }
    }

    fn cells(&self) -> [String; 5] {
        [self.mean, self.sd, self.q025, self.q50, self.q975].map(format_num)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongPrediction {
    pub id: String,
    pub time: f64,
    pub outcome: String,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvPrediction {
    pub id: String,
    pub time: f64,
    pub outcome: String,
    pub haz: Stats,
    pub surv: Option<Stats>,
    pub cif: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResult {
    pub time_name: String,
    pub long: Vec<LongPrediction>,
    pub surv: Vec<SurvPrediction>,
    /// Raw draws aligned with `long`, when requested.
    pub long_samples: Option<Vec<Vec<f64>>>,
    /// Raw draws aligned with `surv`: (hazard, survival, CIF) per realization.
    pub surv_samples: Option<Vec<Vec<[f64; 3]>>>,
}

const STAT_NAMES: [&str; 5] = ["Mean", "Sd", "quant0.025", "quant0.5", "quant0.975"];

impl PredictResult {
    pub fn write_long_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["id".to_string(), self.time_name.clone(), "Outcome".into()];
        head.extend(STAT_NAMES.iter().map(|s| s.to_string()));
        wr.write_record(&head)?;
        for r in &self.long {
            let mut rec = vec![r.id.clone(), format_num(r.time), r.outcome.clone()];
            rec.extend(r.stats.cells());
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_surv_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let with_s = self.surv.first().is_some_and(|r| r.surv.is_some());
        let with_c = self.surv.first().is_some_and(|r| r.cif.is_some());
        let mut head = vec!["id".to_string(), self.time_name.clone(), "Outcome".into()];
        let mut prefixes = vec!["Haz_"];
        if with_s {
            prefixes.push("Surv_");
        }
        if with_c {
            prefixes.push("CIF_");
        }
        for p in &prefixes {
            head.extend(STAT_NAMES.iter().map(|s| format!("{p}{s}")));
        }
        wr.write_record(&head)?;
        for r in &self.surv {
            let mut rec = vec![r.id.clone(), format_num(r.time), r.outcome.clone()];
            rec.extend(r.haz.cells());
            if let Some(s) = &r.surv {
                rec.extend(s.cells());
            }
            if let Some(c) = &r.cif {
                rec.extend(c.cells());
            }
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prediction serializes")
    }
}

/// Linear-predictor pieces of one marker at one time.
#[derive(Debug, Clone)]
struct Basis {
    x: Vec<f64>,
    z: Vec<f64>,
}

/// Per-subject quantities that do not depend on the posterior draw.
struct SubjectPlan {
    id: String,
    /// Observed rows: (marker, response, basis, extras).
    obs: Vec<(usize, f64, Basis, Extras)>,
    long_grid: Vec<Vec<Basis>>,
    surv_times: Vec<f64>,
    /// Marker bases and their time derivatives on the survival grid.
    surv_basis: Vec<Vec<Basis>>,
    surv_deriv: Vec<Vec<Basis>>,
    surv_x: Vec<Vec<f64>>,
}

/// Where each marker's random effects live in the stacked subject vector.
struct ReLayout {
    dim: usize,
    group_offset: Vec<usize>,
    marker_cols: Vec<Vec<usize>>,
    frailty_col: Vec<Option<usize>>,
}

impl ReLayout {
    fn new(model: &Model) -> Self {
        let mut group_offset = Vec::new();
        let mut dim = 0;
        for g in &model.layout.groups {
            group_offset.push(dim);
            dim += g.dim;
        }
        let marker_cols = model
            .layout
            .re_index
            .iter()
            .map(|v| v.iter().map(|&(g, pos)| group_offset[g] + pos).collect())
            .collect();
        let mut frailty_col = vec![None; model.spec.n_surv()];
        for (g, grp) in model.layout.groups.iter().enumerate() {
            for (pos, src) in grp.sources.iter().enumerate() {
                if let ReSource::Frailty { model: s } = src {
                    frailty_col[*s] = Some(group_offset[g] + pos);
                }
            }
        }
        ReLayout {
            dim,
            group_offset,
            marker_cols,
            frailty_col,
        }
    }

    fn prior(&self, model: &Model, omega: &[f64]) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.dim, self.dim);
        for (g, grp) in model.layout.groups.iter().enumerate() {
            let th = &omega[grp.hyper_start..grp.hyper_start + grp.n_hyper()];
            let pg = cholesky_precision(grp.dim, th, grp.full);
            let o = self.group_offset[g];
            p.view_mut((o, o), (grp.dim, grp.dim)).copy_from(&pg);
        }
        p
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw-dependent constants shared by all subjects.
struct DrawState<'a> {
    omega: &'a [f64],
    u: &'a [f64],
    prior: DMatrix<f64>,
}

impl DrawState<'_> {
    fn eta(&self, model: &Model, rl: &ReLayout, k: usize, b: &Basis, re: &[f64]) -> f64 {
        let beta = &self.u[model.layout.long_fixed[k].clone()];
        dot(&b.x, beta) + rl.marker_cols[k].iter().zip(&b.z).map(|(&c, z)| re[c] * z).sum::<f64>()
    }

    fn random_part(&self, rl: &ReLayout, k: usize, b: &Basis, re: &[f64]) -> f64 {
        rl.marker_cols[k].iter().zip(&b.z).map(|(&c, z)| re[c] * z).sum()
    }

    fn hyper_of(&self, model: &Model, k: usize) -> f64 {
        model
            .hyper
            .params
            .iter()
            .position(|p| p.role == HyperRole::ResLogPrec { model: k })
            .map(|h| self.omega[h].exp())
            .unwrap_or(1.0)
    }
}

/// Mode and Cholesky factor of the subject's conditional random-effect posterior.
fn conditional_re(
    model: &Model,
    rl: &ReLayout,
    ds: &DrawState,
    plan: &SubjectPlan,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = rl.dim;
    let floor = model.spec.controls.w_floor;
    let taus: Vec<f64> = (0..model.spec.n_long()).map(|k| ds.hyper_of(model, k)).collect();
    let objective = |b: &DVector<f64>| -> f64 {
        let mut v = -0.5 * (b.transpose() * &ds.prior * b)[(0, 0)];
        for (k, y, basis, ex) in &plan.obs {
            let eta = ds.eta(model, rl, *k, basis, b.as_slice());
            v += likelihoods::eval(model.spec.longitudinal[*k].family, *y, eta, taus[*k], ex).value;
        }
        v
    };
    let mut b = DVector::zeros(d);
    let mut obj = objective(&b);
    for _ in 0..model.spec.controls.max_newton {
        let mut grad = -(&ds.prior * &b);
        let mut hess = ds.prior.clone();
        for (k, y, basis, ex) in &plan.obs {
            let eta = ds.eta(model, rl, *k, basis, b.as_slice());
            let der = likelihoods::eval(model.spec.longitudinal[*k].family, *y, eta, taus[*k], ex);
            let w = (-der.d2).max(floor);
            let cols = &rl.marker_cols[*k];
            for (a, &ca) in cols.iter().enumerate() {
                grad[ca] += der.d1 * basis.z[a];
                for (c, &cc) in cols.iter().enumerate() {
                    hess[(ca, cc)] += w * basis.z[a] * basis.z[c];
                }
            }
        }
        let chol = hess
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &b + &step * t;
            let o = objective(&cand);
            if o.is_finite() && o >= obj - 1e-12 * obj.abs().max(1.0) {
                b = cand;
                obj = o;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let size = step.amax() * t;
        if !accepted || size < 1e-10 {
            let mut hess = ds.prior.clone();
            for (k, y, basis, ex) in &plan.obs {
                let eta = ds.eta(model, rl, *k, basis, b.as_slice());
                let der = likelihoods::eval(model.spec.longitudinal[*k].family, *y, eta, taus[*k], ex);
                let w = (-der.d2).max(floor);
                let cols = &rl.marker_cols[*k];
                for (a, &ca) in cols.iter().enumerate() {
                    for (c, &cc) in cols.iter().enumerate() {
                        hess[(ca, cc)] += w * basis.z[a] * basis.z[c];
                    }
                }
            }
            let l = hess
                .cholesky()
                .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
                .l();
            return Ok((b, l));
        }
    }
    Err(Error::NonConvergence(format!(
        "conditional random effects of subject {}",
        plan.id
    )))
}

/// Hazard model pieces of one survival outcome at one draw.
struct HazardDraw {
    log_h0_fixed: f64,
    baseline: BaselineKind,
    shape: f64,
    rw_knots: Vec<f64>,
    rw_values: Vec<f64>,
    /// (marker, kind, phi, SRE_ind term)
    assoc: Vec<(usize, AssociationKind, f64, Option<usize>)>,
}

impl HazardDraw {
    fn new(model: &Model, ds: &DrawState, s: usize, x: &[f64]) -> Self {
        let layout = &model.layout;
        let gamma = &ds.u[layout.surv_fixed[s].clone()];
        let sv = &model.spec.survival[s];
        let shape = model
            .hyper
            .params
            .iter()
            .position(|p| p.role == HyperRole::WeibullLogShape { model: s })
            .map(|h| ds.omega[h].exp())
            .unwrap_or(1.0);
        let (rw_knots, rw_values) = match (&layout.baseline[s], &model.cutpoints[s]) {
            (Some(r), Some(c)) => (c.midpoints(), ds.u[r.clone()].to_vec()),
            _ => (vec![], vec![]),
        };
        let mut assoc = Vec::new();
        for (h, p) in model.hyper.params.iter().enumerate() {
            if let HyperRole::Assoc { long, surv, kind, term } = p.role {
                if surv == s {
                    assoc.push((long, kind, ds.omega[h], term));
                }
            }
        }
        HazardDraw {
            log_h0_fixed: dot(gamma, x),
            baseline: sv.baseline,
            shape,
            rw_knots,
            rw_values,
            assoc,
        }
    }

    /// Log baseline from the random walk, linear between interval midpoints
    /// and constant outside them.
    fn rw_log(&self, t: f64) -> f64 {
        let k = &self.rw_knots;
        let v = &self.rw_values;
        if k.is_empty() {
            return 0.0;
        }
        if t <= k[0] {
            return v[0];
        }
        if t >= k[k.len() - 1] {
            return v[v.len() - 1];
        }
        let i = k.partition_point(|&c| c <= t) - 1;
        let w = (t - k[i]) / (k[i + 1] - k[i]);
        v[i] + w * (v[i + 1] - v[i])
    }
}

/// Draws for one subject: a flat [realization][quantity] block.
#[allow(clippy::too_many_arguments)]
fn subject_draws(
    model: &Model,
    rl: &ReLayout,
    ds: &DrawState,
    plan: &SubjectPlan,
    req: &PredictRequest,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let (mode, l) = conditional_re(model, rl, ds, plan)?;
    let nl = model.spec.n_long();
    let ns = model.spec.n_surv();
    let nt = plan.long_grid.first().map(|g| g.len()).unwrap_or(0);
    let nst = plan.surv_times.len();
    let hazards: Vec<HazardDraw> = (0..ns).map(|s| HazardDraw::new(model, ds, s, &plan.surv_x[s])).collect();
    let mut out = Vec::with_capacity(req.n_sample_re * (nl * nt + 3 * ns * nst));
    let lt = l.transpose();
    let tiny = 1e-6 * horizon;
    for _ in 0..req.n_sample_re {
        let z = DVector::from_iterator(rl.dim, (0..rl.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dev = lt.solve_upper_triangular(&z).unwrap_or_else(|| DVector::zeros(rl.dim));
        let re = &mode + dev;
        let re = re.as_slice();
        for k in 0..nl {
            let fam = model.spec.longitudinal[k].family;
            for basis in &plan.long_grid[k] {
                let eta = ds.eta(model, rl, k, basis, re);
                out.push(if req.inv_link { fam.inverse_link(eta) } else { eta });
            }
        }
        if ns == 0 {
            continue;
        }
        // log h_s(t) less the parametric time factor, per outcome and time
        let mut lin = vec![vec![0.0; nst]; ns];
        for (s, hz) in hazards.iter().enumerate() {
            let frail = rl.frailty_col[s].map(|c| re[c]).unwrap_or(0.0);
            for j in 0..nst {
                let t = plan.surv_times[j];
                let mut v = hz.log_h0_fixed + frail;
                if hz.baseline.rw_order().is_some() {
                    v += hz.rw_log(t);
                }
                for &(k, kind, phi, term) in &hz.assoc {
                    let b = &plan.surv_basis[k][j];
                    v += phi
                        * match kind {
                            AssociationKind::Cv => ds.eta(model, rl, k, b, re),
                            AssociationKind::Cs => ds.eta(model, rl, k, &plan.surv_deriv[k][j], re),
                            AssociationKind::Sre => ds.random_part(rl, k, b, re),
                            AssociationKind::SreInd => re[rl.marker_cols[k][term.unwrap_or(0)]],
                            _ => 0.0,
                        };
                }
                lin[s][j] = v;
            }
        }
        // hazards, increments of the cumulative hazard and per-cause survival
        let mut haz = vec![vec![0.0; nst]; ns];
        let mut dh = vec![vec![0.0; nst]; ns];
        for (s, hz) in hazards.iter().enumerate() {
            for j in 0..nst {
                let t = plan.surv_times[j];
                haz[s][j] = match hz.baseline {
                    BaselineKind::Weibull => {
                        let a = hz.shape;
                        (a.ln() + (a - 1.0) * t.max(tiny).ln() + lin[s][j]).exp()
                    }
                    _ => lin[s][j].exp(),
                };
                if j > 0 {
                    let (t0, t1) = (plan.surv_times[j - 1], t);
                    dh[s][j] = match hz.baseline {
                        BaselineKind::Weibull => {
                            let a = hz.shape;
                            (0.5 * (lin[s][j - 1] + lin[s][j])).exp() * (t1.powf(a) - t0.powf(a))
                        }
                        _ => 0.5 * (haz[s][j - 1] + haz[s][j]) * (t1 - t0),
                    };
                }
            }
        }
        let mut cum = vec![0.0; ns];
        let mut cif = vec![0.0; ns];
        let mut s_all_prev = 1.0;
        let mut rows = vec![[0.0; 3]; ns * nst];
        for j in 0..nst {
            let total: f64 = (0..ns).map(|s| dh[s][j]).sum();
            for s in 0..ns {
                cum[s] += dh[s][j];
            }
            let s_all = (-cum.iter().sum::<f64>()).exp();
            if total > 0.0 {
                for s in 0..ns {
                    cif[s] += dh[s][j] / total * (s_all_prev - s_all);
                }
            }
            s_all_prev = s_all;
            for s in 0..ns {
                rows[s * nst + j] = [haz[s][j], (-cum[s]).exp(), cif[s]];
            }
        }
        for r in rows {
            out.extend_from_slice(&r);
        }
    }
    Ok(out)
}

fn subject_rows(table: &Table, id_col: &str) -> Result<Vec<(String, Vec<usize>)>> {
    let ids = table.raw(id_col)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        if !rows.contains_key(id) {
            order.push(id.clone());
        }
        rows.entry(id.clone()).or_default().push(i);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let r = rows.remove(&id).unwrap_or_default();
            (id, r)
        })
        .collect())
}

fn plan_subject(
    model: &Model,
    table: &Table,
    id: String,
    rows: &[usize],
    times: &[f64],
    grid: &[f64],
    req: &PredictRequest,
) -> Result<SubjectPlan> {
    let spec = &model.spec;
    let ctx = &model.ctx;
    let mut needed: Vec<String> = spec.long_design_columns().into_iter().collect();
    for s in 0..spec.n_surv() {
        needed.extend(spec.surv_design_columns(s));
    }
    for c in &needed {
        let v = table.values(c)?;
        if let Some(&r) = rows.iter().find(|&&r| v[r].is_none()) {
            return Err(Error::MissingCovariate {
                row: r + 1,
                column: c.clone(),
            });
        }
    }
    let mut visits: Vec<(f64, usize)> = rows.iter().map(|&r| (times[r], r)).collect();
    visits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cov = SubjectCovariates { visits };
    let basis_at = |k: usize, t: f64| -> Basis {
        let row = cov.row_at(t).unwrap_or(rows[0]);
        let look = table_lookup(table, row);
        Basis {
            x: ctx.long_fixed_values(k, &look, t),
            z: ctx.long_random_values(k, &look, t),
        }
    };
    let mut obs = Vec::new();
    let mut last_obs: f64 = 0.0;
    for (k, l) in spec.longitudinal.iter().enumerate() {
        let ys = if table.has(&l.response) {
            table.values(&l.response)?.to_vec()
        } else {
            vec![None; table.nrows()]
        };
        for &r in rows {
            if let Some(y) = ys[r] {
                let ex = Extras {
                    ntrials: l.ntrials as f64,
                    ..Extras::default()
                };
                likelihoods::check_support(l.family, y, &ex)?;
                let look = table_lookup(table, r);
                let t = times[r];
                obs.push((
                    k,
                    y,
                    Basis {
                        x: ctx.long_fixed_values(k, &look, t),
                        z: ctx.long_random_values(k, &look, t),
                    },
                    ex,
                ));
                last_obs = last_obs.max(t);
            }
        }
    }
    if req.horizon <= last_obs {
        return Err(Error::Precondition(format!(
            "horizon {} must exceed the last observation time {} of subject {id}",
            req.horizon, last_obs
        )));
    }
    let csurv = req.csurv.unwrap_or(last_obs);
    if !(csurv >= 0.0 && csurv < req.horizon) {
        return Err(Error::Precondition(format!(
            "survival prediction start {csurv} must lie in [0, horizon)"
        )));
    }
    let long_grid = (0..spec.n_long())
        .map(|k| grid.iter().map(|&t| basis_at(k, t)).collect())
        .collect();
    let mut surv_times = vec![csurv];
    surv_times.extend(grid.iter().copied().filter(|&t| t > csurv));
    let delta = ctx.cs_delta;
    let surv_basis = (0..spec.n_long())
        .map(|k| surv_times.iter().map(|&t| basis_at(k, t)).collect())
        .collect();
    let surv_deriv = (0..spec.n_long())
        .map(|k| {
            surv_times
                .iter()
                .map(|&t| {
                    let hi = basis_at(k, t + delta);
                    let lo = basis_at(k, t - delta);
                    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) / (2.0 * delta)).collect();
                    Basis {
                        x: d(&hi.x, &lo.x),
                        z: d(&hi.z, &lo.z),
                    }
                })
                .collect()
        })
        .collect();
    let first = cov.visits.first().map(|v| v.1).unwrap_or(rows[0]);
    let surv_x = (0..spec.n_surv())
        .map(|s| ctx.surv_fixed_values(s, &table_lookup(table, first)))
        .collect();
    Ok(SubjectPlan {
        id,
        obs,
        long_grid,
        surv_times,
        surv_basis,
        surv_deriv,
        surv_x,
    })
}

/// Predictions for every subject of `newdata` (longitudinal layout: id, time,
/// covariates and possibly some responses).
pub fn predict(model: &Model, fit: &Fit, newdata: &Table, req: &PredictRequest) -> Result<PredictResult> {
    let spec = &model.spec;
    let grid = req.grid()?;
    let time_name = spec.time_column.clone().unwrap_or_else(|| "time".into());
    let times: Vec<f64> = match &spec.time_column {
        Some(tc) => newdata
            .values(tc)?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| Error::MissingCovariate {
                    row: i + 1,
                    column: tc.clone(),
                })
            })
            .collect::<Result<_>>()?,
        None => vec![0.0; newdata.nrows()],
    };
    let subjects = subject_rows(newdata, &spec.id_column)?;
    if subjects.is_empty() {
        return Err(Error::NoObservations);
    }
    let plans: Vec<SubjectPlan> = subjects
        .into_iter()
        .map(|(id, rows)| plan_subject(model, newdata, id, &rows, &times, &grid, req))
        .collect::<Result<_>>()?;
    let rl = ReLayout::new(model);

    let per_draw: Vec<Vec<Vec<f64>>> = (0..req.n_sample)
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<f64>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            rng.set_stream(i as u64 + 1);
            let (h, u) = fit.draw(model, &mut rng);
            let omega = &fit.points[h].approx.omega;
            let ds = DrawState {
                omega,
                u: &u,
                prior: rl.prior(model, omega),
            };
            plans
                .iter()
                .map(|p| subject_draws(model, &rl, &ds, p, req, req.horizon, &mut rng))
                .collect()
        })
        .collect::<Result<_>>()?;

    let nl = spec.n_long();
    let ns = spec.n_surv();
    let total = req.n_sample * req.n_sample_re;
    let mut result = PredictResult {
        time_name,
        long: vec![],
        surv: vec![],
        long_samples: req.return_samples.then(Vec::new),
        surv_samples: req.return_samples.then(Vec::new),
    };
    for (p_idx, plan) in plans.iter().enumerate() {
        let nt = grid.len();
        let nst = plan.surv_times.len();
        let per_real = nl * nt + 3 * ns * nst;
        let gather = |q: usize| -> Vec<f64> {
            let mut v = Vec::with_capacity(total);
            for d in &per_draw {
                let block = &d[p_idx];
                for r in 0..req.n_sample_re {
                    v.push(block[r * per_real + q]);
                }
            }
            v
        };
        for k in 0..nl {
            for (j, &t) in grid.iter().enumerate() {
                let mut v = gather(k * nt + j);
                if let Some(s) = result.long_samples.as_mut() {
                    s.push(v.clone());
                }
                result.long.push(LongPrediction {
                    id: plan.id.clone(),
                    time: t,
                    outcome: spec.longitudinal[k].response.clone(),
                    stats: Stats::of(&mut v),
                });
            }
        }
        for s in 0..ns {
            for (j, &t) in plan.surv_times.iter().enumerate() {
                let base = nl * nt + 3 * (s * nst + j);
                let (mut hz, mut sv, mut ci) = (gather(base), gather(base + 1), gather(base + 2));
                if let Some(out) = result.surv_samples.as_mut() {
                    out.push((0..total).map(|i| [hz[i], sv[i], ci[i]]).collect());
                }
                result.surv.push(SurvPrediction {
                    id: plan.id.clone(),
                    time: t,
                    outcome: spec.survival[s].event.clone(),
                    haz: Stats::of(&mut hz),
                    surv: req.survival.then(|| Stats::of(&mut sv)),
                    cif: req.cif.then(|| Stats::of(&mut ci)),
                });
            }
        }
    }
    Ok(result)
}

/// Copy of the fitted longitudinal table with missing responses replaced by
/// the posterior mean of the predictor (inverse-linked when `inv_link`).
pub fn impute_missing(model: &Model, fit: &Fit, inv_link: bool, n_sample: usize, seed: u64) -> Result<Table> {
    let table = model
        .long
        .as_ref()
        .ok_or_else(|| Error::Precondition("model has no longitudinal data".into()))?;
    let spec = &model.spec;
    let times: Vec<f64> = match &spec.time_column {
        Some(tc) => table.values(tc)?.iter().map(|v| v.unwrap_or(0.0)).collect(),
        None => vec![0.0; table.nrows()],
    };
    let index: BTreeMap<&str, usize> = model
        .layout
        .subject_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let ids = table.raw(&spec.id_column)?;
    let mut targets: Vec<(usize, usize, crate::design::DesignRow)> = Vec::new();
    for (k, l) in spec.longitudinal.iter().enumerate() {
        let ys = table.values(&l.response)?;
        for r in 0..table.nrows() {
            if ys[r].is_none() {
                let subj = *index
                    .get(ids[r].as_str())
                    .ok_or_else(|| Error::Data(format!("row {} belongs to an unfitted subject", r + 1)))?;
                let look = table_lookup(table, r);
                let row = crate::design::eval_predictor_basis(&model.ctx, &model.layout, k, subj, &look, times[r]);
                targets.push((k, r, row));
            }
        }
    }
    let mut filled: Vec<Vec<Option<f64>>> = spec
        .longitudinal
        .iter()
        .map(|l| table.values(&l.response).map(|v| v.to_vec()))
        .collect::<Result<_>>()?;
    if inv_link {
        let draws = fit.sample_posterior(model, n_sample.max(1), seed);
        for (k, r, row) in &targets {
            let fam: Family = spec.longitudinal[*k].family;
            let m = draws.iter().map(|(_, u)| fam.inverse_link(row.dot(u))).sum::<f64>() / draws.len() as f64;
            filled[*k][*r] = Some(m);
        }
    } else {
        let mean: Vec<f64> = fit.marginals.iter().map(|m| m.mean()).collect();
        for (k, r, row) in &targets {
            filled[*k][*r] = Some(row.dot(&mean));
        }
    }
    let raw = table
        .names()
        .map(|name| -> Result<(String, Vec<String>)> {
            Ok(match spec.longitudinal.iter().position(|l| l.response == name) {
                Some(k) => (
                    name.to_string(),
                    filled[k]
                        .iter()
                        .map(|v| v.map(format_num).unwrap_or_else(|| ".".into()))
                        .collect(),
                ),
                None => (name.to_string(), table.raw(name)?.to_vec()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Table::from_raw_columns(raw)
}
