//! Joint latent field layout, hyperparameter vector, observation rows with
//! association wiring, and the prior precision of the latent field.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Table;
use crate::design::{
    derivative_row, eval_predictor_basis, eval_random_basis, table_lookup, DesignContext, DesignRow,
    SubjectCovariates,
};
use crate::error::{Error, Result};
use crate::likelihoods::{self, Extras, Family};
use crate::spec::{resolve_survival_table, sort_ids, validate_data, AssociationKind, BaselineKind, ModelSpec, ValidationReport};
use crate::sparse::Symbolic;
use crate::surv_augment::{decompose, make_cutpoints, rw_precision, Cutpoints};

const NO_SCALE: u32 = u32::MAX;
const LN_2: f64 = std::f64::consts::LN_2;

/// Source of one dimension of a random-effect group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReSource {
    /// Random term `term` of longitudinal model `model`.
    Long { model: usize, term: usize },
    /// Frailty of survival model `model`.
    Frailty { model: usize },
}

/// Subjects' random effects sharing one precision matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReGroup {
    pub name: String,
    pub dim: usize,
    /// Whether off-diagonal precision entries are estimated.
    pub full: bool,
    /// First latent index; subject i occupies start + i*dim ..
    pub start: usize,
    pub sources: Vec<ReSource>,
    pub labels: Vec<String>,
    /// Index of the group's first hyperparameter.
    pub hyper_start: usize,
}

impl ReGroup {
    pub fn n_hyper(&self) -> usize {
        if self.full {
            self.dim * (self.dim + 1) / 2
        } else {
            self.dim
        }
    }

    pub fn block(&self, subject: usize) -> Range<usize> {
        let s = self.start + subject * self.dim;
        s..s + self.dim
    }
}

/// Positions of every block of the latent field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub n: usize,
    pub n_subjects: usize,
    pub subject_ids: Vec<String>,
    pub long_fixed: Vec<Range<usize>>,
    /// Survival fixed effects, intercept first.
    pub surv_fixed: Vec<Range<usize>>,
    pub groups: Vec<ReGroup>,
    /// For each longitudinal model and random term: (group, position).
    pub re_index: Vec<Vec<(usize, usize)>>,
    pub frailty: Vec<Option<usize>>,
    pub baseline: Vec<Option<Range<usize>>>,
    pub names: Vec<String>,
}

impl LatentLayout {
    pub fn re_col(&self, k: usize, j: usize, subject: usize) -> usize {
        let (g, pos) = self.re_index[k][j];
        self.groups[g].start + subject * self.groups[g].dim + pos
    }

    pub fn frailty_col(&self, s: usize, subject: usize) -> Option<usize> {
        self.frailty[s].map(|g| self.groups[g].start + subject)
    }

    pub fn n_fixed(&self) -> usize {
        self.groups.first().map(|g| g.start).unwrap_or_else(|| {
            self.baseline
                .iter()
                .flatten()
                .map(|r| r.start)
                .min()
                .unwrap_or(self.n)
        })
    }
}

/// Allocates the latent layout: fixed effects, then random-effect blocks by
/// (group, subject), then baselines.
pub fn allocate_layout(
    spec: &ModelSpec,
    ctx: &DesignContext,
    subject_ids: Vec<String>,
    baseline_sizes: &[Option<usize>],
) -> LatentLayout {
    let n_subjects = subject_ids.len();
    let mut names = Vec::new();
    let mut next = 0;
    let mut long_fixed = Vec::new();
    for (k, terms) in ctx.long_fixed.iter().enumerate() {
        long_fixed.push(next..next + terms.len());
        for t in terms {
            names.push(format!("{}_L{}", t.label, k + 1));
        }
        next += terms.len();
    }
    let mut surv_fixed = Vec::new();
    for (s, terms) in ctx.surv_fixed.iter().enumerate() {
        surv_fixed.push(next..next + terms.len());
        for t in terms {
            names.push(format!("{}_S{}", t.label, s + 1));
        }
        next += terms.len();
    }
    let mut groups: Vec<ReGroup> = Vec::new();
    let mut re_index = vec![Vec::new(); spec.n_long()];
    let with_re: Vec<usize> = (0..spec.n_long()).filter(|&k| !spec.longitudinal[k].random.is_empty()).collect();
    let mut push_group = |name: String, members: &[usize], full: bool, groups: &mut Vec<ReGroup>| {
        let g = groups.len();
        let mut sources = Vec::new();
        let mut labels = Vec::new();
        for &k in members {
            for (j, t) in ctx.long_random[k].iter().enumerate() {
                re_index[k].push((g, sources.len()));
                sources.push(ReSource::Long { model: k, term: j });
                labels.push(format!("{}_L{}", t.label, k + 1));
            }
        }
        groups.push(ReGroup {
            name,
            dim: sources.len(),
            full,
            start: 0,
            sources,
            labels,
            hyper_start: 0,
        });
    };
    if spec.cor_long && with_re.len() > 1 {
        push_group("L".into(), &with_re, true, &mut groups);
    } else {
        for &k in &with_re {
            let full = spec.longitudinal[k].cor_re && spec.longitudinal[k].random.len() > 1;
            push_group(format!("L{}", k + 1), &[k], full, &mut groups);
        }
    }
    let mut frailty = vec![None; spec.n_surv()];
    for (s, sv) in spec.survival.iter().enumerate() {
        if sv.frailty {
            frailty[s] = Some(groups.len());
            groups.push(ReGroup {
                name: format!("S{}", s + 1),
                dim: 1,
                full: false,
                start: 0,
                sources: vec![ReSource::Frailty { model: s }],
                labels: vec![format!("Frailty_S{}", s + 1)],
                hyper_start: 0,
            });
        }
    }
    for g in &mut groups {
        g.start = next;
        for i in 0..n_subjects {
            for l in &g.labels {
                names.push(format!("{l}[{}]", subject_ids[i]));
            }
        }
        next += g.dim * n_subjects;
    }
    let mut baseline = Vec::new();
    for (s, m) in baseline_sizes.iter().enumerate() {
        match m {
            Some(m) => {
                baseline.push(Some(next..next + m));
                for i in 0..*m {
                    names.push(format!("Baseline_S{}[{}]", s + 1, i + 1));
                }
                next += m;
            }
            None => baseline.push(None),
        }
    }
    LatentLayout {
        n: next,
        n_subjects,
        subject_ids,
        long_fixed,
        surv_fixed,
        groups,
        re_index,
        frailty,
        baseline,
        names,
    }
}

/// What a hyperparameter controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperRole {
    /// Log residual precision of a gaussian or lognormal marker.
    ResLogPrec { model: usize },
    /// Log of the i-th diagonal entry of the precision Cholesky factor.
    ReLogDiag { group: usize, i: usize },
    /// Strictly lower Cholesky entry (i, j), i > j.
    ReOffDiag { group: usize, i: usize, j: usize },
    RwLogPrec { model: usize },
    WeibullLogShape { model: usize },
    /// Association scalar between longitudinal `long` and survival `surv`.
    Assoc { long: usize, surv: usize, kind: AssociationKind, term: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub role: HyperRole,
    pub init: f64,
    pub fixed: Option<f64>,
}

/// The hyperparameter vector and which components are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperLayout {
    pub params: Vec<HyperParam>,
    pub free: Vec<usize>,
}

impl HyperLayout {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Full vector from the free components.
    pub fn expand(&self, theta: &[f64]) -> Vec<f64> {
        let mut omega: Vec<f64> = self.params.iter().map(|p| p.fixed.unwrap_or(p.init)).collect();
        for (&i, &v) in self.free.iter().zip(theta) {
            omega[i] = v;
        }
        omega
    }

    pub fn initial_free(&self) -> Vec<f64> {
        self.free.iter().map(|&i| self.params[i].init).collect()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free.iter().map(|&i| self.params[i].name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

/// Precision matrix P = L L' from log-Cholesky parameters: `theta` holds the
/// log diagonal first, then the strictly lower entries row by row.
pub fn cholesky_precision(dim: usize, theta: &[f64], full: bool) -> DMatrix<f64> {
    let l = cholesky_factor(dim, theta, full);
    &l * l.transpose()
}

pub fn cholesky_factor(dim: usize, theta: &[f64], full: bool) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        l[(i, i)] = theta[i].exp();
    }
    if full {
        let mut p = dim;
        for i in 1..dim {
            for j in 0..i {
                l[(i, j)] = theta[p];
                p += 1;
            }
        }
    }
    l
}

fn ln_multigamma(d: usize, a: f64) -> f64 {
    let d = d as f64;
    d * (d - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..d as usize).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// Log Wishart density of precision `w` with `r` degrees of freedom and
/// scale parameter `big_r * I` (mean r / big_r * I).
pub fn log_wishart(w: &DMatrix<f64>, r: f64, big_r: f64) -> f64 {
    let d = w.nrows();
    let df = d as f64;
    let logdet_w = match w.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => return f64::NEG_INFINITY,
    };
    let tr = big_r * w.trace();
    0.5 * (r - df - 1.0) * logdet_w - 0.5 * tr + 0.5 * r * df * big_r.ln()
        - 0.5 * r * df * LN_2
        - ln_multigamma(d, r / 2.0)
}

/// Log Wishart prior of a group's precision expressed on the log-Cholesky
/// scale, including the Jacobian of that map. For diagonal-only groups the
/// prior is a product of the one-dimensional marginals.
pub fn log_prior_re(dim: usize, theta: &[f64], full: bool, r: f64, big_r: f64) -> f64 {
    if full {
        let p = cholesky_precision(dim, theta, true);
        let jac = dim as f64 * LN_2
            + (0..dim).map(|i| (dim - i + 1) as f64 * theta[i]).sum::<f64>();
        log_wishart(&p, r, big_r) + jac
    } else {
        (0..dim)
            .map(|i| {
                let p = DMatrix::from_element(1, 1, (2.0 * theta[i]).exp());
                log_wishart(&p, r, big_r) + LN_2 + 2.0 * theta[i]
            })
            .sum()
    }
}

/// log-gamma density of theta = log(tau) with tau ~ Gamma(shape, rate).
pub fn log_gamma_on_log(theta: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + shape * theta - rate * theta.exp()
}

pub fn log_normal_density(x: f64, mean: f64, prec: f64) -> f64 {
    0.5 * (prec / (2.0 * std::f64::consts::PI)).ln() - 0.5 * prec * (x - mean) * (x - mean)
}

/// Which outcome a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Long(usize),
    Surv(usize),
}

/// One likelihood row of the augmented dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsRow {
    pub family: Family,
    pub y: f64,
    pub extras: Extras,
    /// Hyperparameter holding the log precision or log shape.
    pub hyper: Option<usize>,
    pub outcome: Outcome,
    pub subject: usize,
    pub time: f64,
    /// Source table row (longitudinal rows only).
    pub source_row: Option<usize>,
}

/// Sparse predictor map: eta = A(omega) u with entries coef * omega[scale].
#[derive(Debug, Clone, Default)]
pub struct PredictorMap {
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub coef: Vec<f64>,
    pub scale: Vec<u32>,
    /// Distinct columns per row.
    pub uptr: Vec<usize>,
    pub ucol: Vec<u32>,
    /// Entry -> index into the row's distinct columns.
    pub e_local: Vec<u32>,
    /// Slots of the Q* pattern for every pair a <= b of a row's distinct columns.
    pub pptr: Vec<usize>,
    pub pslot: Vec<u32>,
    /// Rows touching each hyperparameter through a scale.
    pub rows_of_hyper: Vec<Vec<usize>>,
}

impl PredictorMap {
    fn push_row(&mut self, entries: &[(usize, f64, Option<usize>)]) {
        if self.row_ptr.is_empty() {
            self.row_ptr.push(0);
            self.uptr.push(0);
        }
        let mut local: Vec<u32> = Vec::new();
        let ustart = self.ucol.len();
        for &(c, v, s) in entries {
            if v == 0.0 {
                continue;
            }
            let pos = match self.ucol[ustart..].iter().position(|&x| x as usize == c) {
                Some(p) => p,
                None => {
                    self.ucol.push(c as u32);
                    self.ucol.len() - ustart - 1
                }
            };
            local.push(pos as u32);
            self.col.push(c as u32);
            self.coef.push(v);
            self.scale.push(s.map(|x| x as u32).unwrap_or(NO_SCALE));
        }
        self.e_local.extend(local);
        self.row_ptr.push(self.col.len());
        self.uptr.push(self.ucol.len());
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len().saturating_sub(1)
    }

    /// Effective coefficient of every entry at `omega`.
    pub fn values(&self, omega: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.scale)
            .map(|(&c, &s)| if s == NO_SCALE { c } else { c * omega[s as usize] })
            .collect()
    }

    pub fn row_eta(&self, r: usize, vals: &[f64], u: &[f64]) -> f64 {
        let mut e = 0.0;
        for p in self.row_ptr[r]..self.row_ptr[r + 1] {
            e += vals[p] * u[self.col[p] as usize];
        }
        e
    }

    pub fn eta(&self, vals: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.row_eta(r, vals, u)).collect()
    }

    /// Adds A' v to `out`.
    pub fn add_transpose(&self, vals: &[f64], v: &[f64], out: &mut [f64]) {
        for r in 0..self.n_rows() {
            if v[r] == 0.0 {
                continue;
            }
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col[p] as usize] += vals[p] * v[r];
            }
        }
    }

    /// Distinct-column coefficients of row `r` into `buf`.
    fn row_local(&self, r: usize, vals: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.resize(self.uptr[r + 1] - self.uptr[r], 0.0);
        for p in self.row_ptr[r]..self.row_ptr[r + 1] {
            buf[self.e_local[p] as usize] += vals[p];
        }
    }

    /// Adds A' diag(w) A into the Q* value array.
    pub fn add_weighted_gram(&self, vals: &[f64], w: &[f64], cx: &mut [f64]) {
        let mut buf = Vec::new();
        for r in 0..self.n_rows() {
            if w[r] == 0.0 {
                continue;
            }
            self.row_local(r, vals, &mut buf);
            let m = buf.len();
            let mut q = self.pptr[r];
            for a in 0..m {
                let wa = w[r] * buf[a];
                for b in a..m {
                    cx[self.pslot[q] as usize] += wa * buf[b];
                    q += 1;
                }
            }
        }
    }
}

/// Structure of the prior precision on the latent field.
#[derive(Debug, Clone)]
pub struct PriorStructure {
    /// Latent indices with independent gaussian priors: (index, mean, precision).
    pub fixed: Vec<(usize, f64, f64)>,
    pub rw: Vec<RwBlock>,
}

#[derive(Debug, Clone)]
pub struct RwBlock {
    pub surv: usize,
    pub range: Range<usize>,
    pub order: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub eigen: Vec<f64>,
    pub hyper: usize,
}

/// Values of the prior precision at a given omega.
#[derive(Debug, Clone)]
pub struct PriorState {
    pub re_prec: Vec<DMatrix<f64>>,
    pub rw_tau: Vec<f64>,
    /// log|Q_prior| + log|A Q_prior^{-1} A'| (constraint part).
    pub log_det: f64,
}

/// The assembled latent Gaussian model.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub ctx: DesignContext,
    pub layout: LatentLayout,
    pub hyper: HyperLayout,
    pub rows: Vec<ObsRow>,
    pub amap: PredictorMap,
    pub prior: PriorStructure,
    /// Sum-to-zero constraints, one column set each.
    pub constraints: Vec<Range<usize>>,
    pub sym: Arc<Symbolic>,
    prior_slots: PriorSlots,
    pub cutpoints: Vec<Option<Cutpoints>>,
    pub long: Option<Table>,
    pub surv: Option<Table>,
    pub subject_cov: Vec<SubjectCovariates>,
    /// Per subject and survival model: the survival table row.
    pub surv_row_of: Vec<Vec<Option<usize>>>,
    pub report: ValidationReport,
    pub max_time: f64,
    pub max_followup: f64,
    pub long_times: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct PriorSlots {
    fixed: Vec<u32>,
    /// Per group: per subject, dim*(dim+1)/2 slots (lower triangle row-major).
    re: Vec<Vec<u32>>,
    rw: Vec<Vec<u32>>,
    rw_diag: Vec<Vec<u32>>,
}

impl Model {
    /// Builds the model from a validated spec and its data tables.
    pub fn build(spec: &ModelSpec, long: Option<&Table>, surv: Option<&Table>) -> Result<Model> {
        let report = validate_data(spec, long, surv)?;
        let surv_table = resolve_survival_table(spec, long, surv)?;
        let long_table = if spec.n_long() > 0 { long.cloned() } else { None };

        // subjects
        let mut ids: Vec<String> = match (&long_table, &surv_table) {
            (Some(l), _) => l.raw(&spec.id_column)?.to_vec(),
            (None, Some(s)) => s.raw(&spec.id_column)?.to_vec(),
            (None, None) => return Err(Error::NoObservations),
        };
        sort_ids(&mut ids);
        ids.dedup();
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let n_subjects = ids.len();

        let long_times: Vec<f64> = match (&long_table, &spec.time_column) {
            (Some(l), Some(tc)) => l.values(tc)?.iter().map(|v| v.unwrap_or(0.0)).collect(),
            (Some(l), None) => vec![0.0; l.nrows()],
            _ => vec![],
        };
        let mut subject_cov = vec![SubjectCovariates::default(); n_subjects];
        let mut subject_of_long = Vec::new();
        if let Some(l) = &long_table {
            let lid = l.raw(&spec.id_column)?;
            for (i, id) in lid.iter().enumerate() {
                let s = index[id.as_str()];
                subject_of_long.push(s);
                subject_cov[s].visits.push((long_times[i], i));
            }
            for c in &mut subject_cov {
                c.visits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            }
        }

        let mut max_exit: f64 = 0.0;
        let mut surv_row_of = vec![vec![None; spec.n_surv()]; n_subjects];
        if let Some(st) = &surv_table {
            let sid = st.raw(&spec.id_column)?;
            for (s, sv) in spec.survival.iter().enumerate() {
                for (row, v) in st.values(&sv.exit)?.iter().enumerate() {
                    max_exit = max_exit.max(v.unwrap_or(0.0));
                    let subj = *index
                        .get(sid[row].as_str())
                        .ok_or_else(|| Error::Data(format!("unknown subject '{}'", sid[row])))?;
                    surv_row_of[subj][s] = Some(row);
                }
            }
        }
        let max_long = long_times.iter().cloned().fold(0.0, f64::max);
        let spline_max = if max_long > 0.0 { max_long } else { max_exit.max(1.0) };
        let max_followup = max_long.max(max_exit).max(f64::MIN_POSITIVE);
        let mut ctx = DesignContext::new(spec, spline_max)?;
        ctx.cs_delta = spec.controls.cs_delta * max_followup;

        // baselines
        let mut cutpoints = Vec::new();
        let mut baseline_sizes = Vec::new();
        for (s, sv) in spec.survival.iter().enumerate() {
            if spec.needs_augmentation(s) {
                let c = match &sv.cutpoints {
                    Some(c) => Cutpoints::new(c.clone())?,
                    None => make_cutpoints(sv.n_intervals, max_exit)?,
                };
                baseline_sizes.push(sv.baseline.rw_order().map(|_| c.n_intervals()));
                cutpoints.push(Some(c));
            } else {
                baseline_sizes.push(None);
                cutpoints.push(None);
            }
        }
        let mut layout = allocate_layout(spec, &ctx, ids.clone(), &baseline_sizes);

        let hyper = build_hyper(spec, &mut layout, long_table.as_ref())?;

        // observation rows
        let mut rows = Vec::new();
        let mut amap = PredictorMap::default();
        let res_hyper: Vec<Option<usize>> = (0..spec.n_long())
            .map(|k| {
                hyper
                    .params
                    .iter()
                    .position(|p| p.role == HyperRole::ResLogPrec { model: k })
            })
            .collect();
        if let Some(l) = &long_table {
            for (k, ls) in spec.longitudinal.iter().enumerate() {
                let y = l.values(&ls.response)?;
                for i in 0..l.nrows() {
                    let Some(yv) = y[i] else { continue };
                    let cov = table_lookup(l, i);
                    let d = eval_predictor_basis(&ctx, &layout, k, subject_of_long[i], &cov, long_times[i]);
                    let entries: Vec<(usize, f64, Option<usize>)> =
                        d.cols.iter().zip(&d.vals).map(|(&c, &v)| (c, v, None)).collect();
                    amap.push_row(&entries);
                    rows.push(ObsRow {
                        family: ls.family,
                        y: yv,
                        extras: Extras {
                            ntrials: ls.ntrials as f64,
                            ..Default::default()
                        },
                        hyper: res_hyper[k],
                        outcome: Outcome::Long(k),
                        subject: subject_of_long[i],
                        time: long_times[i],
                        source_row: Some(i),
                    });
                }
            }
        }
        if let Some(st) = &surv_table {
            let model_view = SurvWiring {
                spec,
                ctx: &ctx,
                layout: &layout,
                hyper: &hyper,
                long: long_table.as_ref(),
                subject_cov: &subject_cov,
            };
            for (s, sv) in spec.survival.iter().enumerate() {
                let exit = st.values(&sv.exit)?;
                let event = st.values(&sv.event)?;
                let entry = match &sv.entry {
                    Some(e) => Some(st.values(e)?),
                    None => None,
                };
                for subj in 0..n_subjects {
                    let Some(row) = surv_row_of[subj][s] else { continue };
                    let t0 = entry.map(|e| e[row].unwrap_or(0.0)).unwrap_or(0.0);
                    let t1 = exit[row].unwrap_or(0.0);
                    let d = event[row].unwrap_or(0.0) == 1.0;
                    let x = ctx.surv_fixed_values(s, &table_lookup(st, row));
                    for (obs, entries) in model_view.rows_for(s, subj, &x, t0, t1, d, cutpoints[s].as_ref())? {
                        amap.push_row(&entries);
                        rows.push(obs);
                    }
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::NoObservations);
        }
        let mut rows_of_hyper = vec![Vec::new(); hyper.len()];
        for r in 0..amap.n_rows() {
            let mut seen: Vec<u32> = amap.scale[amap.row_ptr[r]..amap.row_ptr[r + 1]]
                .iter()
                .copied()
                .filter(|&s| s != NO_SCALE)
                .collect();
            if let Some(h) = rows[r].hyper {
                seen.push(h as u32);
            }
            seen.sort_unstable();
            seen.dedup();
            for s in seen {
                rows_of_hyper[s as usize].push(r);
            }
        }
        amap.rows_of_hyper = rows_of_hyper;

        // prior structure
        let pf = spec.controls.prior_fixed;
        let mut fixed = Vec::new();
        for (k, range) in layout.long_fixed.iter().enumerate() {
            for (j, idx) in range.clone().enumerate() {
                let icpt = ctx.long_fixed[k][j].label == "Intercept";
                fixed.push(if icpt {
                    (idx, pf.mean_intercept, pf.prec_intercept)
                } else {
                    (idx, pf.mean, pf.prec)
                });
            }
        }
        for range in &layout.surv_fixed {
            for (j, idx) in range.clone().enumerate() {
                fixed.push(if j == 0 {
                    (idx, pf.mean_intercept, pf.prec_intercept)
                } else {
                    (idx, pf.mean, pf.prec)
                });
            }
        }
        let mut rw = Vec::new();
        let mut constraints = Vec::new();
        for (s, b) in layout.baseline.iter().enumerate() {
            if let Some(range) = b {
                let order = spec.survival[s].baseline.rw_order().expect("rw baseline");
                let m = range.len();
                let triplets = rw_precision(order, m)?;
                let mut dense = DMatrix::zeros(m, m);
                for &(i, j, v) in &triplets {
                    dense[(i, j)] = v;
                    dense[(j, i)] = v;
                }
                let eigen = SymmetricEigen::new(dense).eigenvalues.iter().map(|v| v.max(0.0)).collect();
                let h = hyper
                    .params
                    .iter()
                    .position(|p| p.role == HyperRole::RwLogPrec { model: s })
                    .expect("rw hyperparameter");
                rw.push(RwBlock {
                    surv: s,
                    range: range.clone(),
                    order,
                    triplets,
                    eigen,
                    hyper: h,
                });
                constraints.push(range.clone());
            }
        }
        let prior = PriorStructure { fixed, rw };

        // sparsity pattern
        let n = layout.n;
        let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for g in &layout.groups {
            for subj in 0..n_subjects {
                let b = g.block(subj);
                if g.full {
                    for i in b.clone() {
                        for j in b.start..i {
                            pairs.push((i, j));
                        }
                    }
                }
            }
        }
        for blk in &prior.rw {
            for &(i, j, _) in &blk.triplets {
                pairs.push((blk.range.start + i, blk.range.start + j));
            }
        }
        for r in 0..amap.n_rows() {
            let u = &amap.ucol[amap.uptr[r]..amap.uptr[r + 1]];
            for a in 0..u.len() {
                for b in a + 1..u.len() {
                    pairs.push((u[a] as usize, u[b] as usize));
                }
            }
        }
        pairs.sort_unstable_by_key(|&(i, j)| if i >= j { (i, j) } else { (j, i) });
        pairs.dedup_by_key(|p| if p.0 >= p.1 { *p } else { (p.1, p.0) });
        let sym = Symbolic::analyze(n, &pairs, None);

        // slots
        amap.pptr = vec![0];
        for r in 0..amap.n_rows() {
            let u = &amap.ucol[amap.uptr[r]..amap.uptr[r + 1]];
            for a in 0..u.len() {
                for b in a..u.len() {
                    amap.pslot.push(sym.slot(u[a] as usize, u[b] as usize) as u32);
                }
            }
            amap.pptr.push(amap.pslot.len());
        }
        let mut slots = PriorSlots {
            fixed: prior.fixed.iter().map(|&(i, _, _)| sym.slot(i, i) as u32).collect(),
            ..Default::default()
        };
        for g in &layout.groups {
            let mut v = Vec::new();
            for subj in 0..n_subjects {
                let b = g.block(subj);
                for i in 0..g.dim {
                    for j in 0..=i {
                        v.push(sym.slot(b.start + i, b.start + j) as u32);
                    }
                }
            }
            slots.re.push(v);
        }
        for blk in &prior.rw {
            slots.rw.push(
                blk.triplets
                    .iter()
                    .map(|&(i, j, _)| sym.slot(blk.range.start + i, blk.range.start + j) as u32)
                    .collect(),
            );
            slots.rw_diag.push(blk.range.clone().map(|i| sym.slot(i, i) as u32).collect());
        }

        Ok(Model {
            spec: spec.clone(),
            ctx,
            layout,
            hyper,
            rows,
            amap,
            prior,
            constraints,
            sym: Arc::new(sym),
            prior_slots: slots,
            cutpoints,
            long: long_table,
            surv: surv_table,
            subject_cov,
            surv_row_of,
            report,
            max_time: max_exit,
            max_followup,
            long_times,
        })
    }

    pub fn n_latent(&self) -> usize {
        self.layout.n
    }

    /// Natural hyperparameter of a row (precision or Weibull shape).
    #[inline]
    pub fn row_hyper(&self, r: usize, omega: &[f64]) -> f64 {
        match self.rows[r].hyper {
            Some(h) => omega[h].exp(),
            None => 1.0,
        }
    }

    /// Log-likelihood of one row at linear predictor `eta`.
    #[inline]
    pub fn row_loglik(&self, r: usize, eta: f64, omega: &[f64]) -> likelihoods::Deriv {
        let row = &self.rows[r];
        likelihoods::eval(row.family, row.y, eta, self.row_hyper(r, omega), &row.extras)
    }

    /// Sum of all row log-likelihoods.
    pub fn loglik(&self, omega: &[f64], u: &[f64]) -> f64 {
        let vals = self.amap.values(omega);
        (0..self.rows.len())
            .map(|r| self.row_loglik(r, self.amap.row_eta(r, &vals, u), omega).value)
            .sum()
    }

    pub fn prior_state(&self, omega: &[f64]) -> Result<PriorState> {
        if let Some(bad) = omega.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("hyperparameter {}", self.hyper.params[bad].name)));
        }
        let mut log_det = 0.0;
        for &(_, _, p) in &self.prior.fixed {
            log_det += p.ln();
        }
        let mut re_prec = Vec::new();
        for g in &self.layout.groups {
            let th = &omega[g.hyper_start..g.hyper_start + g.n_hyper()];
            let p = cholesky_precision(g.dim, th, g.full);
            let ld: f64 = 2.0 * th[..g.dim].iter().sum::<f64>();
            log_det += ld * self.layout.n_subjects as f64;
            re_prec.push(p);
        }
        let eps = self.spec.controls.rw_diagonal;
        let mut rw_tau = Vec::new();
        for blk in &self.prior.rw {
            let tau = omega[blk.hyper].exp();
            log_det += blk.eigen.iter().map(|&l| (tau * l + eps).ln()).sum::<f64>();
            // 1'(tau R + eps I)^{-1} 1 = m / eps since R 1 = 0
            log_det += (blk.range.len() as f64 / eps).ln();
            rw_tau.push(tau);
        }
        Ok(PriorState {
            re_prec,
            rw_tau,
            log_det,
        })
    }

    /// Prior mean of the latent field.
    pub fn prior_mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.layout.n];
        for &(i, m, _) in &self.prior.fixed {
            mu[i] = m;
        }
        mu
    }

    /// Q_prior x.
    pub fn prior_mul(&self, st: &PriorState, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for &(i, _, p) in &self.prior.fixed {
            out[i] = p * x[i];
        }
        for (g, p) in self.layout.groups.iter().zip(&st.re_prec) {
            for subj in 0..self.layout.n_subjects {
                let b = g.block(subj);
                for i in 0..g.dim {
                    let mut acc = 0.0;
                    for j in 0..g.dim {
                        acc += p[(i, j)] * x[b.start + j];
                    }
                    out[b.start + i] = acc;
                }
            }
        }
        let eps = self.spec.controls.rw_diagonal;
        for (blk, &tau) in self.prior.rw.iter().zip(&st.rw_tau) {
            let o = blk.range.start;
            for i in blk.range.clone() {
                out[i] = eps * x[i];
            }
            for &(i, j, v) in &blk.triplets {
                out[o + i] += tau * v * x[o + j];
                if i != j {
                    out[o + j] += tau * v * x[o + i];
                }
            }
        }
        out
    }

    /// Writes Q_prior values into a fresh pattern-aligned array.
    pub fn prior_values(&self, st: &PriorState) -> Vec<f64> {
        let mut cx = vec![0.0; self.sym.nnz_upper()];
        for (&(_, _, p), &slot) in self.prior.fixed.iter().zip(&self.prior_slots.fixed) {
            cx[slot as usize] += p;
        }
        for ((g, p), slots) in self.layout.groups.iter().zip(&st.re_prec).zip(&self.prior_slots.re) {
            let mut q = 0;
            for _ in 0..self.layout.n_subjects {
                for i in 0..g.dim {
                    for j in 0..=i {
                        cx[slots[q] as usize] += p[(i, j)];
                        q += 1;
                    }
                }
            }
        }
        let eps = self.spec.controls.rw_diagonal;
        for (b, blk) in self.prior.rw.iter().enumerate() {
            let tau = st.rw_tau[b];
            for (&(_, _, v), &slot) in blk.triplets.iter().zip(&self.prior_slots.rw[b]) {
                cx[slot as usize] += tau * v;
            }
            for &slot in &self.prior_slots.rw_diag[b] {
                cx[slot as usize] += eps;
            }
        }
        cx
    }

    /// Log prior of the hyperparameters.
    pub fn log_prior_omega(&self, omega: &[f64]) -> f64 {
        log_prior_omega(&self.spec, &self.layout, &self.hyper, omega)
    }

    /// Dense constraint matrix rows (each a sum over a block).
    pub fn constraint_rows(&self) -> &[Range<usize>] {
        &self.constraints
    }

    /// Projects `u` onto the constraint set by removing block means.
    pub fn project_constraints(&self, u: &mut [f64]) {
        for c in &self.constraints {
            let m = u[c.clone()].iter().sum::<f64>() / c.len() as f64;
            for v in &mut u[c.clone()] {
                *v -= m;
            }
        }
    }

    /// Unnormalized exact log posterior log p(y|u,w) + log p(u|w) + log p(w),
    /// the latter on the constraint subspace.
    pub fn log_joint(&self, omega: &[f64], u: &[f64]) -> Result<f64> {
        let st = self.prior_state(omega)?;
        let mu = self.prior_mean();
        let d: Vec<f64> = u.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let qd = self.prior_mul(&st, &d);
        let quad: f64 = d.iter().zip(&qd).map(|(a, b)| a * b).sum();
        let n = self.layout.n as f64 - self.constraints.len() as f64;
        Ok(self.loglik(omega, u) - 0.5 * quad + 0.5 * st.log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
            + self.log_prior_omega(omega))
    }
}

/// Log prior density of the full hyperparameter vector on its internal scale.
pub fn log_prior_omega(spec: &ModelSpec, layout: &LatentLayout, hyper: &HyperLayout, omega: &[f64]) -> f64 {
    let c = &spec.controls;
    let mut total = 0.0;
    for (p, &v) in hyper.params.iter().zip(omega) {
        if p.fixed.is_some() {
            continue;
        }
        total += match &p.role {
            HyperRole::ResLogPrec { .. } => log_gamma_on_log(v, c.prior_res_prec.shape, c.prior_res_prec.rate),
            HyperRole::RwLogPrec { .. } => log_gamma_on_log(v, c.prior_rw.shape, c.prior_rw.rate),
            HyperRole::WeibullLogShape { .. } => {
                log_normal_density(v, c.prior_weibull_logshape.mean, c.prior_weibull_logshape.prec)
            }
            HyperRole::Assoc { kind, .. } => {
                let pr = if *kind == AssociationKind::SreInd { c.prior_sre_ind } else { c.prior_assoc };
                log_normal_density(v, pr.mean, pr.prec)
            }
            HyperRole::ReLogDiag { .. } | HyperRole::ReOffDiag { .. } => 0.0,
        };
    }
    for g in &layout.groups {
        let span = g.hyper_start..g.hyper_start + g.n_hyper();
        if hyper.params[span.clone()].iter().all(|p| p.fixed.is_some()) {
            continue;
        }
        let th = &omega[span];
        total += log_prior_re(g.dim, th, g.full, c.prior_random.r, c.prior_random.big_r);
    }
    total
}

fn build_hyper(spec: &ModelSpec, layout: &mut LatentLayout, long: Option<&Table>) -> Result<HyperLayout> {
    let c = &spec.controls;
    let mut params = Vec::new();
    for (k, l) in spec.longitudinal.iter().enumerate() {
        if l.family.has_precision() {
            // start from the marginal variance of the (log) response
            let mut init = 0.0;
            if let Some(t) = long {
                let ys: Vec<f64> = t
                    .values(&l.response)?
                    .iter()
                    .flatten()
                    .map(|&y| if l.family == Family::Lognormal { y.ln() } else { y })
                    .collect();
                if ys.len() > 1 {
                    let m = ys.iter().sum::<f64>() / ys.len() as f64;
                    let v = ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (ys.len() - 1) as f64;
                    if v > 0.0 && v.is_finite() {
                        init = -v.ln();
                    }
                }
            }
            params.push(HyperParam {
                name: format!("res_logprec_L{}", k + 1),
                role: HyperRole::ResLogPrec { model: k },
                init,
                fixed: None,
            });
        }
    }
    for (g, grp) in layout.groups.iter_mut().enumerate() {
        grp.hyper_start = params.len();
        for i in 0..grp.dim {
            params.push(HyperParam {
                name: format!("re_{}_logdiag_{}", grp.name, i + 1),
                role: HyperRole::ReLogDiag { group: g, i },
                init: 0.0,
                fixed: None,
            });
        }
        if grp.full {
            for i in 1..grp.dim {
                for j in 0..i {
                    params.push(HyperParam {
                        name: format!("re_{}_offdiag_{}_{}", grp.name, i + 1, j + 1),
                        role: HyperRole::ReOffDiag { group: g, i, j },
                        init: 0.0,
                        fixed: None,
                    });
                }
            }
        }
    }
    for (s, sv) in spec.survival.iter().enumerate() {
        match sv.baseline {
            BaselineKind::Rw1 | BaselineKind::Rw2 => params.push(HyperParam {
                name: format!("rw_logprec_S{}", s + 1),
                role: HyperRole::RwLogPrec { model: s },
                init: 2.0,
                fixed: None,
            }),
            BaselineKind::Weibull => params.push(HyperParam {
                name: format!("weibull_logshape_S{}", s + 1),
                role: HyperRole::WeibullLogShape { model: s },
                init: 0.0,
                fixed: None,
            }),
            BaselineKind::Exponential => {}
        }
    }
    for k in 0..spec.n_long() {
        for s in 0..spec.n_surv() {
            let kind = spec.assoc_at(k, s);
            let mut push = |name: String, kind: AssociationKind, term: Option<usize>| {
                params.push(HyperParam {
                    name,
                    role: HyperRole::Assoc {
                        long: k,
                        surv: s,
                        kind,
                        term,
                    },
                    init: c.assoc_init,
                    fixed: None,
                })
            };
            let tag = format!("L{}_S{}", k + 1, s + 1);
            match kind {
                AssociationKind::None => {}
                AssociationKind::Cv => push(format!("CV_{tag}"), AssociationKind::Cv, None),
                AssociationKind::Cs => push(format!("CS_{tag}"), AssociationKind::Cs, None),
                AssociationKind::CvCs => {
                    push(format!("CV_{tag}"), AssociationKind::Cv, None);
                    push(format!("CS_{tag}"), AssociationKind::Cs, None);
                }
                AssociationKind::Sre => push(format!("SRE_{tag}"), AssociationKind::Sre, None),
                AssociationKind::SreInd => {
                    for (j, t) in spec.longitudinal[k].random.iter().enumerate() {
                        push(format!("SRE_{}_{tag}", t.label()), AssociationKind::SreInd, Some(j));
                    }
                }
            }
        }
    }
    let known: BTreeMap<&str, usize> = params.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
    let mut fixed_at = Vec::new();
    for (name, &v) in &c.fix_hyper {
        let i = *known
            .get(name.as_str())
            .ok_or_else(|| Error::Config(format!("fix_hyper names unknown hyperparameter '{name}'")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("fix_hyper value for '{name}' must be finite")));
        }
        fixed_at.push((i, v));
    }
    for (i, v) in fixed_at {
        params[i].fixed = Some(v);
    }
    let free = (0..params.len()).filter(|&i| params[i].fixed.is_none()).collect();
    Ok(HyperLayout { params, free })
}

/// Everything needed to wire survival rows.
struct SurvWiring<'a> {
    spec: &'a ModelSpec,
    ctx: &'a DesignContext,
    layout: &'a LatentLayout,
    hyper: &'a HyperLayout,
    long: Option<&'a Table>,
    subject_cov: &'a [SubjectCovariates],
}

type Entries = Vec<(usize, f64, Option<usize>)>;

impl SurvWiring<'_> {
    fn assoc_hyper(&self, k: usize, s: usize, kind: AssociationKind, term: Option<usize>) -> usize {
        self.hyper
            .params
            .iter()
            .position(|p| {
                p.role
                    == HyperRole::Assoc {
                        long: k,
                        surv: s,
                        kind,
                        term,
                    }
            })
            .expect("association hyperparameter")
    }

    /// Longitudinal predictor row of marker k for a subject at time t.
    fn long_row(&self, k: usize, subj: usize, t: f64, random_only: bool) -> DesignRow {
        let table = self.long.expect("joint models carry longitudinal data");
        let row = self.subject_cov[subj].row_at(t).unwrap_or(0);
        let cov = table_lookup(table, row);
        if random_only {
            eval_random_basis(self.ctx, self.layout, k, subj, &cov, t)
        } else {
            eval_predictor_basis(self.ctx, self.layout, k, subj, &cov, t)
        }
    }

    /// Association entries of survival model s at time t.
    fn assoc_entries(&self, s: usize, subj: usize, t: f64, out: &mut Entries) {
        for k in 0..self.spec.n_long() {
            let kind = self.spec.assoc_at(k, s);
            let cv = matches!(kind, AssociationKind::Cv | AssociationKind::CvCs);
            let cs = matches!(kind, AssociationKind::Cs | AssociationKind::CvCs);
            if cv {
                let h = self.assoc_hyper(k, s, AssociationKind::Cv, None);
                let r = self.long_row(k, subj, t, false);
                out.extend(r.cols.iter().zip(&r.vals).map(|(&c, &v)| (c, v, Some(h))));
            }
            if cs {
                let h = self.assoc_hyper(k, s, AssociationKind::Cs, None);
                let r = derivative_row(|x| self.long_row(k, subj, x, false), t, self.ctx.cs_delta);
                out.extend(r.cols.iter().zip(&r.vals).map(|(&c, &v)| (c, v, Some(h))));
            }
            if kind == AssociationKind::Sre {
                let h = self.assoc_hyper(k, s, AssociationKind::Sre, None);
                let r = self.long_row(k, subj, t, true);
                out.extend(r.cols.iter().zip(&r.vals).map(|(&c, &v)| (c, v, Some(h))));
            }
            if kind == AssociationKind::SreInd {
                for j in 0..self.spec.longitudinal[k].random.len() {
                    let h = self.assoc_hyper(k, s, AssociationKind::SreInd, Some(j));
                    out.push((self.layout.re_col(k, j, subj), 1.0, Some(h)));
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rows_for(
        &self,
        s: usize,
        subj: usize,
        x: &[f64],
        t0: f64,
        t1: f64,
        event: bool,
        cuts: Option<&Cutpoints>,
    ) -> Result<Vec<(ObsRow, Entries)>> {
        let sv = &self.spec.survival[s];
        let mut base: Entries = self.layout.surv_fixed[s].clone().zip(x).map(|(c, &v)| (c, v, None)).collect();
        if let Some(c) = self.layout.frailty_col(s, subj) {
            base.push((c, 1.0, None));
        }
        let shape = self
            .hyper
            .params
            .iter()
            .position(|p| p.role == HyperRole::WeibullLogShape { model: s });
        let family = match sv.baseline {
            BaselineKind::Weibull => Family::WeibullSurv,
            BaselineKind::Exponential => Family::ExponentialSurv,
            _ => Family::PoissonSurv,
        };
        let mut out = Vec::new();
        match cuts {
            None => {
                let mut e = base.clone();
                self.assoc_entries(s, subj, 0.0, &mut e);
                out.push((
                    ObsRow {
                        family,
                        y: if event { 1.0 } else { 0.0 },
                        extras: Extras {
                            offset: (t1 - t0).ln(),
                            ntrials: 1.0,
                            t0,
                            t1,
                        },
                        hyper: shape,
                        outcome: Outcome::Surv(s),
                        subject: subj,
                        time: t1,
                        source_row: None,
                    },
                    e,
                ));
            }
            Some(c) => {
                for p in decompose(t0, t1, event, c, subj, s)? {
                    let mut e = base.clone();
                    if let Some(b) = &self.layout.baseline[s] {
                        e.push((b.start + p.interval, 1.0, None));
                    }
                    self.assoc_entries(s, subj, p.eval_time, &mut e);
                    out.push((
                        ObsRow {
                            family,
                            y: p.y,
                            extras: Extras {
                                offset: p.offset,
                                ntrials: 1.0,
                                t0: p.start,
                                t1: p.end,
                            },
                            hyper: shape,
                            outcome: Outcome::Surv(s),
                            subject: subj,
                            time: p.eval_time,
                            source_row: None,
                        },
                        e,
                    ));
                }
            }
        }
        Ok(out)
    }
}

/// Builds a model straight from configuration text and tables.
pub fn build_model(config: &str, long: Option<&Table>, surv: Option<&Table>) -> Result<Model> {
    let spec = crate::spec::parse_config(config, long, surv)?;
    Model::build(&spec, long, surv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_parametrization() {
        let (a, b, c): (f64, f64, f64) = (1.5, 0.7, -0.3);
        let p = cholesky_precision(2, &[a.ln(), b.ln(), c], true);
        assert!((p[(0, 0)] - a * a).abs() < 1e-14);
        assert!((p[(0, 1)] - a * c).abs() < 1e-14);
        assert!((p[(1, 1)] - (b * b + c * c)).abs() < 1e-14);
        let p = cholesky_precision(1, &[0.0], false);
        assert_eq!(p[(0, 0)], 1.0);
    }

    #[test]
    fn gaussian_prior_at_mean() {
        let v = log_normal_density(0.0, 0.0, 0.01);
        assert!((v - 0.5 * (0.01 / (2.0 * std::f64::consts::PI)).ln()).abs() < 1e-15);
    }

    #[test]
    fn wishart_identity_dim2() {
        // Wishart(10, I) at P = I: |P|^{7/2} e^{-1} / (2^{10} Gamma_2(5)), Gamma_2(5) = sqrt(pi) Gamma(5) Gamma(4.5)
        let p = DMatrix::identity(2, 2);
        let want = -1.0 - 10.0 * LN_2 - 0.5 * std::f64::consts::PI.ln() - ln_gamma(5.0) - ln_gamma(4.5);
        assert!((log_wishart(&p, 10.0, 1.0) - want).abs() < 1e-12);
        // with the Jacobian of theta = 0: 2 log 2
        let lp = log_prior_re(2, &[0.0, 0.0, 0.0], true, 10.0, 1.0);
        assert!((lp - want - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_gamma_integrates_to_one() {
        let (a, b) = (1.0, 0.5);
        let h = 0.001;
        let s: f64 = (-20000..20000).map(|i| log_gamma_on_log(i as f64 * h, a, b).exp() * h).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
