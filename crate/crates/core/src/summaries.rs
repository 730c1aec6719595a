//! User-facing posterior summaries: parameter tables on their natural scales,
//! marginal likelihoods and the DIC/WAIC criteria.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{cholesky_precision, HyperRole, Model};
use crate::inference::{Fit, PosteriorMarginal};
use crate::spec::{AssociationKind, BaselineKind};

pub const COLUMNS: [&str; 5] = ["mean", "sd", "0.025quant", "0.5quant", "0.975quant"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryOptions {
    pub sdcor: bool,
    pub hr: bool,
    pub n_transform: usize,
    pub n_criteria: usize,
    pub seed: u64,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            sdcor: false,
            hr: false,
            n_transform: 10_000,
            n_criteria: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    #[serde(rename = "0.025quant")]
    pub q025: f64,
    #[serde(rename = "0.5quant")]
    pub q50: f64,
    #[serde(rename = "0.975quant")]
    pub q975: f64,
}

impl SummaryRow {
    /// Summary of raw draws; quantiles by linear interpolation of order statistics.
    pub fn from_samples(name: impl Into<String>, samples: &mut [f64]) -> Self {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        SummaryRow {
            name: name.into(),
            mean,
            sd: var.sqrt(),
            q025: sorted_quantile(samples, 0.025),
            q50: sorted_quantile(samples, 0.5),
            q975: sorted_quantile(samples, 0.975),
        }
    }

    pub fn from_marginal(name: impl Into<String>, m: &PosteriorMarginal) -> Self {
        SummaryRow {
            name: name.into(),
            mean: m.mean(),
            sd: m.sd(),
            q025: m.quantile(0.025),
            q50: m.quantile(0.5),
            q975: m.quantile(0.975),
        }
    }

    /// Exponentiated marginal: exact mixture-of-lognormals moments, quantiles mapped through exp.
    pub fn exp_of_marginal(name: impl Into<String>, m: &PosteriorMarginal) -> Self {
        let mean: f64 = m.components.iter().map(|&(w, mu, s)| w * (mu + 0.5 * s * s).exp()).sum();
        let second: f64 = m.components.iter().map(|&(w, mu, s)| w * (2.0 * mu + 2.0 * s * s).exp()).sum();
        SummaryRow {
            name: name.into(),
            mean,
            sd: (second - mean * mean).max(0.0).sqrt(),
            q025: m.quantile(0.025).exp(),
            q50: m.quantile(0.5).exp(),
            q975: m.quantile(0.975).exp(),
        }
    }
}

pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub sections: Vec<Section>,
    pub mlik_integration: f64,
    pub mlik_gaussian: f64,
    pub criteria: Criteria,
    pub sdcor: bool,
    pub hr: bool,
    /// Not serialized, so that summaries of seeded reruns compare byte for byte.
    #[serde(skip)]
    pub seconds: Option<f64>,
}

impl FitSummary {
    pub fn section(&self, title: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.title == title)
    }

    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.sections.iter().flat_map(|s| &s.rows).find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str(&s.title);
            out.push('\n');
            out.push_str(&format_rows(&s.rows));
            out.push('\n');
        }
        let a = "log marginal-likelihood (integration)";
        let b = "log marginal-likelihood (Gaussian)";
        let _ = writeln!(out, "{a}    {b}");
        let _ = writeln!(
            out,
            "{:>wa$}    {:>wb$}",
            format!("{:.2}", self.mlik_integration),
            format!("{:.2}", self.mlik_gaussian),
            wa = a.len(),
            wb = b.len()
        );
        out.push('\n');
        let _ = writeln!(out, "Deviance Information Criterion:  {}", sig(self.criteria.dic, 7));
        let _ = writeln!(out, "Widely applicable Bayesian information criterion:  {}", sig(self.criteria.waic, 7));
        if let Some(t) = self.seconds {
            let _ = writeln!(out, "Computation time: {t:.2} seconds");
        }
        out
    }
}

/// Formats with `digits` significant digits, dropping trailing zeros.
fn sig(x: f64, digits: usize) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let dec = (digits as i32 - 1 - mag).max(0) as usize;
    let s = format!("{x:.dec$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn format_rows(rows: &[SummaryRow]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| [r.mean, r.sd, r.q025, r.q50, r.q975].map(|v| format!("{v:.4}")))
        .collect();
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..5)
        .map(|j| cells.iter().map(|c| c[j].len()).max().unwrap_or(0).max(COLUMNS[j].len()))
        .collect();
    let mut out = format!("{:name_w$}", "");
    for (j, c) in COLUMNS.iter().enumerate() {
        let _ = write!(out, " {:>w$}", c, w = widths[j]);
    }
    out.push('\n');
    for (r, c) in rows.iter().zip(&cells) {
        let _ = write!(out, "{:<name_w$}", r.name);
        for j in 0..5 {
            let _ = write!(out, " {:>w$}", c[j], w = widths[j]);
        }
        out.push('\n');
    }
    out
}

/// Builds every table, drawing hyperparameter samples for nonlinear transforms.
pub fn summarize(model: &Model, fit: &Fit, opts: &SummaryOptions) -> FitSummary {
    let spec = &model.spec;
    let layout = &model.layout;
    let omegas: Vec<Vec<f64>> = fit
        .sample_hyper(opts.n_transform.max(2), opts.seed)
        .iter()
        .map(|t| model.hyper.expand(t))
        .collect();
    let hyper_draws = |f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> { omegas.iter().map(|o| f(o)).collect() };
    let mut sections = Vec::new();

    for (k, l) in spec.longitudinal.iter().enumerate() {
        let mut rows: Vec<SummaryRow> = layout.long_fixed[k]
            .clone()
            .map(|i| SummaryRow::from_marginal(&layout.names[i], &fit.marginals[i]))
            .collect();
        if let Some(h) = hyper_index(model, |r| matches!(r, HyperRole::ResLogPrec { model } if *model == k)) {
            let mut d = hyper_draws(&|o| {
                let var = (-o[h]).exp();
                if opts.sdcor {
                    var.sqrt()
                } else {
                    var
                }
            });
            let name = if opts.sdcor { "Res. err. (sd)" } else { "Res. err. (variance)" };
            rows.push(SummaryRow::from_samples(name, &mut d));
        }
        sections.push(Section {
            title: format!("Longitudinal outcome (L{}, {})", k + 1, l.family.name()),
            rows,
        });
        if let Some(g) = layout.groups.iter().position(|g| g.name == format!("L{}", k + 1)) {
            sections.push(re_section(model, g, &omegas, opts.sdcor, Some(k)));
        }
    }
    if let Some(g) = layout.groups.iter().position(|g| g.name == "L") {
        sections.push(re_section(model, g, &omegas, opts.sdcor, None));
    }

    let ns = spec.n_surv();
    for (s, sv) in spec.survival.iter().enumerate() {
        let tag = format!("_S{}", s + 1);
        let mut rows = Vec::new();
        let fixed = layout.surv_fixed[s].clone();
        let intercept = fixed.start;
        match sv.baseline {
            BaselineKind::Weibull => {
                if let Some(h) = hyper_index(model, |r| matches!(r, HyperRole::WeibullLogShape { model } if *model == s)) {
                    let mut d = hyper_draws(&|o| o[h].exp());
                    rows.push(SummaryRow::from_samples(format!("Weibull (shape){tag}"), &mut d));
                }
                rows.push(SummaryRow::exp_of_marginal(format!("Weibull (scale){tag}"), &fit.marginals[intercept]));
            }
            BaselineKind::Exponential => {
                rows.push(SummaryRow::exp_of_marginal(format!("Exponential (rate){tag}"), &fit.marginals[intercept]));
            }
            BaselineKind::Rw1 | BaselineKind::Rw2 => {
                if let Some(h) = hyper_index(model, |r| matches!(r, HyperRole::RwLogPrec { model } if *model == s)) {
                    let mut d = hyper_draws(&|o| (-o[h]).exp());
                    rows.push(SummaryRow::from_samples(format!("Baseline risk (variance){tag}"), &mut d));
                }
                rows.push(SummaryRow::from_marginal(&layout.names[intercept], &fit.marginals[intercept]));
            }
        }
        for i in fixed.skip(1) {
            let m = &fit.marginals[i];
            rows.push(if opts.hr {
                SummaryRow::exp_of_marginal(&layout.names[i], m)
            } else {
                SummaryRow::from_marginal(&layout.names[i], m)
            });
        }
        if let Some(g) = layout.frailty[s] {
            let h = layout.groups[g].hyper_start;
            let mut d = hyper_draws(&|o| {
                let var = (-2.0 * o[h]).exp();
                if opts.sdcor {
                    var.sqrt()
                } else {
                    var
                }
            });
            let name = if opts.sdcor { "Frailty (sd)" } else { "Frailty (variance)" };
            rows.push(SummaryRow::from_samples(format!("{name}{tag}"), &mut d));
        }
        let title = if ns == 1 {
            "Survival outcome".to_string()
        } else {
            format!("Survival outcome (S{})", s + 1)
        };
        sections.push(Section { title, rows });
    }

    let mut assoc = Vec::new();
    for (h, p) in model.hyper.params.iter().enumerate() {
        if let HyperRole::Assoc { .. } = p.role {
            let mut d = hyper_draws(&|o| o[h]);
            assoc.push(SummaryRow::from_samples(p.name.clone(), &mut d));
        }
    }
    if !assoc.is_empty() {
        sections.push(Section {
            title: "Association longitudinal - survival".into(),
            rows: assoc,
        });
    }

    FitSummary {
        sections,
        mlik_integration: fit.mlik_integration,
        mlik_gaussian: fit.mlik_gaussian,
        criteria: criteria(model, fit, opts.n_criteria, opts.seed),
        sdcor: opts.sdcor,
        hr: opts.hr,
        seconds: None,
    }
}

fn hyper_index(model: &Model, f: impl Fn(&HyperRole) -> bool) -> Option<usize> {
    model.hyper.params.iter().position(|p| f(&p.role))
}

/// Covariance (or sd/correlation) of one random-effect group from the
/// sampled precision Cholesky parameters.
fn re_section(model: &Model, g: usize, omegas: &[Vec<f64>], sdcor: bool, long: Option<usize>) -> Section {
    let group = &model.layout.groups[g];
    let dim = group.dim;
    let nh = group.n_hyper();
    let hs = group.hyper_start;
    let covs: Vec<DMatrix<f64>> = omegas
        .iter()
        .map(|o| {
            let p = cholesky_precision(dim, &o[hs..hs + nh], group.full);
            p.try_inverse().unwrap_or_else(|| DMatrix::from_element(dim, dim, f64::NAN))
        })
        .collect();
    let mut rows = Vec::new();
    for i in 0..dim {
        let mut d: Vec<f64> = covs
            .iter()
            .map(|c| if sdcor { c[(i, i)].sqrt() } else { c[(i, i)] })
            .collect();
        rows.push(SummaryRow::from_samples(&group.labels[i], &mut d));
    }
    if group.full {
        for i in 0..dim {
            for j in i + 1..dim {
                let mut d: Vec<f64> = covs
                    .iter()
                    .map(|c| {
                        if sdcor {
                            (c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt()).clamp(-1.0, 1.0)
                        } else {
                            c[(i, j)]
                        }
                    })
                    .collect();
                rows.push(SummaryRow::from_samples(format!("{}:{}", group.labels[i], group.labels[j]), &mut d));
            }
        }
    }
    let base = if sdcor {
        "Random effects standard deviation / correlation"
    } else {
        "Random effects variance-covariance"
    };
    let title = match long {
        Some(k) => format!("{base} (L{})", k + 1),
        None => base.to_string(),
    };
    Section { title, rows }
}

/// Deviance D = -2 * total log-likelihood at (omega, u).
pub fn deviance(model: &Model, omega: &[f64], u: &[f64]) -> f64 {
    -2.0 * model.loglik(omega, u)
}

/// DIC and WAIC from `n` joint posterior draws, accumulated row by row.
pub fn criteria(model: &Model, fit: &Fit, n: usize, seed: u64) -> Criteria {
    let n = n.max(2);
    let n_rows = model.rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1c0);
    // Per-row running log-sum-exp and Welford moments of the log-likelihood.
    let mut lse_max = vec![f64::NEG_INFINITY; n_rows];
    let mut lse_sum = vec![0.0; n_rows];
    let mut mean = vec![0.0; n_rows];
    let mut m2 = vec![0.0; n_rows];
    let mut dev_sum = 0.0;
    let vals_of: Vec<Vec<f64>> = fit.points.iter().map(|p| model.amap.values(&p.approx.omega)).collect();
    for t in 0..n {
        let (h, u) = fit.draw(model, &mut rng);
        let omega = &fit.points[h].approx.omega;
        let vals = &vals_of[h];
        let mut total = 0.0;
        for r in 0..n_rows {
            let ll = model.row_loglik(r, model.amap.row_eta(r, vals, &u), omega).value;
            total += ll;
            if ll > lse_max[r] {
                lse_sum[r] = lse_sum[r] * (lse_max[r] - ll).exp() + 1.0;
                lse_max[r] = ll;
            } else {
                lse_sum[r] += (ll - lse_max[r]).exp();
            }
            let delta = ll - mean[r];
            mean[r] += delta / (t + 1) as f64;
            m2[r] += delta * (ll - mean[r]);
        }
        dev_sum += -2.0 * total;
    }
    let mean_deviance = dev_sum / n as f64;
    let u_mean: Vec<f64> = fit.marginals.iter().map(|m| m.mean()).collect();
    let d_at_mean = deviance(model, &fit.omega_mean(model), &u_mean);
    let p_d = mean_deviance - d_at_mean;
    let ln_n = (n as f64).ln();
    let lppd: f64 = (0..n_rows).map(|r| lse_max[r] + lse_sum[r].ln() - ln_n).sum();
    let p_waic: f64 = m2.iter().map(|v| v / (n - 1) as f64).sum();
    Criteria {
        dic: mean_deviance + p_d,
        p_d,
        mean_deviance,
        waic: -2.0 * (lppd - p_waic),
        p_waic,
        lppd,
    }
}

/// Association names in reporting order, for callers that want the raw list.
pub fn association_names(model: &Model) -> Vec<(String, AssociationKind)> {
    model
        .hyper
        .params
        .iter()
        .filter_map(|p| match p.role {
            HyperRole::Assoc { kind, .. } => Some((p.name.clone(), kind)),
            _ => None,
        })
        .collect()
}
