//! Declarative model description parsed from a JSON document, checked against data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Table;
use crate::error::{Error, Result};
use crate::likelihoods::{Family, Link};

/// A product of factors; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    pub factors: Vec<String>,
}

impl Term {
    pub fn intercept() -> Self {
        Term { factors: vec![] }
    }

    pub fn is_intercept(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Term::intercept());
        }
        let factors: Vec<String> = s.split(':').map(|f| f.trim().to_string()).collect();
        let bad = |f: &String| {
            f.is_empty()
                || f == "1"
                || f.chars().any(|c| c.is_whitespace() || "*+()|~^-/".contains(c))
        };
        if factors.iter().any(bad) {
            return Err(Error::MalformedTerm(s.to_string()));
        }
        Ok(Term { factors })
    }

    pub fn from_parts(parts: &[String]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::MalformedTerm("[]".into()));
        }
        Term::parse(&parts.join(":"))
    }

    /// Display name used in summaries ("Intercept", "year", "year:drug").
    pub fn label(&self) -> String {
        if self.is_intercept() {
            "Intercept".into()
        } else {
            self.factors.join(":")
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_intercept() {
            write!(f, "1")
        } else {
            write!(f, "{}", self.factors.join(":"))
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Str(String),
            Parts(Vec<String>),
        }
        let t = match Raw::deserialize(d)? {
            Raw::Str(s) => Term::parse(&s),
            Raw::Parts(p) => Term::from_parts(&p),
        };
        t.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssociationKind {
    #[serde(rename = "")]
    None,
    #[serde(rename = "CV")]
    Cv,
    #[serde(rename = "CS")]
    Cs,
    #[serde(rename = "CV_CS")]
    CvCs,
    #[serde(rename = "SRE")]
    Sre,
    #[serde(rename = "SRE_ind")]
    SreInd,
}

impl AssociationKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "" | "none" => AssociationKind::None,
            "CV" => AssociationKind::Cv,
            "CS" => AssociationKind::Cs,
            "CV_CS" => AssociationKind::CvCs,
            "SRE" => AssociationKind::Sre,
            "SRE_ind" => AssociationKind::SreInd,
            _ => return Err(Error::Config(format!("unknown association '{s}'"))),
        })
    }

    pub fn needs_random_effects(self) -> bool {
        matches!(self, AssociationKind::Sre | AssociationKind::SreInd)
    }

    /// True when the shared quantity can change over follow-up.
    pub fn time_dependent(self) -> bool {
        !matches!(self, AssociationKind::None | AssociationKind::SreInd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Rw1,
    Rw2,
    #[serde(alias = "exponentialsurv")]
    Exponential,
    #[serde(alias = "weibullsurv")]
    Weibull,
}

impl BaselineKind {
    pub fn rw_order(self) -> Option<usize> {
        match self {
            BaselineKind::Rw1 => Some(1),
            BaselineKind::Rw2 => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntStrategy {
    Eb,
    #[default]
    Grid,
}

fn default_link() -> String {
    "default".into()
}
fn default_fixed() -> Vec<Term> {
    vec![Term::intercept()]
}
fn default_true() -> bool {
    true
}
fn default_one() -> u32 {
    1
}
fn default_intervals() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongSpec {
    pub response: String,
    pub family: Family,
    #[serde(default = "default_link", rename = "link")]
    pub link_name: String,
    #[serde(skip)]
    pub link: Option<Link>,
    #[serde(default = "default_fixed")]
    pub fixed: Vec<Term>,
    #[serde(default)]
    pub random: Vec<Term>,
    #[serde(default = "default_true")]
    pub cor_re: bool,
    #[serde(default = "default_one")]
    pub ntrials: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvSpec {
    #[serde(default)]
    pub entry: Option<String>,
    pub exit: String,
    pub event: String,
    #[serde(default)]
    pub fixed: Vec<Term>,
    #[serde(default)]
    pub frailty: bool,
    pub baseline: BaselineKind,
    #[serde(default = "default_intervals")]
    pub n_intervals: usize,
    #[serde(default)]
    pub cutpoints: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeFunctionSpec {
    pub name: String,
    /// Interior knots of a natural cubic spline in the time variable.
    pub knots: Vec<f64>,
    /// Boundary knots; defaults to (0, max observed time).
    #[serde(default)]
    pub boundary: Option<(f64, f64)>,
    /// Zero-based basis column.
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorFixed {
    pub mean: f64,
    pub prec: f64,
    pub mean_intercept: f64,
    pub prec_intercept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRandom {
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussPrior {
    pub mean: f64,
    pub prec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlOptions {
    pub prior_fixed: PriorFixed,
    pub prior_random: PriorRandom,
    pub prior_assoc: GaussPrior,
    pub prior_sre_ind: GaussPrior,
    /// Gamma prior on residual precisions (log-gamma on the log scale).
    pub prior_res_prec: GammaPrior,
    /// Gamma prior on random-walk precisions.
    pub prior_rw: GammaPrior,
    /// Gaussian prior on the Weibull log-shape.
    pub prior_weibull_logshape: GaussPrior,
    pub assoc_init: f64,
    pub int_strategy: IntStrategy,
    pub tolerance: f64,
    pub h: f64,
    pub seed: u64,
    /// Small fixed ridge keeping random-walk priors proper.
    pub rw_diagonal: f64,
    pub grid_dz: f64,
    pub grid_drop: f64,
    /// Central-difference step for slope associations, as a fraction of max follow-up.
    pub cs_delta: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    pub w_floor: f64,
    /// Hyperparameters held at the given internal-scale values.
    pub fix_hyper: BTreeMap<String, f64>,
}

impl Default for ControlOptions {
    fn default() -> Self {
        ControlOptions {
            prior_fixed: PriorFixed {
                mean: 0.0,
                prec: 0.01,
                mean_intercept: 0.0,
                prec_intercept: 0.01,
            },
            prior_random: PriorRandom { r: 10.0, big_r: 1.0 },
            prior_assoc: GaussPrior { mean: 0.0, prec: 0.01 },
            prior_sre_ind: GaussPrior { mean: 0.0, prec: 1.0 },
            prior_res_prec: GammaPrior { shape: 1.0, rate: 5e-5 },
            prior_rw: GammaPrior { shape: 1.0, rate: 5e-5 },
            prior_weibull_logshape: GaussPrior { mean: 0.0, prec: 0.5 },
            assoc_init: 0.1,
            int_strategy: IntStrategy::Grid,
            tolerance: 0.005,
            h: 0.005,
            seed: 1,
            rw_diagonal: 1e-5,
            grid_dz: 1.0,
            grid_drop: 2.5,
            cs_delta: 1e-4,
            max_newton: 100,
            max_outer: 200,
            w_floor: 1e-8,
            fix_hyper: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "id")]
    pub id_column: String,
    #[serde(rename = "time", default)]
    pub time_column: Option<String>,
    #[serde(default)]
    pub longitudinal: Vec<LongSpec>,
    #[serde(default)]
    pub survival: Vec<SurvSpec>,
    #[serde(default, deserialize_with = "de_assoc")]
    pub assoc: Vec<Vec<AssociationKind>>,
    #[serde(default)]
    pub cor_long: bool,
    #[serde(default)]
    pub time_functions: Vec<TimeFunctionSpec>,
    #[serde(default, rename = "control")]
    pub controls: ControlOptions,
}

/// Accepts a matrix, a flat list (one marker or one event), or a single string.
fn de_assoc<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<AssociationKind>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Cell {
        One(String),
        Many(Vec<String>),
    }
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        One(String),
        List(Vec<Cell>),
    }
    let parse = |s: &str| AssociationKind::parse(s).map_err(serde::de::Error::custom);
    Ok(match Option::<Raw>::deserialize(d)? {
        None => vec![],
        Some(Raw::One(s)) => vec![vec![parse(&s)?]],
        Some(Raw::List(cells)) => {
            let mut out = Vec::new();
            for c in cells {
                out.push(match c {
                    Cell::One(s) => vec![parse(&s)?],
                    Cell::Many(v) => v.iter().map(|s| parse(s)).collect::<std::result::Result<_, _>>()?,
                });
            }
            out
        }
    })
}

impl ModelSpec {
    pub fn n_long(&self) -> usize {
        self.longitudinal.len()
    }

    pub fn n_surv(&self) -> usize {
        self.survival.len()
    }

    pub fn assoc_at(&self, k: usize, s: usize) -> AssociationKind {
        self.assoc
            .get(k)
            .and_then(|r| r.get(s))
            .copied()
            .unwrap_or(AssociationKind::None)
    }

    /// True when survival model `s` must be split into follow-up intervals.
    pub fn needs_augmentation(&self, s: usize) -> bool {
        self.survival[s].baseline.rw_order().is_some()
            || (0..self.n_long()).any(|k| self.assoc_at(k, s).time_dependent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Every column name referenced by a term, resolving time functions away.
    fn term_columns<'a>(&'a self, terms: &'a [Term]) -> impl Iterator<Item = &'a str> + 'a {
        terms.iter().flat_map(|t| t.factors.iter()).filter_map(move |f| {
            if Some(f) == self.time_column.as_ref() || self.time_functions.iter().any(|tf| &tf.name == f) {
                None
            } else {
                Some(f.as_str())
            }
        })
    }

    /// Columns of the longitudinal table used by any design.
    pub fn long_design_columns(&self) -> BTreeSet<String> {
        let mut cols = BTreeSet::new();
        for l in &self.longitudinal {
            for c in self.term_columns(&l.fixed).chain(self.term_columns(&l.random)) {
                cols.insert(c.to_string());
            }
        }
        cols
    }

    pub fn surv_design_columns(&self, s: usize) -> BTreeSet<String> {
        self.term_columns(&self.survival[s].fixed).map(String::from).collect()
    }
}

/// Normalizes a freshly deserialized spec and checks internal consistency.
fn normalize(mut spec: ModelSpec) -> Result<ModelSpec> {
    if spec.longitudinal.is_empty() && spec.survival.is_empty() {
        return Err(Error::Config("at least one submodel is required".into()));
    }
    let nl = spec.n_long();
    let ns = spec.n_surv();
    if spec.assoc.is_empty() {
        spec.assoc = vec![vec![AssociationKind::None; ns]; nl];
    } else if nl > 0 && ns > 0 {
        // A flat list means one entry per marker when there is one event,
        // or one entry per event when there is one marker.
        let flat = spec.assoc.iter().all(|r| r.len() == 1);
        if flat && ns > 1 && nl == 1 && spec.assoc.len() == ns {
            spec.assoc = vec![spec.assoc.iter().map(|r| r[0]).collect()];
        }
    }
    if spec.assoc.len() != nl || spec.assoc.iter().any(|r| r.len() != ns) {
        return Err(Error::Config(format!(
            "assoc must have {nl} rows of {ns} entries (longitudinal x survival)"
        )));
    }
    for l in &mut spec.longitudinal {
        l.link = Some(l.family.resolve_link(&l.link_name)?);
        if matches!(l.family, Family::PoissonSurv | Family::ExponentialSurv | Family::WeibullSurv) {
            return Err(Error::UnknownFamily(l.family.name().into()));
        }
        if l.ntrials < 1 {
            return Err(Error::Config("ntrials must be at least 1".into()));
        }
        dedup_terms(&mut l.fixed);
        dedup_terms(&mut l.random);
        if l.fixed.is_empty() && l.random.is_empty() {
            return Err(Error::Config(format!("model for '{}' has no terms", l.response)));
        }
    }
    for s in &mut spec.survival {
        s.fixed.retain(|t| !t.is_intercept());
        dedup_terms(&mut s.fixed);
        if s.n_intervals == 0 {
            return Err(Error::Precondition("n_intervals must be at least 1".into()));
        }
        if let Some(c) = &s.cutpoints {
            if c.len() < 2 || c.windows(2).any(|w| !(w[1] > w[0])) || c.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("cutpoints must be strictly increasing".into()));
            }
            if c[0] != 0.0 {
                return Err(Error::Config("cutpoints must start at 0".into()));
            }
        }
        for t in &s.fixed {
            if let Some(tc) = &spec.time_column {
                if t.factors.contains(tc) {
                    return Err(Error::Config("survival terms cannot depend on time".into()));
                }
            }
        }
    }
    for (k, row) in spec.assoc.iter().enumerate() {
        for &a in row {
            if a.needs_random_effects() && spec.longitudinal[k].random.is_empty() {
                return Err(Error::Config(format!(
                    "association {a:?} needs random effects in longitudinal model L{}",
                    k + 1
                )));
            }
        }
    }
    let c = &spec.controls;
    let positive = [
        c.prior_fixed.prec,
        c.prior_fixed.prec_intercept,
        c.prior_random.big_r,
        c.prior_assoc.prec,
        c.prior_sre_ind.prec,
        c.prior_res_prec.shape,
        c.prior_res_prec.rate,
        c.prior_rw.shape,
        c.prior_rw.rate,
        c.prior_weibull_logshape.prec,
        c.tolerance,
        c.h,
        c.rw_diagonal,
        c.grid_dz,
        c.grid_drop,
        c.cs_delta,
        c.w_floor,
    ];
    if positive.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Config("precisions, tolerances and steps must be positive".into()));
    }
    let max_dim: usize = spec.longitudinal.iter().map(|l| l.random.len()).max().unwrap_or(0);
    let group_dim = if spec.cor_long {
        spec.longitudinal.iter().map(|l| l.random.len()).sum()
    } else {
        max_dim
    };
    if group_dim > 0 && c.prior_random.r <= group_dim as f64 - 1.0 {
        return Err(Error::Config("Wishart degrees of freedom too small for the random-effect dimension".into()));
    }
    let mut names = BTreeSet::new();
    for tf in &spec.time_functions {
        if !names.insert(tf.name.clone()) {
            return Err(Error::Config(format!("duplicate time function '{}'", tf.name)));
        }
        if tf.column > tf.knots.len() {
            return Err(Error::Config(format!(
                "time function '{}' selects column {} of a {}-column basis",
                tf.name,
                tf.column,
                tf.knots.len() + 1
            )));
        }
    }
    if spec.n_long() > 0 && spec.n_surv() > 0 && spec.time_column.is_none() {
        return Err(Error::Config("joint models need a time column".into()));
    }
    Ok(spec)
}

fn dedup_terms(terms: &mut Vec<Term>) {
    let mut seen = BTreeSet::new();
    terms.retain(|t| seen.insert(t.clone()));
}

/// Parses a JSON document into a spec and checks it against the data tables.
pub fn parse_config(config_text: &str, long_data: Option<&Table>, surv_data: Option<&Table>) -> Result<ModelSpec> {
    let spec: ModelSpec = serde_json::from_str(config_text).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown variant") && msg.contains("gaussian") {
            let bad = msg
                .split('`')
                .nth(1)
                .unwrap_or("")
                .to_string();
            Error::UnknownFamily(bad)
        } else if msg.contains("malformed term") {
            Error::MalformedTerm(msg)
        } else {
            Error::Config(msg)
        }
    })?;
    let spec = normalize(spec)?;
    check_columns(&spec, long_data, surv_data)?;
    Ok(spec)
}

fn check_columns(spec: &ModelSpec, long: Option<&Table>, surv: Option<&Table>) -> Result<()> {
    if spec.n_long() > 0 {
        let long = long.ok_or_else(|| Error::Config("longitudinal data required".into()))?;
        long.column(&spec.id_column)?;
        if let Some(t) = &spec.time_column {
            long.column(t)?;
        }
        for l in &spec.longitudinal {
            long.column(&l.response)?;
        }
        for c in spec.long_design_columns() {
            long.column(&c)?;
        }
    }
    if spec.n_surv() > 0 {
        let table = surv.or(long).ok_or_else(|| Error::Config("survival data required".into()))?;
        table.column(&spec.id_column)?;
        for (s, sv) in spec.survival.iter().enumerate() {
            if let Some(e) = &sv.entry {
                table.column(e)?;
            }
            table.column(&sv.exit)?;
            let ev = table.column(&sv.event)?;
            for (row, v) in ev.values.iter().enumerate() {
                if let Some(v) = v {
                    if *v != 0.0 && *v != 1.0 {
                        return Err(Error::NonBinaryEvent {
                            column: sv.event.clone(),
                            row: row + 1,
                            value: *v,
                        });
                    }
                }
            }
            for c in spec.surv_design_columns(s) {
                table.column(&c)?;
            }
        }
    }
    Ok(())
}

/// Sorts subject ids numerically when every id is a number, else lexicographically.
pub fn sort_ids(ids: &mut [String]) {
    let numeric: Option<Vec<f64>> = ids.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if numeric.is_some() {
        ids.sort_by(|a, b| {
            let x: f64 = a.trim().parse().unwrap();
            let y: f64 = b.trim().parse().unwrap();
            x.partial_cmp(&y).unwrap().then_with(|| a.cmp(b))
        });
    } else {
        ids.sort();
    }
}

/// The survival table to use: the given one, or one row per subject taken from
/// the first longitudinal row.
pub fn resolve_survival_table(spec: &ModelSpec, long: Option<&Table>, surv: Option<&Table>) -> Result<Option<Table>> {
    if spec.n_surv() == 0 {
        return Ok(None);
    }
    if let Some(s) = surv {
        return Ok(Some(s.clone()));
    }
    let long = long.ok_or_else(|| Error::Config("survival data required".into()))?;
    let ids = long.raw(&spec.id_column)?;
    let mut seen = BTreeSet::new();
    let first: Vec<usize> = (0..long.nrows()).filter(|&i| seen.insert(ids[i].clone())).collect();
    Ok(Some(long.select_rows(&first)))
}

/// Outcome of [`validate_data`].
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    /// (longitudinal model index, row index) pairs with a missing response.
    pub likelihood_free_rows: Vec<(usize, usize)>,
    /// Subjects present in the data with no usable observation at all.
    pub subjects_without_observations: Vec<String>,
    pub n_subjects: usize,
    pub n_long_rows: usize,
}

pub fn validate_data(spec: &ModelSpec, long: Option<&Table>, surv: Option<&Table>) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let surv_owned = resolve_survival_table(spec, long, surv)?;
    let surv = surv_owned.as_ref();
    let n_long_rows = if spec.n_long() > 0 { long.map(|t| t.nrows()).unwrap_or(0) } else { 0 };
    let n_surv_rows = surv.map(|t| t.nrows()).unwrap_or(0);
    if n_long_rows == 0 && n_surv_rows == 0 {
        return Err(Error::NoObservations);
    }
    report.n_long_rows = n_long_rows;
    let mut has_obs: HashMap<String, bool> = HashMap::new();

    if spec.n_long() > 0 {
        let long = long.expect("checked");
        let ids = long.raw(&spec.id_column)?;
        let mut cols: Vec<String> = spec.long_design_columns().into_iter().collect();
        if let Some(t) = &spec.time_column {
            cols.push(t.clone());
        }
        for c in &cols {
            let v = long.values(c)?;
            if let Some(row) = v.iter().position(|x| x.is_none()) {
                return Err(Error::MissingCovariate {
                    row: row + 1,
                    column: c.clone(),
                });
            }
        }
        for (i, id) in ids.iter().enumerate() {
            if id.trim().is_empty() {
                return Err(Error::MissingCovariate {
                    row: i + 1,
                    column: spec.id_column.clone(),
                });
            }
            has_obs.entry(id.clone()).or_insert(false);
        }
        for (k, l) in spec.longitudinal.iter().enumerate() {
            let y = long.values(&l.response)?;
            let raw = long.raw(&l.response)?;
            for i in 0..long.nrows() {
                match y[i] {
                    Some(v) => {
                        let ex = crate::likelihoods::Extras {
                            ntrials: l.ntrials as f64,
                            ..Default::default()
                        };
                        crate::likelihoods::check_support(l.family, v, &ex)
                            .map_err(|e| Error::Data(format!("row {} of '{}': {e}", i + 1, l.response)))?;
                        has_obs.insert(ids[i].clone(), true);
                    }
                    None => {
                        let cell = raw[i].trim();
                        if !(cell.is_empty() || cell == "." || cell.eq_ignore_ascii_case("na")) {
                            return Err(Error::Data(format!(
                                "row {}: non-numeric response '{}' in '{}'",
                                i + 1,
                                cell,
                                l.response
                            )));
                        }
                        report.likelihood_free_rows.push((k, i));
                    }
                }
            }
        }
    }
    if let Some(surv) = surv {
        let ids = surv.raw(&spec.id_column)?;
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(id.clone()) {
                return Err(Error::Data(format!("subject '{id}' has several survival rows")));
            }
            if spec.n_long() > 0 && !has_obs.contains_key(id) {
                return Err(Error::Data(format!(
                    "subject '{id}' appears in the survival data but has no longitudinal rows"
                )));
            }
        }
        for (s, sv) in spec.survival.iter().enumerate() {
            let exit = surv.values(&sv.exit)?;
            let event = surv.values(&sv.event)?;
            let entry = match &sv.entry {
                Some(e) => Some(surv.values(e)?),
                None => None,
            };
            let mut cols: Vec<String> = spec.surv_design_columns(s).into_iter().collect();
            cols.sort();
            for c in &cols {
                if let Some(row) = surv.values(c)?.iter().position(|x| x.is_none()) {
                    return Err(Error::MissingCovariate {
                        row: row + 1,
                        column: c.clone(),
                    });
                }
            }
            for i in 0..surv.nrows() {
                let t1 = exit[i].ok_or(Error::MissingCovariate {
                    row: i + 1,
                    column: sv.exit.clone(),
                })?;
                let d = event[i].ok_or(Error::MissingCovariate {
                    row: i + 1,
                    column: sv.event.clone(),
                })?;
                if d != 0.0 && d != 1.0 {
                    return Err(Error::NonBinaryEvent {
                        column: sv.event.clone(),
                        row: i + 1,
                        value: d,
                    });
                }
                let t0 = match entry {
                    Some(e) => e[i].ok_or(Error::MissingCovariate {
                        row: i + 1,
                        column: sv.entry.clone().unwrap(),
                    })?,
                    None => 0.0,
                };
                if !(t1 > t0) || t0 < 0.0 {
                    return Err(Error::Data(format!(
                        "row {}: exit time {t1} must exceed entry time {t0} >= 0",
                        i + 1
                    )));
                }
                has_obs.insert(ids[i].clone(), true);
            }
        }
    }
    let mut empty: Vec<String> = has_obs.iter().filter(|(_, &v)| !v).map(|(k, _)| k.clone()).collect();
    sort_ids(&mut empty);
    report.subjects_without_observations = empty;
    report.n_subjects = has_obs.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn long() -> Table {
        Table::from_csv_str("id,year,y,drug\n1,0,1.2,1\n1,1,.,1\n2,0,0.3,0\n").unwrap()
    }
    fn surv() -> Table {
        Table::from_csv_str("id,years,status,drug\n1,2.0,1,1\n2,3.5,0,0\n").unwrap()
    }

    const ONE: &str = r#"{
        "id": "id", "time": "year",
        "longitudinal": [{"response": "y", "family": "gaussian", "fixed": ["1", "year"], "random": ["1"]}],
        "survival": [{"exit": "years", "event": "status", "fixed": ["drug"], "baseline": "weibull"}],
        "assoc": "CV"
    }"#;

    #[test]
    fn single_marker_single_event() {
        let s = parse_config(ONE, Some(&long()), Some(&surv())).unwrap();
        assert_eq!(s.assoc, vec![vec![AssociationKind::Cv]]);
        assert_eq!(s.controls, ControlOptions::default());
        assert_eq!(s.longitudinal[0].link, Some(Link::Identity));
    }

    #[test]
    fn defaults_match_documentation() {
        let c = ControlOptions::default();
        assert_eq!(c.prior_fixed.prec, 0.01);
        assert_eq!(c.prior_fixed.prec_intercept, 0.01);
        assert_eq!((c.prior_random.r, c.prior_random.big_r), (10.0, 1.0));
        assert_eq!((c.prior_assoc.mean, c.prior_assoc.prec), (0.0, 0.01));
        assert_eq!(c.prior_sre_ind.prec, 1.0);
        assert_eq!(c.assoc_init, 0.1);
        assert_eq!(c.tolerance, 0.005);
        assert_eq!(c.h, 0.005);
    }

    #[test]
    fn non_binary_event_rejected() {
        let s = Table::from_csv_str("id,years,status,drug\n1,2.0,2,1\n2,3.5,0,0\n").unwrap();
        let e = parse_config(ONE, Some(&long()), Some(&s)).unwrap_err();
        assert!(matches!(e, Error::NonBinaryEvent { value, .. } if value == 2.0), "{e}");
    }

    #[test]
    fn unknown_family_and_bad_term() {
        let bad = ONE.replace("gaussian", "tweedie");
        assert!(matches!(parse_config(&bad, Some(&long()), Some(&surv())), Err(Error::UnknownFamily(_))));
        let bad = ONE.replace("\"year\"]", "\"year*drug\"]");
        assert!(matches!(parse_config(&bad, Some(&long()), Some(&surv())), Err(Error::MalformedTerm(_))));
        let bad = ONE.replace("\"drug\"", "\"sex\"");
        assert!(matches!(parse_config(&bad, Some(&long()), Some(&surv())), Err(Error::MissingColumn(c)) if c == "sex"));
    }

    #[test]
    fn missing_response_is_likelihood_free() {
        let s = parse_config(ONE, Some(&long()), Some(&surv())).unwrap();
        let r = validate_data(&s, Some(&long()), Some(&surv())).unwrap();
        assert_eq!(r.likelihood_free_rows, vec![(0, 1)]);
        assert_eq!(r.n_subjects, 2);
    }

    #[test]
    fn missing_covariate_names_row_and_column() {
        let l = Table::from_csv_str("id,year,y,drug\n1,0,1.2,1\n1,.,2,1\n2,0,0.3,0\n").unwrap();
        let s = parse_config(ONE, Some(&l), Some(&surv())).unwrap();
        let e = validate_data(&s, Some(&l), Some(&surv())).unwrap_err();
        assert!(matches!(e, Error::MissingCovariate { row: 2, ref column } if column == "year"), "{e}");
    }

    #[test]
    fn empty_data_has_no_observations() {
        let l = Table::from_csv_str("id,year,y,drug\n").unwrap();
        let cfg = r#"{"id":"id","time":"year","longitudinal":[{"response":"y","family":"gaussian"}]}"#;
        let s = parse_config(cfg, Some(&l), None).unwrap();
        assert!(matches!(validate_data(&s, Some(&l), None), Err(Error::NoObservations)));
    }

    #[test]
    fn survival_only_subject_rejected() {
        let sv = Table::from_csv_str("id,years,status,drug\n1,2.0,1,1\n2,3.5,0,0\n9,1,0,0\n").unwrap();
        let s = parse_config(ONE, Some(&long()), Some(&sv)).unwrap();
        assert!(validate_data(&s, Some(&long()), Some(&sv)).is_err());
    }

    #[test]
    fn survival_table_falls_back_to_first_long_row() {
        let l = Table::from_csv_str("id,year,y,years,status\n2,0,1,4,1\n1,0,2,3,0\n2,1,1,4,1\n").unwrap();
        let cfg = r#"{"id":"id","time":"year",
            "longitudinal":[{"response":"y","family":"gaussian"}],
            "survival":[{"exit":"years","event":"status","baseline":"exponential"}]}"#;
        let s = parse_config(cfg, Some(&l), None).unwrap();
        let t = resolve_survival_table(&s, Some(&l), None).unwrap().unwrap();
        assert_eq!(t.raw("id").unwrap(), &["2".to_string(), "1".to_string()]);
    }

    #[test]
    fn assoc_shapes() {
        let cfg = r#"{"id":"id","time":"year",
            "longitudinal":[{"response":"y","family":"gaussian","random":["1"]},{"response":"y","family":"gaussian"}],
            "survival":[{"exit":"years","event":"status","baseline":"rw1"}],
            "assoc":["CV","CS"]}"#;
        let s = parse_config(cfg, Some(&long()), Some(&surv())).unwrap();
        assert_eq!(s.assoc, vec![vec![AssociationKind::Cv], vec![AssociationKind::Cs]]);
        let bad = cfg.replace("[\"CV\",\"CS\"]", "[[\"CV\",\"CV\"],[\"CS\",\"\"]]");
        assert!(parse_config(&bad, Some(&long()), Some(&surv())).is_err());
        let sre = cfg.replace("\"CS\"]", "\"SRE\"]");
        assert!(parse_config(&sre, Some(&long()), Some(&surv())).is_err());
    }
}
