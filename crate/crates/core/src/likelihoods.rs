//! Per-observation log-likelihoods with analytic derivatives in the linear predictor.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Lognormal,
    Poisson,
    Binomial,
    PoissonSurv,
    ExponentialSurv,
    WeibullSurv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Log,
    Logit,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Family::Gaussian,
            "lognormal" => Family::Lognormal,
            "poisson" => Family::Poisson,
            "binomial" | "bernoulli" => Family::Binomial,
            _ => return Err(Error::UnknownFamily(s.to_string())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Lognormal => "lognormal",
            Family::Poisson => "poisson",
            Family::Binomial => "binomial",
            Family::PoissonSurv => "poisson_surv",
            Family::ExponentialSurv => "exponential_surv",
            Family::WeibullSurv => "weibull_surv",
        }
    }

    pub fn default_link(self) -> Link {
        match self {
            Family::Gaussian | Family::Lognormal => Link::Identity,
            Family::Binomial => Link::Logit,
            _ => Link::Log,
        }
    }

    /// Resolves a user link name ("default" allowed) against this family.
    pub fn resolve_link(self, link: &str) -> Result<Link> {
        let want = match link.to_ascii_lowercase().as_str() {
            "default" | "" => return Ok(self.default_link()),
            "identity" => Link::Identity,
            "log" => Link::Log,
            "logit" => Link::Logit,
            _ => {
                return Err(Error::UnknownLink {
                    family: self.name().into(),
                    link: link.into(),
                })
            }
        };
        if want != self.default_link() {
            return Err(Error::UnknownLink {
                family: self.name().into(),
                link: link.into(),
            });
        }
        Ok(want)
    }

    /// True when the family carries a residual precision hyperparameter.
    pub fn has_precision(self) -> bool {
        matches!(self, Family::Gaussian | Family::Lognormal)
    }

    pub fn inverse_link(self, eta: f64) -> f64 {
        match self.default_link() {
            Link::Identity => {
                if self == Family::Lognormal {
                    eta.exp()
                } else {
                    eta
                }
            }
            Link::Log => eta.exp(),
            Link::Logit => logistic(eta),
        }
    }
}

/// Value, first and second derivative with respect to the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Deriv {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Row-level extras that do not depend on the latent field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extras {
    pub offset: f64,
    pub ntrials: f64,
    /// Interval start for parametric survival rows.
    pub t0: f64,
    /// Interval end for parametric survival rows (the event time on event rows).
    pub t1: f64,
}

impl Default for Extras {
    fn default() -> Self {
        Extras {
            offset: 0.0,
            ntrials: 1.0,
            t0: 0.0,
            t1: 0.0,
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Unchecked kernel used in the inner loops. `hyper` is the family's natural
/// parameter: the residual precision for gaussian kinds, the shape for weibull.
#[inline]
pub fn eval(family: Family, y: f64, eta: f64, hyper: f64, ex: &Extras) -> Deriv {
    match family {
        Family::Gaussian => gaussian(y, eta, hyper),
        Family::Lognormal => {
            let mut d = gaussian(y.ln(), eta, hyper);
            d.value -= y.ln();
            d
        }
        Family::Poisson | Family::PoissonSurv => {
            let mu = (eta + ex.offset).exp();
            Deriv {
                value: y * (eta + ex.offset) - mu - ln_gamma(y + 1.0),
                d1: y - mu,
                d2: -mu,
            }
        }
        Family::Binomial => {
            let n = ex.ntrials;
            let p = logistic(eta);
            Deriv {
                value: y * eta - n * softplus(eta) + ln_choose(n, y),
                d1: y - n * p,
                d2: -n * p * (1.0 - p),
            }
        }
        Family::ExponentialSurv => {
            let e = eta.exp() * (ex.t1 - ex.t0);
            Deriv {
                value: y * eta - e,
                d1: y - e,
                d2: -e,
            }
        }
        Family::WeibullSurv => {
            let a = hyper;
            let inc = ex.t1.powf(a) - ex.t0.powf(a);
            let e = eta.exp() * inc;
            let log_h = if y > 0.0 {
                a.ln() + (a - 1.0) * ex.t1.ln() + eta
            } else {
                0.0
            };
            Deriv {
                value: y * log_h - e,
                d1: y - e,
                d2: -e,
            }
        }
    }
}

#[inline]
fn gaussian(y: f64, eta: f64, tau: f64) -> Deriv {
    let r = y - eta;
    Deriv {
        value: 0.5 * (tau.ln() - LN_2PI) - 0.5 * tau * r * r,
        d1: tau * r,
        d2: -tau,
    }
}

/// Checks that `y` lies in the support of `family`.
pub fn check_support(family: Family, y: f64, ex: &Extras) -> Result<()> {
    let ok = y.is_finite()
        && match family {
            Family::Gaussian => true,
            Family::Lognormal => y > 0.0,
            Family::Poisson | Family::PoissonSurv => y >= 0.0 && y.fract() == 0.0,
            Family::Binomial => y >= 0.0 && y <= ex.ntrials && y.fract() == 0.0,
            Family::ExponentialSurv | Family::WeibullSurv => {
                (y == 0.0 || y == 1.0) && ex.t1 > ex.t0 && ex.t0 >= 0.0
            }
        };
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "response {y} outside the support of the {} family",
            family.name()
        )))
    }
}

/// Checked single-row log-likelihood.
pub fn loglik(family: Family, y: f64, eta: f64, hyper: f64, ex: &Extras) -> Result<Deriv> {
    if !eta.is_finite() {
        return Err(Error::NonFinite(format!("linear predictor {eta}")));
    }
    check_support(family, y, ex)?;
    if family.has_precision() && !(hyper > 0.0 && hyper.is_finite()) {
        return Err(Error::Precondition(format!("precision {hyper} must be positive")));
    }
    if family == Family::WeibullSurv && !(hyper > 0.0 && hyper.is_finite()) {
        return Err(Error::Precondition(format!("weibull shape {hyper} must be positive")));
    }
    Ok(eval(family, y, eta, hyper, ex))
}

/// One observation as seen by [`total_loglik`].
#[derive(Debug, Clone, Copy)]
pub struct ObsView<'a> {
    pub family: Family,
    pub y: Option<f64>,
    pub hyper: f64,
    pub extras: &'a Extras,
}

/// Sums row log-likelihoods in index order; missing responses contribute zero.
/// Returns the total and per-row first and second derivatives.
pub fn total_loglik<'a>(
    rows: impl IntoIterator<Item = ObsView<'a>>,
    eta: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut total = 0.0;
    let mut d1 = Vec::with_capacity(eta.len());
    let mut d2 = Vec::with_capacity(eta.len());
    for (r, &e) in rows.into_iter().zip(eta) {
        match r.y {
            Some(y) => {
                let d = loglik(r.family, y, e, r.hyper, r.extras)?;
                total += d.value;
                d1.push(d.d1);
                d2.push(d.d2);
            }
            None => {
                d1.push(0.0);
                d2.push(0.0);
            }
        }
    }
    Ok((total, d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex() -> Extras {
        Extras::default()
    }

    #[test]
    fn poisson_at_unit_mean() {
        let d = loglik(Family::Poisson, 0.0, 0.0, 0.0, &ex()).unwrap();
        assert!((d.value + 1.0).abs() < 1e-15);
        assert!((d.d1 + 1.0).abs() < 1e-15);
        assert!((d.d2 + 1.0).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_at_zero() {
        let d = loglik(Family::Binomial, 1.0, 0.0, 0.0, &ex()).unwrap();
        assert!((d.value - 0.5f64.ln()).abs() < 1e-15);
        assert!((d.d1 - 0.5).abs() < 1e-15);
        assert!((d.d2 + 0.25).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_at_zero() {
        let d = loglik(Family::Gaussian, 0.0, 0.0, 1.0, &ex()).unwrap();
        assert!((d.value + 0.5 * LN_2PI).abs() < 1e-15);
        assert_eq!(d.d1, 0.0);
        assert_eq!(d.d2, -1.0);
    }

    #[test]
    fn exponential_censored_unit_exposure() {
        let e = Extras {
            t0: 0.0,
            t1: 1.0,
            ..ex()
        };
        let d = loglik(Family::ExponentialSurv, 0.0, 0.0, 0.0, &e).unwrap();
        assert!((d.value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn weibull_shape_two_event_at_one() {
        let e = Extras {
            t0: 0.0,
            t1: 1.0,
            ..ex()
        };
        let d = loglik(Family::WeibullSurv, 1.0, 0.0, 2.0, &e).unwrap();
        assert!((d.value - (2f64.ln() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn weibull_unit_shape_is_exponential() {
        for &(t0, t1, y, eta) in &[(0.0, 1.3, 1.0, 0.4), (0.5, 2.0, 0.0, -1.2), (0.1, 0.2, 1.0, 3.0)] {
            let e = Extras {
                t0,
                t1,
                ..ex()
            };
            let w = eval(Family::WeibullSurv, y, eta, 1.0, &e);
            let x = eval(Family::ExponentialSurv, y, eta, 0.0, &e);
            assert!((w.value - x.value).abs() < 1e-14);
            assert!((w.d1 - x.d1).abs() < 1e-14);
            assert!((w.d2 - x.d2).abs() < 1e-14);
        }
    }

    #[test]
    fn negative_count_rejected() {
        assert!(loglik(Family::Poisson, -1.0, 0.0, 0.0, &ex()).is_err());
        assert!(loglik(Family::Lognormal, 0.0, 0.0, 1.0, &ex()).is_err());
        assert!(loglik(Family::Gaussian, 0.0, f64::NAN, 1.0, &ex()).is_err());
    }

    #[test]
    fn missing_rows_contribute_nothing() {
        let e = ex();
        let rows = (0..3).map(|_| ObsView {
            family: Family::Poisson,
            y: None,
            hyper: 0.0,
            extras: &e,
        });
        let (v, d1, d2) = total_loglik(rows, &[0.3, 1.0, -2.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(d1.iter().chain(&d2).all(|&x| x == 0.0));
    }

    #[test]
    fn links_validated() {
        assert_eq!(Family::Poisson.resolve_link("default").unwrap(), Link::Log);
        assert!(Family::Poisson.resolve_link("logit").is_err());
        assert!(Family::Gaussian.resolve_link("cloglog").is_err());
        assert!(Family::parse("tweedie").is_err());
    }
}
