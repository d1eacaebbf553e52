//! Univariate observation models with analytic derivatives in the linear
//! predictor.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodFamily {
    /// Gaussian with a fixed observation precision.
    GaussianKnownPrecision { precision: f64 },
    /// Gaussian whose log precision is the hyperparameter in `slot`.
    GaussianHyperPrecision { slot: usize },
    /// Poisson counts with the log link.
    Poisson,
}

/// One response value tied to one element of the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub predictor_index: usize,
    pub missing: bool,
}

impl Observation {
    pub fn new(y: f64, predictor_index: usize) -> Self {
        Observation {
            y,
            predictor_index,
            missing: false,
        }
    }

    pub fn missing(predictor_index: usize) -> Self {
        Observation {
            y: f64::NAN,
            predictor_index,
            missing: true,
        }
    }
}

impl LikelihoodFamily {
    /// Parses a family name as written in model-spec files. Names are
    /// case-insensitive; gaussian families still need their precision.
    pub fn parse_name(name: &str) -> Option<&'static str> {
        match name.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Some("gaussian"),
            "poisson" => Some("poisson"),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LikelihoodFamily::Poisson => "poisson",
            _ => "gaussian",
        }
    }

    pub fn hyper_slot(&self) -> Option<usize> {
        match self {
            LikelihoodFamily::GaussianHyperPrecision { slot } => Some(*slot),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LikelihoodFamily::GaussianKnownPrecision { precision } if !(*precision > 0.0) => {
                Err(Error::Validation(format!(
                    "gaussian observation precision must be positive, got {precision}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn check_y(&self, y: f64) -> Result<()> {
        match self {
            LikelihoodFamily::Poisson => {
                if y.is_finite() && y >= 0.0 && y.fract() == 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidObservation(format!(
                        "poisson response must be a nonnegative integer, got {y}"
                    )))
                }
            }
            _ if y.is_finite() => Ok(()),
            _ => Err(Error::InvalidObservation(format!(
                "gaussian response must be finite, got {y}"
            ))),
        }
    }

    fn precision(&self, theta: &[f64]) -> Result<f64> {
        match *self {
            LikelihoodFamily::GaussianKnownPrecision { precision } => Ok(precision),
            LikelihoodFamily::GaussianHyperPrecision { slot } => theta
                .get(slot)
                .map(|t| t.exp())
                .ok_or(Error::HyperSlot {
                    slot,
                    reason: "missing from the hyperparameter vector".into(),
                }),
            LikelihoodFamily::Poisson => Ok(f64::NAN),
        }
    }

    /// `log π(y | η, θ)` including normalizing constants.
    pub fn loglik(&self, y: f64, eta: f64, theta: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        Ok(self.terms(y, eta, theta)?.0)
    }

    pub fn dloglik_deta(&self, y: f64, eta: f64, theta: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        Ok(self.terms(y, eta, theta)?.1)
    }

    pub fn d2loglik_deta2(&self, y: f64, eta: f64, theta: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        Ok(self.terms(y, eta, theta)?.2)
    }

    /// Value, first and second derivative in one pass. `y` is assumed
    /// valid for the family.
    pub fn terms(&self, y: f64, eta: f64, theta: &[f64]) -> Result<(f64, f64, f64)> {
        Ok(match self {
            LikelihoodFamily::Poisson => {
                let mu = eta.exp();
                (y * eta - mu - ln_gamma(y + 1.0), y - mu, -mu)
            }
            _ => {
                let tau = self.precision(theta)?;
                let r = y - eta;
                (
                    0.5 * (tau.ln() - LN_2PI) - 0.5 * tau * r * r,
                    tau * r,
                    -tau,
                )
            }
        })
    }

    /// Observation-scale standard deviation for Gaussian families, used by
    /// predictive sampling.
    pub fn gaussian_sd(&self) -> Option<f64> {
        match self {
            LikelihoodFamily::GaussianKnownPrecision { precision } => Some(1.0 / precision.sqrt()),
            _ => None,
        }
    }
}
