//! Posterior predictive distribution of a held-out observation from the
//! marginal of its fitted value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fit::FitOutput;
use crate::likelihood::LikelihoodFamily;
use crate::marginal::{linspace, Marginal};

/// Probability mass the predictive support must hold.
pub const MIN_PREDICTIVE_MASS: f64 = 0.999;
pub const DEFAULT_MAX_COUNT: usize = 100;
/// Widening stops here.
const COUNT_LIMIT: usize = 1 << 22;
const DENSITY_POINTS: usize = 201;

/// Inverse link taking the linear predictor to the observation scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    pub fn for_family(fam: LikelihoodFamily) -> Self {
        match fam {
            LikelihoodFamily::Poisson => Link::Log,
            _ => Link::Identity,
        }
    }

    pub fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveDistribution {
    /// `masses[k] = P(y = k)` for `k = 0..masses.len()`.
    Counts { masses: Vec<f64> },
    Density(Marginal),
}

impl PredictiveDistribution {
    pub fn mean(&self) -> f64 {
        match self {
            PredictiveDistribution::Counts { masses } => masses.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
            PredictiveDistribution::Density(m) => m.expect(|x| x),
        }
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        match self {
            PredictiveDistribution::Counts { masses } => masses
                .iter()
                .enumerate()
                .map(|(k, p)| (k as f64 - mu).powi(2) * p)
                .sum(),
            PredictiveDistribution::Density(m) => m.expect(|x| (x - mu).powi(2)),
        }
    }
}

/// Marginal of observation `i`'s fitted value on the observation scale.
pub fn fitted_value_marginal(fit: &FitOutput, i: usize, link: Link) -> Result<Marginal> {
    let eta = fit.latent_marginal(i)?;
    match link {
        Link::Identity => Ok(eta.clone()),
        Link::Log => eta.transform(f64::exp),
    }
}

fn unsupported_family(fam: LikelihoodFamily) -> Error {
    Error::Unsupported(format!(
        "{} likelihood with an estimated precision needs joint sampling of the predictor and hyperparameters",
        fam.name()
    ))
}

/// Draws `λ` from `marg` and then `y | λ` from the family.
pub fn predictive_by_sampling(marg: &Marginal, fam: LikelihoodFamily, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = marg.sample_with(n, &mut rng);
    match fam {
        LikelihoodFamily::Poisson => {
            if marg.support().0 < 0.0 {
                return Err(Error::InvalidMarginal("poisson mean marginal has negative support".into()));
            }
            Ok(means
                .into_iter()
                .map(|lambda| {
                    if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive mean").sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect())
        }
        LikelihoodFamily::GaussianKnownPrecision { precision } => {
            let noise = Normal::new(0.0, precision.recip().sqrt()).expect("finite sd");
            Ok(means.into_iter().map(|mu| mu + noise.sample(&mut rng)).collect())
        }
        LikelihoodFamily::GaussianHyperPrecision { .. } => Err(unsupported_family(fam)),
    }
}

/// Trapezoid panels of `marg`: `(midpoint, panel mass)`.
fn panels(marg: &Marginal) -> Vec<(f64, f64)> {
    let (xs, ds) = (marg.xs(), marg.ds());
    xs.windows(2)
        .zip(ds.windows(2))
        .map(|(x, d)| (0.5 * (x[0] + x[1]), 0.5 * (d[0] + d[1]) * (x[1] - x[0])))
        .collect()
}

/// Predictive distribution by integrating the family over `marg` panel by
/// panel. For counts the support is `0..=max_count`; fails with
/// `WidenSupport` if that holds less than the required mass.
pub fn predictive_by_quadrature(
    marg: &Marginal,
    fam: LikelihoodFamily,
    max_count: usize,
) -> Result<PredictiveDistribution> {
    let panels = panels(marg);
    let total: f64 = panels.iter().map(|p| p.1).sum();
    match fam {
        LikelihoodFamily::Poisson => {
            if marg.support().0 < 0.0 {
                return Err(Error::InvalidMarginal("poisson mean marginal has negative support".into()));
            }
            let mut masses = vec![0.0; max_count + 1];
            for &(lambda, w) in &panels {
                if w == 0.0 {
                    continue;
                }
                if lambda == 0.0 {
                    masses[0] += w;
                    continue;
                }
                let ll = lambda.ln();
                for (k, m) in masses.iter_mut().enumerate() {
                    let kf = k as f64;
                    *m += w * (kf * ll - lambda - ln_gamma(kf + 1.0)).exp();
                }
            }
            for m in masses.iter_mut() {
                *m /= total;
            }
            let achieved: f64 = masses.iter().sum();
            if achieved < MIN_PREDICTIVE_MASS {
                return Err(Error::WidenSupport { achieved });
            }
            Ok(PredictiveDistribution::Counts { masses })
        }
        LikelihoodFamily::GaussianKnownPrecision { precision } => {
            let s = marg.summarize()?;
            let noise_var = precision.recip();
            let half = 5.0 * (s.sd * s.sd + noise_var).sqrt();
            let grid = linspace(s.mean - half, s.mean + half, DENSITY_POINTS);
            let norm = (2.0 * std::f64::consts::PI * noise_var).sqrt();
            let ds: Vec<f64> = grid
                .iter()
                .map(|&y| {
                    panels
                        .iter()
                        .map(|&(mu, w)| w * (-0.5 * (y - mu).powi(2) / noise_var).exp())
                        .sum::<f64>()
                        / (norm * total)
                })
                .collect();
            Ok(PredictiveDistribution::Density(Marginal::new(grid, ds)?))
        }
        LikelihoodFamily::GaussianHyperPrecision { .. } => Err(unsupported_family(fam)),
    }
}

/// `predictive_by_quadrature` starting at `max_count` and doubling the
/// count support until the mass check passes.
pub fn predictive_auto(marg: &Marginal, fam: LikelihoodFamily, max_count: usize) -> Result<PredictiveDistribution> {
    let mut k = max_count.max(1);
    loop {
        match predictive_by_quadrature(marg, fam, k) {
            Err(Error::WidenSupport { achieved }) if k < COUNT_LIMIT => {
                log::info!("count support 0..={k} holds {achieved:.6}; widening");
                k *= 2;
            }
            other => return other,
        }
    }
}

/// Empirical pmf of integer samples on `0..len`, mass beyond dropped.
pub fn empirical_pmf(samples: &[f64], len: usize) -> Vec<f64> {
    let mut p = vec![0.0; len];
    for &s in samples {
        let k = s as usize;
        if k < len {
            p[k] += 1.0;
        }
    }
    let n = samples.len() as f64;
    p.iter_mut().for_each(|v| *v /= n);
    p
}

/// `½ Σ |p_k − q_k|` over the common length, plus the unmatched tail.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
