//! Gaussian approximation of the latent full conditional `x | θ, y`,
//! found by Newton iteration on the penalized log-likelihood.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::gmrf::{CholeskyFactor, SparseSymmetric, SymbolicCholesky};
use crate::model::LatentGaussianModel;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on `‖Δx‖∞`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tolerance: 1e-8,
            max_iterations: 50,
            max_halvings: 20,
        }
    }
}

/// `N(mode, P⁻¹)` with `P = Q(θ) + diag(c)` matched at the conditional mode.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pub mode: Vec<f64>,
    pub precision: SparseSymmetric,
    pub factor: CholeskyFactor,
    /// Negative second derivative of the log-likelihood at the mode, one per
    /// predictor element.
    pub curvature: Vec<f64>,
    /// `log π(y | x*, θ)`.
    pub log_likelihood: f64,
    /// Log density of the approximation at its own mode.
    pub log_density_at_mode: f64,
    /// Number of Newton updates applied before convergence was detected.
    pub steps: usize,
    variances: OnceLock<Vec<f64>>,
}

impl ConditionalGaussian {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let d: Vec<f64> = x.iter().zip(&self.mode).map(|(a, b)| a - b).collect();
        Ok(self.log_density_at_mode - 0.5 * self.precision.quad_form(&d))
    }

    /// Diagonal of the approximation's covariance, computed once.
    pub fn marginal_variances(&self) -> &[f64] {
        self.variances.get_or_init(|| self.factor.marginal_variances())
    }
}

/// Newton solver bound to one model; reuses the symbolic factorization
/// across hyperparameter values since the sparsity pattern is fixed.
#[derive(Debug, Clone)]
pub struct ConditionalSolver<'m> {
    model: &'m LatentGaussianModel,
    symbolic: Arc<SymbolicCholesky>,
    options: NewtonOptions,
}

impl<'m> ConditionalSolver<'m> {
    pub fn new(model: &'m LatentGaussianModel) -> Result<Self> {
        Self::with_options(model, NewtonOptions::default())
    }

    pub fn with_options(model: &'m LatentGaussianModel, options: NewtonOptions) -> Result<Self> {
        if model.latent_dim() == 0 {
            return Err(Error::EmptyModel);
        }
        let theta = model.expand_theta(&model.initial_free_theta())?;
        let q = model.assemble_joint_precision(&theta)?;
        Ok(ConditionalSolver {
            model,
            symbolic: Arc::new(SymbolicCholesky::analyze(&q, true)),
            options,
        })
    }

    pub fn model(&self) -> &'m LatentGaussianModel {
        self.model
    }

    /// Conditional mode and curvature at full hyperparameter vector `theta`,
    /// starting from `init` (or zero).
    pub fn fit(&self, theta: &[f64], init: Option<&[f64]>) -> Result<ConditionalGaussian> {
        let model = self.model;
        let n = model.latent_dim();
        let n_obs = model.n_obs();
        let q = model.assemble_joint_precision(theta)?;
        let mean = model.prior_mean();
        let q_mean = q.mul_vec(&mean);

        let mut x = match init {
            Some(v) if v.len() == n => v.to_vec(),
            Some(v) => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                })
            }
            None => vec![0.0; n],
        };
        let objective = |x: &[f64]| -> Result<f64> {
            let d: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
            Ok(model.log_likelihood(x, theta)? - 0.5 * model.prior_quad_form(&d, theta)?)
        };

        let mut f_x = objective(&x)?;
        let mut steps = 0;
        let mut last_step = f64::INFINITY;
        let mut converged = false;
        for _ in 0..self.options.max_iterations {
            let (_, grad, curv) = model.likelihood_terms(&x, theta)?;
            let mut h = q.clone();
            h.add_to_diagonal(&pad(&curv, n));
            let mut rhs = q_mean.clone();
            for i in 0..n_obs {
                rhs[i] += grad[i] + curv[i] * x[i];
            }
            let x_new = self.symbolic.factor(&h)?.solve(&rhs)?;
            let delta: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            last_step = delta.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
            if last_step < self.options.tolerance {
                x = x_new;
                converged = true;
                break;
            }
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=self.options.max_halvings {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + scale * d).collect();
                let f_trial = objective(&trial)?;
                if f_trial.is_finite() && f_trial >= f_x - 1e-10 * (1.0 + f_x.abs()) {
                    x = trial;
                    f_x = f_trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence {
                    iterations: steps,
                    residual: last_step,
                });
            }
            steps += 1;
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: steps,
                residual: last_step,
            });
        }

        let (log_likelihood, _, curvature) = model.likelihood_terms(&x, theta)?;
        let mut precision = q;
        precision.add_to_diagonal(&pad(&curvature, n));
        let factor = self.symbolic.factor(&precision)?;
        let log_density_at_mode = -0.5 * n as f64 * LN_2PI + 0.5 * factor.log_det();
        Ok(ConditionalGaussian {
            mode: x,
            precision,
            factor,
            curvature,
            log_likelihood,
            log_density_at_mode,
            steps,
            variances: OnceLock::new(),
        })
    }
}

fn pad(curv: &[f64], n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n];
    d[..curv.len()].copy_from_slice(curv);
    d
}

/// One-shot conditional mode search with default options.
pub fn find_conditional_mode(
    model: &LatentGaussianModel,
    theta: &[f64],
    init: Option<&[f64]>,
) -> Result<ConditionalGaussian> {
    ConditionalSolver::new(model)?.fit(theta, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{LikelihoodFamily, Observation};
    use crate::model::{HyperPrior, LatentComponent, ModelOptions};
    use approx::assert_relative_eq;

    fn scalar_poisson(y: f64) -> LatentGaussianModel {
        LatentGaussianModel::new(
            vec![LatentComponent::intercept().with_prior_precision(1.0)],
            LikelihoodFamily::Poisson,
            vec![Observation::new(y, 0)],
            vec![],
            ModelOptions::default(),
        )
        .unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn poisson_scalar_mode_matches_root() {
        let m = scalar_poisson(5.0);
        let g = find_conditional_mode(&m, &[], None).unwrap();
        // stationarity of 5η − e^η − η²/2
        let root = bisect(|e| 5.0 - e.exp() - e, 0.0, 3.0);
        assert_relative_eq!(root, 1.3066, epsilon = 1e-4);
        assert!((g.mode[1] - root).abs() < 1e-6, "{} vs {root}", g.mode[1]);
        assert!((g.mode[0] - root).abs() < 1e-5);
    }

    #[test]
    fn zero_observations_give_the_prior() {
        let m = LatentGaussianModel::new(
            vec![LatentComponent::rw2("t", vec![], 6, 0)],
            LikelihoodFamily::Poisson,
            vec![],
            vec![HyperPrior::PcPrecision { u: 1.0, alpha: 0.01 }],
            ModelOptions::default(),
        )
        .unwrap();
        let g = find_conditional_mode(&m, &[1.0], None).unwrap();
        assert!(g.mode.iter().all(|&v| v == 0.0));
        assert_eq!(g.precision, m.assemble_joint_precision(&[1.0]).unwrap());
        assert_eq!(g.steps, 0);
    }

    #[test]
    fn gaussian_density_at_mode() {
        let m = scalar_poisson(2.0);
        let g = find_conditional_mode(&m, &[], None).unwrap();
        let expect = -0.5 * 2.0 * LN_2PI + 0.5 * g.factor.log_det();
        assert_relative_eq!(g.log_density(&g.mode).unwrap(), expect, epsilon = 1e-12);
        assert!(g.log_density(&[0.0]).is_err());
    }

    #[test]
    fn one_dimensional_density() {
        // precision 4, mode 0, x = 1
        let m = LatentGaussianModel::new(
            vec![LatentComponent::intercept().with_prior_precision(4.0)],
            LikelihoodFamily::Poisson,
            vec![],
            vec![],
            ModelOptions::default(),
        )
        .unwrap();
        let g = find_conditional_mode(&m, &[], None).unwrap();
        let expect = -2.0 + 0.5 * 4f64.ln() - 0.5 * LN_2PI;
        assert_relative_eq!(g.log_density(&[1.0]).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn warm_start_reaches_same_mode() {
        let ys = [3.0, 8.0, 1.0, 0.0, 12.0];
        let m = LatentGaussianModel::new(
            vec![
                LatentComponent::intercept(),
                LatentComponent::iid("u", (0..5).collect(), 5, 0),
            ],
            LikelihoodFamily::Poisson,
            ys.iter().enumerate().map(|(i, &y)| Observation::new(y, i)).collect(),
            vec![HyperPrior::PcPrecision { u: 1.0, alpha: 0.01 }],
            ModelOptions::default(),
        )
        .unwrap();
        let solver = ConditionalSolver::new(&m).unwrap();
        let cold = solver.fit(&[1.0], None).unwrap();
        let warm = solver.fit(&[1.0], Some(&cold.mode)).unwrap();
        for (a, b) in cold.mode.iter().zip(&warm.mode) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(warm.steps <= 1);
        assert!(cold.curvature.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn large_counts_need_step_halving_but_converge() {
        let ys = [900.0, 1500.0];
        let m = LatentGaussianModel::new(
            vec![LatentComponent::intercept(), LatentComponent::fixed_effect("z", vec![0.0, 1.0])],
            LikelihoodFamily::Poisson,
            ys.iter().enumerate().map(|(i, &y)| Observation::new(y, i)).collect(),
            vec![],
            ModelOptions::default(),
        )
        .unwrap();
        let g = find_conditional_mode(&m, &[], None).unwrap();
        assert!((g.mode[0] - 900f64.ln()).abs() < 0.01);
        assert!((g.mode[1] - 1500f64.ln()).abs() < 0.01);
    }
}
