//! The full approximation: hyperparameter mode, support points, per-point
//! conditional marginals and their mixtures.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian_approx::{ConditionalGaussian, ConditionalSolver, NewtonOptions};
use crate::hyper_posterior::{
    find_mode_theta, gaussian_theta_marginal, log_marginal_likelihood, normalized_theta_marginal, LaplaceTarget,
    ModeSearchOptions, ThetaPosterior,
};
use crate::integration::{explore, normalized_weights, Strategy, SupportPoint};
use crate::latent_marginals::{
    gaussian_latent_marginal, laplace_latent_marginal, mix_marginals, LaplaceOptions, LatentStrategy, GAUSSIAN_POINTS,
};
use crate::marginal::Marginal;
use crate::model::LatentGaussianModel;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// `None` picks by the number of free hyperparameters.
    pub strategy: Option<Strategy>,
    pub latent: LatentStrategy,
    pub laplace: LaplaceOptions,
    pub mode_search: ModeSearchOptions,
    pub newton: NewtonOptions,
    /// Starting point for the free hyperparameters.
    pub initial_theta: Option<Vec<f64>>,
    /// Latent indices to produce marginals for; `None` means all.
    pub latent_indices: Option<Vec<usize>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            strategy: None,
            latent: LatentStrategy::Gaussian,
            laplace: LaplaceOptions::default(),
            mode_search: ModeSearchOptions::default(),
            newton: NewtonOptions::default(),
            initial_theta: None,
            latent_indices: None,
        }
    }
}

/// One support point with its conditional approximation.
#[derive(Debug, Clone)]
pub struct SupportFit {
    pub point: SupportPoint,
    /// Full hyperparameter vector, fixed slots included.
    pub theta_full: Vec<f64>,
    /// Normalized mixture weight.
    pub weight: f64,
    pub conditional: Arc<ConditionalGaussian>,
    /// Conditional marginals, aligned with `FitOutput::latent_indices`.
    pub marginals: Vec<Marginal>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub strategy: Strategy,
    pub latent_strategy: LatentStrategy,
    pub theta: ThetaPosterior,
    pub support: Vec<SupportFit>,
    pub latent_indices: Vec<usize>,
    /// Mixture marginals, aligned with `latent_indices`.
    pub latent: Vec<Marginal>,
    /// Marginals of the free hyperparameters on the log-precision scale.
    pub hyper: Vec<Marginal>,
    pub log_marginal_likelihood: f64,
}

impl FitOutput {
    /// Position of latent index `i` among the computed marginals.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.latent_indices.iter().position(|&j| j == i)
    }

    pub fn latent_marginal(&self, i: usize) -> Result<&Marginal> {
        self.position(i)
            .map(|p| &self.latent[p])
            .ok_or(Error::UntrackedIndex(i))
    }
}

pub fn fit(model: &LatentGaussianModel, opts: &FitOptions) -> Result<FitOutput> {
    let solver = ConditionalSolver::with_options(model, opts.newton)?;
    let target = LaplaceTarget::from_solver(solver);
    let d = model.free_slots().len();
    let init = opts.initial_theta.clone().unwrap_or_else(|| model.initial_free_theta());
    let (mut tp, mode_fit) = find_mode_theta(&target, &init, &opts.mode_search)?;
    let strategy = opts.strategy.unwrap_or_else(|| Strategy::auto(d));
    let explored = explore(&target, &mut tp, &mode_fit, strategy)?;
    let points: Vec<SupportPoint> = explored.iter().map(|(p, _)| p.clone()).collect();
    let weights = normalized_weights(&points)?;
    let log_ml = log_marginal_likelihood(&points)?;

    let latent_indices: Vec<usize> = match &opts.latent_indices {
        Some(ix) => {
            if let Some(&bad) = ix.iter().find(|&&i| i >= model.latent_dim()) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    dim: model.latent_dim(),
                });
            }
            ix.clone()
        }
        None => (0..model.latent_dim()).collect(),
    };

    let mut support = Vec::with_capacity(explored.len());
    for ((point, cond), weight) in explored.into_iter().zip(weights) {
        let theta_full = model.expand_theta(&point.theta)?;
        support.push(SupportFit {
            point,
            theta_full,
            weight,
            conditional: cond,
            marginals: Vec::new(),
        });
    }

    let jobs: Vec<(usize, usize)> = (0..support.len())
        .flat_map(|k| latent_indices.iter().map(move |&i| (k, i)))
        .collect();
    let computed: Vec<Marginal> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let s = &support[k];
            match opts.latent {
                LatentStrategy::Gaussian => gaussian_latent_marginal(&s.conditional, i, GAUSSIAN_POINTS),
                LatentStrategy::Laplace => {
                    laplace_latent_marginal(model, &s.theta_full, i, &s.conditional, &opts.laplace)
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut it = computed.into_iter();
    for s in support.iter_mut() {
        s.marginals = it.by_ref().take(latent_indices.len()).collect();
    }

    let latent = (0..latent_indices.len())
        .into_par_iter()
        .map(|p| {
            let parts: Vec<(&Marginal, f64)> = support.iter().map(|s| (&s.marginals[p], s.weight)).collect();
            mix_marginals(&parts)
        })
        .collect::<Result<Vec<_>>>()?;

    let hyper = (0..d)
        .map(|slot| match strategy {
            Strategy::EmpiricalBayes => gaussian_theta_marginal(&tp, slot),
            _ => normalized_theta_marginal(&tp, &points, slot),
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FitOutput {
        strategy,
        latent_strategy: opts.latent,
        theta: tp,
        support,
        latent_indices,
        latent,
        hyper,
        log_marginal_likelihood: log_ml,
    })
}

/// Log-precision marginal mapped to the precision scale.
pub fn precision_marginal(log_precision: &Marginal) -> Result<Marginal> {
    log_precision.transform(f64::exp)
}

/// Log-precision marginal mapped to the standard deviation `τ^{-1/2}`.
pub fn sd_marginal(log_precision: &Marginal) -> Result<Marginal> {
    log_precision.transform(|t| (-0.5 * t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{LikelihoodFamily, Observation};
    use crate::model::{HyperPrior, LatentComponent, ModelOptions};

    fn small_poisson() -> LatentGaussianModel {
        let ys = [3.0, 7.0, 4.0, 9.0, 5.0, 6.0];
        LatentGaussianModel::new(
            vec![
                LatentComponent::intercept(),
                LatentComponent::iid("u", (0..6).collect(), 6, 0),
            ],
            LikelihoodFamily::Poisson,
            ys.iter().enumerate().map(|(i, &y)| Observation::new(y, i)).collect(),
            vec![HyperPrior::PcPrecision { u: 1.0, alpha: 0.01 }],
            ModelOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn mixture_weights_and_alignment() {
        let m = small_poisson();
        let out = fit(&m, &FitOptions::default()).unwrap();
        assert!(matches!(out.strategy, Strategy::Grid { .. }));
        let total: f64 = out.support.iter().map(|s| s.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(out.latent.len(), m.latent_dim());
        for (p, &i) in out.latent_indices.iter().enumerate() {
            assert_eq!(out.latent_marginal(i).unwrap(), &out.latent[p]);
            assert!((out.latent[p].integral() - 1.0).abs() < 1e-6);
        }
        assert_eq!(out.hyper.len(), 1);
        assert!(out.log_marginal_likelihood.is_finite());
    }

    #[test]
    fn selected_indices_only() {
        let m = small_poisson();
        let opts = FitOptions {
            latent_indices: Some(vec![6, 2]),
            strategy: Some(Strategy::EmpiricalBayes),
            ..Default::default()
        };
        let out = fit(&m, &opts).unwrap();
        assert_eq!(out.support.len(), 1);
        assert_eq!(out.latent.len(), 2);
        assert!(out.latent_marginal(0).is_err());
        let bad = FitOptions {
            latent_indices: Some(vec![99]),
            ..Default::default()
        };
        assert!(fit(&m, &bad).is_err());
    }

    #[test]
    fn hyper_scales() {
        let lp = Marginal::gaussian(2.0, 0.3, 201).unwrap();
        let tau = precision_marginal(&lp).unwrap();
        let sd = sd_marginal(&lp).unwrap();
        let q = lp.quantile_at(&[0.1, 0.9]).unwrap();
        assert!((tau.quantile_at(&[0.1]).unwrap()[0] - q[0].exp()).abs() < 1e-3 * q[0].exp());
        assert!((sd.quantile_at(&[0.1]).unwrap()[0] - (-0.5 * q[1]).exp()).abs() < 1e-3);
    }
}
