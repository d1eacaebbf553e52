//! Metropolis–Hastings over conditioning parameters `z_c`, scoring each
//! proposal with the conditional marginal likelihood of a full fit, and
//! the deterministic grid alternative.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions};
use crate::latent_marginals::mix_marginals;
use crate::marginal::Marginal;
use crate::model::LatentGaussianModel;

/// A family of models indexed by the conditioning parameters.
pub trait ConditionedModel: Sync {
    fn dim(&self) -> usize;

    /// Must be deterministic in `zc`.
    fn build(&self, zc: &[f64]) -> Result<LatentGaussianModel>;

    /// `log π(z_c)`; `-∞` outside the support.
    fn log_prior(&self, zc: &[f64]) -> f64;
}

/// `ConditionedModel` from a pair of closures.
pub struct ClosureModel<B, P> {
    dim: usize,
    build: B,
    prior: P,
}

impl<B, P> ClosureModel<B, P>
where
    B: Fn(&[f64]) -> Result<LatentGaussianModel> + Sync,
    P: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, build: B, prior: P) -> Self {
        ClosureModel { dim, build, prior }
    }
}

impl<B, P> ConditionedModel for ClosureModel<B, P>
where
    B: Fn(&[f64]) -> Result<LatentGaussianModel> + Sync,
    P: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn build(&self, zc: &[f64]) -> Result<LatentGaussianModel> {
        (self.build)(zc)
    }

    fn log_prior(&self, zc: &[f64]) -> f64 {
        (self.prior)(zc)
    }
}

pub trait ProposalKernel {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// `log q(current | proposed) − log q(proposed | current)`.
    fn log_ratio(&self, current: &[f64], proposed: &[f64]) -> f64;
}

/// Independent Gaussian steps per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRandomWalk {
    pub scales: Vec<f64>,
}

impl GaussianRandomWalk {
    pub fn new(scales: Vec<f64>) -> Self {
        GaussianRandomWalk { scales }
    }

    pub fn isotropic(dim: usize, scale: f64) -> Self {
        GaussianRandomWalk {
            scales: vec![scale; dim],
        }
    }
}

impl ProposalKernel for GaussianRandomWalk {
    fn propose(&self, current: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        current
            .iter()
            .zip(&self.scales)
            .map(|(z, s)| {
                let e: f64 = StandardNormal.sample(rng);
                z + s * e
            })
            .collect()
    }

    fn log_ratio(&self, _: &[f64], _: &[f64]) -> f64 {
        0.0
    }
}

/// A point of the chain with its conditional fit.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub zc: Vec<f64>,
    pub log_marglik: f64,
    pub log_prior: f64,
    /// Conditional marginals of the tracked latent indices.
    pub marginals: Vec<Marginal>,
    /// Hyperparameter mode of the conditional fit, reused as a warm start.
    pub theta_mode: Vec<f64>,
}

impl ChainState {
    pub fn log_target(&self) -> f64 {
        self.log_marglik + self.log_prior
    }
}

/// Fits the conditional model at `zc`.
pub fn evaluate_conditional<C: ConditionedModel + ?Sized>(
    cm: &C,
    zc: &[f64],
    tracked: &[usize],
    opts: &FitOptions,
    warm_theta: Option<&[f64]>,
) -> Result<ChainState> {
    if zc.len() != cm.dim() {
        return Err(Error::DimensionMismatch {
            expected: cm.dim(),
            got: zc.len(),
        });
    }
    let log_prior = cm.log_prior(zc);
    let model = cm.build(zc)?;
    let mut fo = opts.clone();
    fo.latent_indices = Some(tracked.to_vec());
    if let Some(t) = warm_theta.filter(|t| t.len() == model.free_slots().len()) {
        fo.initial_theta = Some(t.to_vec());
    }
    let out = fit(&model, &fo)?;
    Ok(ChainState {
        zc: zc.to_vec(),
        log_marglik: out.log_marginal_likelihood,
        log_prior,
        marginals: out.latent,
        theta_mode: out.theta.mode,
    })
}

/// Unclamped log acceptance ratio. A proposal with a non-finite target is
/// never accepted.
pub fn log_acceptance_ratio(current_target: f64, proposed_target: f64, log_q_ratio: f64) -> f64 {
    if proposed_target.is_nan() || proposed_target == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    proposed_target - current_target + log_q_ratio
}

pub fn acceptance_probability(current_target: f64, proposed_target: f64, log_q_ratio: f64) -> f64 {
    log_acceptance_ratio(current_target, proposed_target, log_q_ratio).min(0.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The conditional fit failed and the proposal was rejected.
    Failed,
}

/// One Metropolis–Hastings transition.
pub fn mh_step<C, K, R>(
    cm: &C,
    state: &ChainState,
    kernel: &K,
    rng: &mut R,
    tracked: &[usize],
    opts: &FitOptions,
) -> (ChainState, StepOutcome)
where
    C: ConditionedModel + ?Sized,
    K: ProposalKernel + ?Sized,
    R: RngCore,
{
    let proposed = kernel.propose(&state.zc, rng);
    let u: f64 = rng.random();
    let candidate = if proposed == state.zc {
        Ok(state.clone())
    } else if !cm.log_prior(&proposed).is_finite() {
        // outside the prior support; no fit needed
        return (state.clone(), StepOutcome::Rejected);
    } else {
        evaluate_conditional(cm, &proposed, tracked, opts, Some(&state.theta_mode))
    };
    match candidate {
        Ok(c) => {
            let log_a = log_acceptance_ratio(state.log_target(), c.log_target(), kernel.log_ratio(&state.zc, &c.zc));
            if u.ln() < log_a {
                (c, StepOutcome::Accepted)
            } else {
                (state.clone(), StepOutcome::Rejected)
            }
        }
        Err(e) => {
            log::warn!("conditional fit failed at {proposed:?}: {e}");
            (state.clone(), StepOutcome::Failed)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    pub iterations: usize,
    /// `None` discards the first tenth.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub seed: u64,
    pub tracked: Vec<usize>,
    pub fit: FitOptions,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            iterations: 1000,
            burn_in: None,
            thin: 1,
            seed: 1,
            tracked: Vec::new(),
            fit: FitOptions::default(),
        }
    }
}

/// One line of the chain trace, kept for every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRow {
    pub iteration: usize,
    pub zc: Vec<f64>,
    pub log_target: f64,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone)]
pub struct ChainRecord {
    pub trace: Vec<ChainRow>,
    pub tracked: Vec<usize>,
    /// States kept after burn-in and thinning.
    pub kept: Vec<ChainState>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub failures: usize,
}

impl ChainRecord {
    pub fn samples(&self) -> Vec<Vec<f64>> {
        self.kept.iter().map(|s| s.zc.clone()).collect()
    }
}

pub fn run_chain<C, K>(cm: &C, init: &[f64], kernel: &K, opts: &ChainOptions) -> Result<ChainRecord>
where
    C: ConditionedModel + ?Sized,
    K: ProposalKernel + ?Sized,
{
    let burn_in = opts.burn_in.unwrap_or(opts.iterations / 10);
    if opts.iterations <= burn_in {
        return Err(Error::Validation(format!(
            "iterations ({}) must exceed burn-in ({burn_in})",
            opts.iterations
        )));
    }
    if opts.thin == 0 {
        return Err(Error::Validation("thinning interval must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = evaluate_conditional(cm, init, &opts.tracked, &opts.fit, None)?;
    if !state.log_target().is_finite() {
        return Err(Error::NonFiniteObjective(init.to_vec()));
    }
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut kept = Vec::new();
    let (mut accepted, mut failures) = (0usize, 0usize);
    for it in 0..opts.iterations {
        let (next, outcome) = mh_step(cm, &state, kernel, &mut rng, &opts.tracked, &opts.fit);
        state = next;
        match outcome {
            StepOutcome::Accepted if it >= burn_in => accepted += 1,
            StepOutcome::Failed => failures += 1,
            _ => {}
        }
        trace.push(ChainRow {
            iteration: it,
            zc: state.zc.clone(),
            log_target: state.log_target(),
            outcome,
        });
        if it >= burn_in && (it - burn_in) % opts.thin == 0 {
            kept.push(state.clone());
        }
    }
    let acceptance_rate = accepted as f64 / (opts.iterations - burn_in) as f64;
    if acceptance_rate < 0.01 {
        log::warn!("acceptance rate {acceptance_rate:.4} after burn-in; the proposal scale is probably wrong");
    }
    if failures > 0 {
        log::warn!("{failures} proposals rejected after failed conditional fits");
    }
    Ok(ChainRecord {
        trace,
        tracked: opts.tracked.clone(),
        kept,
        acceptance_rate,
        failures,
    })
}

/// Equal-weight average of the kept conditional marginals of latent
/// index `j`.
pub fn bma_marginal(record: &ChainRecord, j: usize) -> Result<Marginal> {
    let p = record.tracked.iter().position(|&t| t == j).ok_or(Error::UntrackedIndex(j))?;
    if record.kept.is_empty() {
        return Err(Error::EmptySupport);
    }
    let w = 1.0 / record.kept.len() as f64;
    let parts: Vec<(&Marginal, f64)> = record.kept.iter().map(|s| (&s.marginals[p], w)).collect();
    mix_marginals(&parts)
}

#[derive(Debug, Clone)]
pub struct GridConditioning {
    pub states: Vec<ChainState>,
    /// Normalized averaging weights, one per grid point.
    pub weights: Vec<f64>,
    /// Density of `z_c` over a one-dimensional grid.
    pub posterior: Option<Marginal>,
    /// Averaged marginals, aligned with the tracked indices.
    pub marginals: Vec<Marginal>,
}

/// Fits the conditional model at every grid point and averages. On an
/// ascending one-dimensional grid the weights are trapezoid masses of the
/// normalized grid posterior; otherwise they are proportional to the
/// target values.
pub fn grid_conditioning<C: ConditionedModel + ?Sized>(
    cm: &C,
    grid: &[Vec<f64>],
    tracked: &[usize],
    opts: &FitOptions,
) -> Result<GridConditioning> {
    if grid.is_empty() {
        return Err(Error::EmptySupport);
    }
    let evals: Vec<Option<ChainState>> = grid
        .par_iter()
        .map(|z| match evaluate_conditional(cm, z, tracked, opts, None) {
            Ok(s) if s.log_target().is_finite() => Some(s),
            Ok(_) => None,
            Err(e) => {
                log::warn!("conditional fit failed at {z:?}: {e}");
                None
            }
        })
        .collect();
    let logs: Vec<f64> = evals
        .iter()
        .map(|s| s.as_ref().map_or(f64::NEG_INFINITY, |s| s.log_target()))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllPointsInvalid);
    }
    let dens: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();

    let one_dim = cm.dim() == 1 && grid.len() >= 2 && grid.windows(2).all(|w| w[1][0] > w[0][0]);
    let cell: Vec<f64> = if one_dim {
        let xs: Vec<f64> = grid.iter().map(|z| z[0]).collect();
        (0..xs.len())
            .map(|k| {
                let left = if k > 0 { xs[k] - xs[k - 1] } else { 0.0 };
                let right = if k + 1 < xs.len() { xs[k + 1] - xs[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    } else {
        vec![1.0; grid.len()]
    };
    let raw: Vec<f64> = dens.iter().zip(&cell).map(|(d, c)| d * c).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let posterior = if one_dim && grid.len() >= crate::marginal::MIN_POINTS {
        Some(Marginal::new(grid.iter().map(|z| z[0]).collect(), dens.clone())?)
    } else {
        None
    };

    let marginals = (0..tracked.len())
        .map(|p| {
            let parts: Vec<(&Marginal, f64)> = evals
                .iter()
                .zip(&weights)
                .filter_map(|(s, &w)| s.as_ref().map(|s| (&s.marginals[p], w)))
                .collect();
            mix_marginals(&parts)
        })
        .collect::<Result<Vec<_>>>()?;
    let states = evals.into_iter().flatten().collect();
    let weights = weights.into_iter().zip(&logs).filter(|(_, l)| l.is_finite()).map(|(w, _)| w).collect();
    Ok(GridConditioning {
        states,
        weights,
        posterior,
        marginals,
    })
}
