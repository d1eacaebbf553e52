//! Unnormalized hyperparameter posterior `log π̃(θ | y)` from the Laplace
//! identity, its mode and curvature, per-slot marginals, and the
//! marginal-likelihood estimate.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian_approx::{ConditionalGaussian, ConditionalSolver};
use crate::integration::{normalized_weights, SupportPoint};
use crate::marginal::{linspace, Marginal};
use crate::model::LatentGaussianModel;
use crate::optim::{nelder_mead_maximize, NelderMeadOptions};
use crate::spline::CubicSpline;

/// Points on the output grid of a hyperparameter marginal.
pub const THETA_MARGINAL_POINTS: usize = 201;

/// Log-density drop below the peak where extrapolated tails are cut.
const TAIL_DROP: f64 = 10.0;

/// Anything that can score a free hyperparameter vector. `Fit` is the
/// by-product of one evaluation, reusable as a warm start for the next.
pub trait HyperTarget: Sync {
    type Fit: Clone + Send + Sync;

    fn dim(&self) -> usize;

    fn evaluate(&self, theta: &[f64], warm: Option<&Self::Fit>) -> Result<(f64, Self::Fit)>;
}

/// `log π(y|x*,θ) + log π(x*|θ) + log π(θ) − log π̃_G(x*|θ,y)` given the
/// Gaussian approximation at full hyperparameter vector `theta`.
pub fn log_posterior_from_fit(
    model: &LatentGaussianModel,
    theta: &[f64],
    fit: &ConditionalGaussian,
) -> Result<f64> {
    let lp = fit.log_likelihood + model.log_prior_latent(&fit.mode, theta)? + model.log_prior_hyper(theta)?
        - fit.log_density_at_mode;
    if lp.is_finite() {
        Ok(lp)
    } else {
        Err(Error::NonFiniteObjective(theta.to_vec()))
    }
}

/// Unnormalized log posterior of the full hyperparameter vector.
pub fn log_posterior_theta(model: &LatentGaussianModel, theta: &[f64]) -> Result<f64> {
    let solver = ConditionalSolver::new(model)?;
    let fit = solver.fit(theta, None)?;
    log_posterior_from_fit(model, theta, &fit)
}

/// The Laplace-approximated target over the free hyperparameter slots.
#[derive(Debug, Clone)]
pub struct LaplaceTarget<'m> {
    solver: ConditionalSolver<'m>,
}

impl<'m> LaplaceTarget<'m> {
    pub fn new(model: &'m LatentGaussianModel) -> Result<Self> {
        Ok(LaplaceTarget {
            solver: ConditionalSolver::new(model)?,
        })
    }

    pub fn from_solver(solver: ConditionalSolver<'m>) -> Self {
        LaplaceTarget { solver }
    }

    pub fn model(&self) -> &'m LatentGaussianModel {
        self.solver.model()
    }
}

impl HyperTarget for LaplaceTarget<'_> {
    type Fit = Arc<ConditionalGaussian>;

    fn dim(&self) -> usize {
        self.model().free_slots().len()
    }

    fn evaluate(&self, theta: &[f64], warm: Option<&Self::Fit>) -> Result<(f64, Self::Fit)> {
        let model = self.model();
        let full = model.expand_theta(theta)?;
        let fit = self.solver.fit(&full, warm.map(|g| &g.mode[..]))?;
        let lp = log_posterior_from_fit(model, &full, &fit)?;
        Ok((lp, Arc::new(fit)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSearchOptions {
    pub simplex: NelderMeadOptions,
    /// Simplex size for the restarts after the first run.
    pub restart_step: f64,
    pub max_restarts: usize,
    /// Central-difference step for the Hessian.
    pub hessian_step: f64,
}

impl Default for ModeSearchOptions {
    fn default() -> Self {
        ModeSearchOptions {
            simplex: NelderMeadOptions::default(),
            restart_step: 0.25,
            max_restarts: 4,
            hessian_step: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThetaPosterior {
    pub mode: Vec<f64>,
    pub log_post_at_mode: f64,
    /// `−∂² log π̃(θ|y)` at the mode.
    pub hessian: DMatrix<f64>,
    /// `V` with `θ = mode + V z`; `Vᵀ H V = I` when the Hessian is PD.
    pub standardizer: DMatrix<f64>,
    pub hessian_pd: bool,
    /// Every `(θ, log π̃)` recorded while exploring the posterior.
    pub evaluations: Vec<(Vec<f64>, f64)>,
}

impl ThetaPosterior {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    pub fn theta_at(&self, z: &[f64]) -> Vec<f64> {
        let mut t = self.mode.clone();
        for (i, ti) in t.iter_mut().enumerate() {
            for (j, zj) in z.iter().enumerate() {
                *ti += self.standardizer[(i, j)] * zj;
            }
        }
        t
    }

    pub fn log_abs_det_standardizer(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.standardizer.determinant().abs().ln()
    }

    /// Posterior covariance implied by the Hessian, if it is PD.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        if !self.hessian_pd {
            return None;
        }
        Some(&self.standardizer * self.standardizer.transpose())
    }

    /// Posterior built from a single evaluation when there is nothing free
    /// to explore.
    pub fn degenerate(log_post: f64) -> Self {
        ThetaPosterior {
            mode: Vec::new(),
            log_post_at_mode: log_post,
            hessian: DMatrix::zeros(0, 0),
            standardizer: DMatrix::zeros(0, 0),
            hessian_pd: true,
            evaluations: vec![(Vec::new(), log_post)],
        }
    }
}

/// Nelder–Mead ascent with restarts, then a central-difference Hessian and
/// its symmetric inverse square root.
pub fn find_mode_theta<T: HyperTarget>(
    target: &T,
    init: &[f64],
    opts: &ModeSearchOptions,
) -> Result<(ThetaPosterior, T::Fit)> {
    let d = target.dim();
    if init.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: init.len(),
        });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("initial hyperparameters must be finite".into()));
    }
    if d == 0 {
        let (lp, fit) = target.evaluate(&[], None)?;
        return Ok((ThetaPosterior::degenerate(lp), fit));
    }

    // warm starts follow the optimizer's own sequence of evaluations
    let warm: RefCell<Option<T::Fit>> = RefCell::new(None);
    let objective = |x: &[f64]| -> f64 {
        let prev = warm.borrow().clone();
        match target.evaluate(x, prev.as_ref()) {
            Ok((lp, fit)) => {
                *warm.borrow_mut() = Some(fit);
                lp
            }
            Err(e) => {
                log::debug!("hyperparameter evaluation failed at {x:?}: {e}");
                f64::NEG_INFINITY
            }
        }
    };
    let mut best = nelder_mead_maximize(objective, init, &opts.simplex);
    if !best.value.is_finite() {
        return Err(Error::NonFiniteObjective(best.x));
    }
    let restart = NelderMeadOptions {
        initial_step: opts.restart_step,
        ..opts.simplex
    };
    for _ in 0..opts.max_restarts {
        let again = nelder_mead_maximize(objective, &best.x, &restart);
        let gain = again.value - best.value;
        if again.value > best.value {
            best = again;
        }
        if gain <= opts.simplex.f_tolerance {
            break;
        }
    }
    if !best.converged {
        log::warn!("hyperparameter mode search stopped after {} evaluations", best.evaluations);
    }

    let mode = best.x;
    let start = warm.borrow().clone();
    let (lp0, mode_fit) = target.evaluate(&mode, start.as_ref())?;
    let hessian = finite_difference_hessian(target, &mode, lp0, &mode_fit, opts.hessian_step)?;
    let (standardizer, hessian_pd) = standardize(&hessian);
    if !hessian_pd {
        log::warn!("hessian at the hyperparameter mode is not positive definite; using raw axes");
    }
    Ok((
        ThetaPosterior {
            mode: mode.clone(),
            log_post_at_mode: lp0,
            hessian,
            standardizer,
            hessian_pd,
            evaluations: vec![(mode, lp0)],
        },
        mode_fit,
    ))
}

fn finite_difference_hessian<T: HyperTarget>(
    target: &T,
    mode: &[f64],
    f0: f64,
    fit: &T::Fit,
    h: f64,
) -> Result<DMatrix<f64>> {
    let d = mode.len();
    let mut offsets: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut o = vec![0.0; d];
            o[i] = s * h;
            offsets.push(o);
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut o = vec![0.0; d];
                o[i] = si * h;
                o[j] = sj * h;
                offsets.push(o);
            }
        }
    }
    let values: Vec<f64> = offsets
        .par_iter()
        .map(|o| {
            let t: Vec<f64> = mode.iter().zip(o).map(|(a, b)| a + b).collect();
            target.evaluate(&t, Some(fit)).map(|r| r.0)
        })
        .collect::<Result<_>>()?;

    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = -(values[2 * i] - 2.0 * f0 + values[2 * i + 1]) / (h * h);
    }
    let mut k = 2 * d;
    for i in 0..d {
        for j in i + 1..d {
            let v = -(values[k] - values[k + 1] - values[k + 2] + values[k + 3]) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
            k += 4;
        }
    }
    Ok(hess)
}

/// Symmetric inverse square root of `h`, or the identity if `h` is not PD.
fn standardize(h: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let d = h.nrows();
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return (DMatrix::identity(d, d), false);
    }
    let u = &eig.eigenvectors;
    let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    (u * scale * u.transpose(), true)
}

/// `log Σ_k exp(log π̃_k) Δ_k`.
pub fn log_marginal_likelihood(points: &[SupportPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptySupport);
    }
    let max = points
        .iter()
        .map(|p| p.log_post + p.weight.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllPointsInvalid);
    }
    let s: f64 = points.iter().map(|p| (p.log_post + p.weight.ln() - max).exp()).sum();
    Ok(max + s.ln())
}

/// Marginal of one free slot on the internal (log-precision) scale.
///
/// In one dimension a spline is fitted through the recorded evaluations.
/// In more dimensions each support point contributes a Gaussian kernel
/// whose width restores the Hessian-implied variance.
pub fn normalized_theta_marginal(tp: &ThetaPosterior, support: &[SupportPoint], slot: usize) -> Result<Marginal> {
    let d = tp.dim();
    if slot >= d {
        return Err(Error::IndexOutOfRange { index: slot, dim: d });
    }
    if d == 1 {
        spline_theta_marginal(&tp.evaluations)
    } else {
        kernel_theta_marginal(tp, support, slot)
    }
}

/// `N(θ*_j, (H⁻¹)_jj)` tabulated on the internal scale.
pub fn gaussian_theta_marginal(tp: &ThetaPosterior, slot: usize) -> Result<Marginal> {
    let cov = tp.covariance().ok_or_else(|| {
        Error::InvalidMarginal("hyperparameter hessian is not positive definite".into())
    })?;
    Marginal::gaussian(tp.mode[slot], cov[(slot, slot)].sqrt(), THETA_MARGINAL_POINTS)
}

fn spline_theta_marginal(evaluations: &[(Vec<f64>, f64)]) -> Result<Marginal> {
    let mut pts: Vec<(f64, f64)> = evaluations
        .iter()
        .filter(|(_, lp)| lp.is_finite())
        .map(|(t, lp)| (t[0], *lp))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|b, a| (b.0 - a.0).abs() < 1e-9);
    if pts.len() < 5 {
        return Err(Error::TooFewEvaluations {
            needed: 5,
            got: pts.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let spline = CubicSpline::new(&xs, &ys)?;
    let top = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = top - TAIL_DROP;
    let n = xs.len();
    let (x_lo, x_hi) = (xs[0], xs[n - 1]);

    // linear tails from the end slopes, stopped at the floor
    let tail_slope = |end: usize, next: usize| -> f64 {
        let s = spline.derivative(xs[end]);
        let chord = (ys[next] - ys[end]) / (xs[next] - xs[end]);
        if s * (xs[next] - xs[end]) > 0.0 {
            s
        } else {
            chord
        }
    };
    let s_lo = tail_slope(0, 1);
    let s_hi = tail_slope(n - 1, n - 2);
    let lo = if s_lo > 0.0 && ys[0] > floor {
        x_lo - (ys[0] - floor) / s_lo
    } else {
        x_lo
    };
    let hi = if s_hi < 0.0 && ys[n - 1] > floor {
        x_hi + (ys[n - 1] - floor) / -s_hi
    } else {
        x_hi
    };
    let grid = linspace(lo, hi, THETA_MARGINAL_POINTS);
    let lds: Vec<f64> = grid
        .iter()
        .map(|&t| {
            if t < x_lo {
                ys[0] + s_lo * (t - x_lo)
            } else if t > x_hi {
                ys[n - 1] + s_hi * (t - x_hi)
            } else {
                spline.eval(t)
            }
        })
        .collect();
    Marginal::from_log_density(grid, &lds)
}

fn kernel_theta_marginal(tp: &ThetaPosterior, support: &[SupportPoint], slot: usize) -> Result<Marginal> {
    let w = normalized_weights(support)?;
    let centers: Vec<f64> = support.iter().map(|p| p.theta[slot]).collect();
    let mean: f64 = centers.iter().zip(&w).map(|(c, w)| c * w).sum();
    let spread: f64 = centers.iter().zip(&w).map(|(c, w)| w * (c - mean).powi(2)).sum();
    let target_var = tp.covariance().map(|c| c[(slot, slot)]).unwrap_or(2.0 * spread);
    let var = (target_var - spread).max(0.1 * target_var).max(1e-12);
    let sd = var.sqrt();
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - 5.0 * sd;
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 5.0 * sd;
    let grid = linspace(lo, hi, THETA_MARGINAL_POINTS);
    let ds = grid
        .iter()
        .map(|&t| {
            centers
                .iter()
                .zip(&w)
                .map(|(c, wk)| wk * (-0.5 * (t - c).powi(2) / var).exp())
                .sum()
        })
        .collect();
    Marginal::new(grid, ds)
}
