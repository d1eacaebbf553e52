//! Marginals of single latent elements given θ, by the Gaussian
//! approximation or by a Laplace ratio, and their mixture over θ.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gaussian_approx::{ConditionalGaussian, NewtonOptions};
use crate::gmrf::SymbolicCholesky;
use crate::marginal::{linspace, Marginal};
use crate::model::LatentGaussianModel;
use crate::spline::CubicSpline;

pub const GAUSSIAN_POINTS: usize = 75;
pub const MIXTURE_POINTS: usize = 201;
/// Output grids reach this many standard deviations each side.
const OUTPUT_HALF_WIDTH: f64 = 5.0;
const MIN_LAPLACE_POINTS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentStrategy {
    #[default]
    Gaussian,
    Laplace,
}

impl LatentStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            LatentStrategy::Gaussian => "gaussian",
            LatentStrategy::Laplace => "laplace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceOptions {
    /// Evaluation points across the Gaussian marginal.
    pub points: usize,
    /// Half-width of the evaluation grid in standard deviations.
    pub half_width: f64,
    pub newton: NewtonOptions,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        LaplaceOptions {
            points: 15,
            half_width: 4.0,
            newton: NewtonOptions::default(),
        }
    }
}

/// `N(mode_i, var_i)` tabulated over `±5 sd`.
pub fn gaussian_latent_marginal(g: &ConditionalGaussian, i: usize, points: usize) -> Result<Marginal> {
    if i >= g.dim() {
        return Err(Error::IndexOutOfRange { index: i, dim: g.dim() });
    }
    Marginal::gaussian(g.mode[i], g.marginal_variances()[i].sqrt(), points)
}

/// Laplace-ratio marginal of `x_i` at full hyperparameters `theta`.
///
/// For each value on a grid around the Gaussian marginal, the rest of the
/// field is re-optimized with `x_i` held fixed and the log joint is
/// corrected by the log determinant of the reduced curvature. The log
/// values are spline-interpolated onto the usual `±5 sd` output grid.
pub fn laplace_latent_marginal(
    model: &LatentGaussianModel,
    theta: &[f64],
    i: usize,
    g: &ConditionalGaussian,
    opts: &LaplaceOptions,
) -> Result<Marginal> {
    let n = model.latent_dim();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, dim: n });
    }
    let sd = g.marginal_variances()[i].sqrt();
    let grid: Vec<f64> = linspace(g.mode[i] - opts.half_width * sd, g.mode[i] + opts.half_width * sd, opts.points);
    let clamped = ClampedProblem::new(model, theta, i, g, opts.newton)?;

    let mut xs = Vec::with_capacity(grid.len());
    let mut lds = Vec::with_capacity(grid.len());
    for &v in &grid {
        match clamped.log_density(v) {
            Ok(l) => {
                xs.push(v);
                lds.push(l);
            }
            Err(e) => log::warn!("{}: dropping Laplace point {v}: {e}", model.latent_label(i)),
        }
    }
    if xs.len() < MIN_LAPLACE_POINTS {
        return Err(Error::TooFewEvaluations {
            needed: MIN_LAPLACE_POINTS,
            got: xs.len(),
        });
    }

    let out = linspace(
        g.mode[i] - OUTPUT_HALF_WIDTH * sd,
        g.mode[i] + OUTPUT_HALF_WIDTH * sd,
        GAUSSIAN_POINTS,
    );
    let log_out = extrapolating_log_density(&xs, &lds, &out, sd * sd)?;
    Marginal::from_log_density(out, &log_out)
}

/// Spline through `(xs, lds)` evaluated at `out`. Beyond the data the end
/// cubic is used while it keeps falling; otherwise the tail continues
/// linearly with the end slope (or a Gaussian slope if that slope points
/// the wrong way).
fn extrapolating_log_density(xs: &[f64], lds: &[f64], out: &[f64], var: f64) -> Result<Vec<f64>> {
    let s = CubicSpline::new(xs, lds)?;
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let end_slope = |x: f64, outward: f64| {
        let d = s.derivative(x);
        if d * outward < 0.0 {
            d
        } else {
            -outward * (hi - lo) / (2.0 * var)
        }
    };
    let mut vals: Vec<f64> = out.iter().map(|&t| s.eval(t)).collect();

    let mut fix_tail = |range: Vec<usize>, edge: f64, outward: f64| {
        let f_edge = s.eval(edge);
        let mut cubic_ok = true;
        let mut prev = f_edge;
        for &k in &range {
            let v = vals[k];
            if !(v < prev) || s.derivative(out[k]) * outward >= 0.0 {
                cubic_ok = false;
                break;
            }
            prev = v;
        }
        if !cubic_ok {
            let slope = end_slope(edge, outward);
            for &k in &range {
                vals[k] = f_edge + slope * (out[k] - edge);
            }
        }
    };
    let left: Vec<usize> = (0..out.len()).filter(|&k| out[k] < lo).rev().collect();
    fix_tail(left, lo, -1.0);
    let right: Vec<usize> = (0..out.len()).filter(|&k| out[k] > hi).collect();
    fix_tail(right, hi, 1.0);
    Ok(vals)
}

/// Optimization of `x_{−i}` with `x_i` held at a given value.
struct ClampedProblem<'a> {
    model: &'a LatentGaussianModel,
    theta: &'a [f64],
    index: usize,
    mean: Vec<f64>,
    q: crate::gmrf::SparseSymmetric,
    q_reduced: crate::gmrf::SparseSymmetric,
    symbolic: Arc<SymbolicCholesky>,
    mode: Vec<f64>,
    // covariance column of x_i scaled by 1/var_i, for warm starts
    regression: Vec<f64>,
    newton: NewtonOptions,
}

impl<'a> ClampedProblem<'a> {
    fn new(
        model: &'a LatentGaussianModel,
        theta: &'a [f64],
        index: usize,
        g: &ConditionalGaussian,
        newton: NewtonOptions,
    ) -> Result<Self> {
        let q = model.assemble_joint_precision(theta)?;
        let q_reduced = q.without_index(index);
        let symbolic = Arc::new(SymbolicCholesky::analyze(&q_reduced, true));
        let mut e = vec![0.0; g.dim()];
        e[index] = 1.0;
        let col = g.factor.solve(&e)?;
        let vi = col[index];
        Ok(ClampedProblem {
            model,
            theta,
            index,
            mean: model.prior_mean(),
            q,
            q_reduced,
            symbolic,
            mode: g.mode.clone(),
            regression: col.iter().map(|c| c / vi).collect(),
            newton,
        })
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.model.log_likelihood(x, self.theta)? - 0.5 * self.model.prior_quad_form(&d, self.theta)?)
    }

    fn reduced(&self, v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        r.remove(self.index);
        r
    }

    /// Unnormalized `log π̃(x_i = value | θ, y)`.
    fn log_density(&self, value: f64) -> Result<f64> {
        let n = self.mode.len();
        let i = self.index;
        let shift = value - self.mode[i];
        let mut x: Vec<f64> = self.mode.iter().zip(&self.regression).map(|(m, r)| m + r * shift).collect();
        x[i] = value;
        let mut f_x = self.objective(&x)?;
        let mut converged = false;
        let mut last = f64::INFINITY;
        for _ in 0..self.newton.max_iterations {
            let (_, grad_eta, curv) = self.model.likelihood_terms(&x, self.theta)?;
            let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
            let qd = self.q.mul_vec(&d);
            let mut grad: Vec<f64> = qd.iter().map(|v| -v).collect();
            for (k, gk) in grad_eta.iter().enumerate() {
                grad[k] += gk;
            }
            let mut c = vec![0.0; n];
            c[..curv.len()].copy_from_slice(&curv);
            let mut h = self.q_reduced.clone();
            h.add_to_diagonal(&self.reduced(&c));
            let step = self.symbolic.factor(&h)?.solve(&self.reduced(&grad))?;
            last = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
            let mut full_step = step;
            full_step.insert(i, 0.0);
            if last < self.newton.tolerance {
                for (xk, sk) in x.iter_mut().zip(&full_step) {
                    *xk += sk;
                }
                converged = true;
                break;
            }
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=self.newton.max_halvings {
                let trial: Vec<f64> = x.iter().zip(&full_step).map(|(a, s)| a + scale * s).collect();
                let f_trial = self.objective(&trial)?;
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
                    iterations: self.newton.max_iterations,
                    residual: last,
                });
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: self.newton.max_iterations,
                residual: last,
            });
        }
        let (_, _, curv) = self.model.likelihood_terms(&x, self.theta)?;
        let mut c = vec![0.0; n];
        c[..curv.len()].copy_from_slice(&curv);
        let mut h = self.q_reduced.clone();
        h.add_to_diagonal(&self.reduced(&c));
        let log_det = self.symbolic.factor(&h)?.log_det();
        Ok(self.objective(&x)? - 0.5 * log_det)
    }
}

/// `Σ_k w_k π_k(x)` on a common grid spanning every part, renormalized.
pub fn mix_marginals(parts: &[(&Marginal, f64)]) -> Result<Marginal> {
    if parts.is_empty() {
        return Err(Error::EmptySupport);
    }
    if parts.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidMarginal("mixture weights must be finite and nonnegative".into()));
    }
    let lo = parts.iter().map(|(m, _)| m.support().0).fold(f64::INFINITY, f64::min);
    let hi = parts.iter().map(|(m, _)| m.support().1).fold(f64::NEG_INFINITY, f64::max);
    let grid = linspace(lo, hi, MIXTURE_POINTS);
    let mut ds = vec![0.0; grid.len()];
    for (m, w) in parts {
        if *w == 0.0 {
            continue;
        }
        for (d, v) in ds.iter_mut().zip(m.density_at(&grid)) {
            *d += w * v;
        }
    }
    Marginal::new(grid, ds)
}
