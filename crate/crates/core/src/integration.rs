//! Support points over hyperparameter space: an equally spaced lattice, a
//! central composite design, or the mode alone.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hyper_posterior::{HyperTarget, ThetaPosterior};

pub const DEFAULT_GRID_STEP: f64 = 1.0;
pub const DEFAULT_GRID_CUTOFF: f64 = 2.5;
/// CCD radius is `f0·√d` in standardized coordinates.
pub const DEFAULT_CCD_F0: f64 = 1.1;
/// Lattice growth guard.
pub const MAX_GRID_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Grid { step: f64, cutoff: f64 },
    Ccd { f0: f64 },
    EmpiricalBayes,
}

impl Strategy {
    /// Grid for one or two hyperparameters, CCD beyond.
    pub fn auto(dim: usize) -> Self {
        if dim <= 2 {
            Strategy::default_grid()
        } else {
            Strategy::Ccd { f0: DEFAULT_CCD_F0 }
        }
    }

    pub fn default_grid() -> Self {
        Strategy::Grid {
            step: DEFAULT_GRID_STEP,
            cutoff: DEFAULT_GRID_CUTOFF,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Grid { .. } => "grid",
            Strategy::Ccd { .. } => "ccd",
            Strategy::EmpiricalBayes => "eb",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint {
    /// Free hyperparameters on the internal scale.
    pub theta: Vec<f64>,
    /// Standardized coordinates, `θ = θ* + V z`.
    pub z: Vec<f64>,
    pub log_post: f64,
    /// Integration weight `Δ`.
    pub weight: f64,
}

/// `exp(log_post − max)·Δ`, normalized to sum to one.
pub fn normalized_weights(points: &[SupportPoint]) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::EmptySupport);
    }
    let logs: Vec<f64> = points.iter().map(|p| p.log_post + p.weight.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllPointsInvalid);
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Dispatches to the requested strategy. A CCD on one hyperparameter
/// falls back to the default lattice; no free hyperparameters gives the
/// mode alone with unit weight.
pub fn explore<T: HyperTarget>(
    target: &T,
    tp: &mut ThetaPosterior,
    mode_fit: &T::Fit,
    strategy: Strategy,
) -> Result<Vec<(SupportPoint, T::Fit)>> {
    if tp.dim() == 0 {
        return Ok(vec![(
            SupportPoint {
                theta: Vec::new(),
                z: Vec::new(),
                log_post: tp.log_post_at_mode,
                weight: 1.0,
            },
            mode_fit.clone(),
        )]);
    }
    match strategy {
        Strategy::Grid { step, cutoff } => grid_strategy(target, tp, mode_fit, step, cutoff),
        Strategy::Ccd { .. } if tp.dim() == 1 => {
            log::info!("central composite design needs two or more hyperparameters; using the grid");
            grid_strategy(target, tp, mode_fit, DEFAULT_GRID_STEP, DEFAULT_GRID_CUTOFF)
        }
        Strategy::Ccd { f0 } => ccd_strategy(target, tp, mode_fit, f0),
        Strategy::EmpiricalBayes => Ok(eb_strategy::<T>(tp, mode_fit)),
    }
}

fn neighbours(z: &[i64]) -> impl Iterator<Item = Vec<i64>> + '_ {
    (0..z.len()).flat_map(move |i| {
        [-1, 1].into_iter().map(move |s| {
            let mut n = z.to_vec();
            n[i] += s;
            n
        })
    })
}

/// Equally spaced lattice in standardized coordinates grown ring by ring
/// from the mode. A point is kept when its log posterior is within
/// `cutoff` of the mode; only kept points spread to their neighbours.
pub fn grid_strategy<T: HyperTarget>(
    target: &T,
    tp: &mut ThetaPosterior,
    mode_fit: &T::Fit,
    step: f64,
    cutoff: f64,
) -> Result<Vec<(SupportPoint, T::Fit)>> {
    let d = tp.dim();
    if d == 0 {
        return Err(Error::Validation("grid strategy needs at least one hyperparameter".into()));
    }
    if !(step > 0.0) || !(cutoff > 0.0) {
        return Err(Error::Validation(format!("grid step {step} and cutoff {cutoff} must be positive")));
    }
    let lp0 = tp.log_post_at_mode;
    let origin = vec![0i64; d];
    let mut seen: BTreeSet<Vec<i64>> = BTreeSet::new();
    seen.insert(origin.clone());
    let mut kept: Vec<(Vec<i64>, Vec<f64>, f64, T::Fit)> = vec![(origin.clone(), tp.mode.clone(), lp0, mode_fit.clone())];
    let mut ring: Vec<Vec<i64>> = neighbours(&origin).collect();
    seen.extend(ring.iter().cloned());

    while !ring.is_empty() {
        if seen.len() > MAX_GRID_POINTS {
            return Err(Error::RunawayGrid(seen.len()));
        }
        let tp_ref = &*tp;
        let results: Vec<(Vec<f64>, Result<(f64, T::Fit)>)> = ring
            .par_iter()
            .map(|z| {
                let zf: Vec<f64> = z.iter().map(|&k| k as f64 * step).collect();
                let theta = tp_ref.theta_at(&zf);
                let r = target.evaluate(&theta, Some(mode_fit));
                (theta, r)
            })
            .collect();
        let mut next = Vec::new();
        for (z, (theta, r)) in ring.into_iter().zip(results) {
            match r {
                Ok((lp, fit)) => {
                    tp.evaluations.push((theta.clone(), lp));
                    if lp >= lp0 - cutoff {
                        for nb in neighbours(&z) {
                            if seen.insert(nb.clone()) {
                                next.push(nb);
                            }
                        }
                        kept.push((z, theta, lp, fit));
                    }
                }
                Err(e) => log::warn!("dropping lattice point {z:?}: {e}"),
            }
        }
        ring = next;
    }

    kept.sort_by(|a, b| a.0.cmp(&b.0));
    let weight = step.powi(d as i32) * tp.log_abs_det_standardizer().exp();
    Ok(kept
        .into_iter()
        .map(|(z, theta, lp, fit)| {
            (
                SupportPoint {
                    theta,
                    z: z.iter().map(|&k| k as f64 * step).collect(),
                    log_post: lp,
                    weight,
                },
                fit,
            )
        })
        .collect())
}

/// Corner signs of the factorial part: full for `d ≤ 5`, otherwise the
/// half fraction whose last sign is the product of the others.
fn factorial_corners(d: usize) -> Vec<Vec<f64>> {
    let free = if d <= 5 { d } else { d - 1 };
    (0..1usize << free)
        .map(|mask| {
            let mut s: Vec<f64> = (0..free).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            if free < d {
                s.push(s.iter().product());
            }
            s
        })
        .collect()
}

/// Design points in standardized coordinates and their probability weights
/// under a standard Gaussian: the centre, `2d` axial points and the
/// factorial corners, all on the sphere of radius `f0·√d`. The shell weight
/// is set so the design reproduces unit variance along each axis; the
/// centre takes the remaining mass.
pub fn ccd_design(d: usize, f0: f64) -> Result<Vec<(Vec<f64>, f64)>> {
    if d < 2 {
        return Err(Error::Validation("central composite design needs dimension two or more".into()));
    }
    let r = f0 * (d as f64).sqrt();
    let corners = factorial_corners(d);
    let n_f = corners.len() as f64;
    let shell = 2 * d + corners.len();
    let w1 = 1.0 / (r * r * (2.0 + n_f / d as f64));
    let w0 = 1.0 - shell as f64 * w1;
    if !(w0 > 0.0) {
        return Err(Error::Validation(format!("ccd radius factor {f0} leaves no mass at the centre")));
    }
    let mut pts = vec![(vec![0.0; d], w0)];
    for i in 0..d {
        for s in [-1.0, 1.0] {
            let mut z = vec![0.0; d];
            z[i] = s * r;
            pts.push((z, w1));
        }
    }
    let c = r / (d as f64).sqrt();
    for s in corners {
        pts.push((s.into_iter().map(|v| v * c).collect(), w1));
    }
    Ok(pts)
}

pub fn ccd_strategy<T: HyperTarget>(
    target: &T,
    tp: &mut ThetaPosterior,
    mode_fit: &T::Fit,
    f0: f64,
) -> Result<Vec<(SupportPoint, T::Fit)>> {
    let d = tp.dim();
    let design = ccd_design(d, f0)?;
    let log_vol = tp.log_abs_det_standardizer() + 0.5 * d as f64 * (2.0 * PI).ln();
    let tp_ref = &*tp;
    let results: Vec<(Vec<f64>, Result<(f64, T::Fit)>)> = design[1..]
        .par_iter()
        .map(|(z, _)| {
            let theta = tp_ref.theta_at(z);
            let r = target.evaluate(&theta, Some(mode_fit));
            (theta, r)
        })
        .collect();

    // Δ = w·(2π)^{d/2}·e^{|z|²/2}·|det V| integrates a Gaussian exactly
    let delta = |z: &[f64], w: f64| (w.ln() + log_vol + 0.5 * z.iter().map(|v| v * v).sum::<f64>()).exp();
    let mut out = vec![(
        SupportPoint {
            theta: tp.mode.clone(),
            z: design[0].0.clone(),
            log_post: tp.log_post_at_mode,
            weight: delta(&design[0].0, design[0].1),
        },
        mode_fit.clone(),
    )];
    for ((z, w), (theta, r)) in design[1..].iter().zip(results) {
        match r {
            Ok((lp, fit)) => {
                tp.evaluations.push((theta.clone(), lp));
                out.push((
                    SupportPoint {
                        theta,
                        z: z.clone(),
                        log_post: lp,
                        weight: delta(z, *w),
                    },
                    fit,
                ));
            }
            Err(e) => log::warn!("dropping design point {z:?}: {e}"),
        }
    }
    Ok(out)
}

/// The mode alone, weighted by the Laplace volume `(2π)^{d/2}|det V|` so the
/// marginal-likelihood estimate stays on the same footing as the other
/// strategies.
pub fn eb_strategy<T: HyperTarget>(tp: &ThetaPosterior, mode_fit: &T::Fit) -> Vec<(SupportPoint, T::Fit)> {
    let d = tp.dim();
    let weight = (tp.log_abs_det_standardizer() + 0.5 * d as f64 * (2.0 * PI).ln()).exp();
    vec![(
        SupportPoint {
            theta: tp.mode.clone(),
            z: vec![0.0; d],
            log_post: tp.log_post_at_mode,
            weight,
        },
        mode_fit.clone(),
    )]
}
