//! With a Gaussian likelihood every conditional is exactly Gaussian, so the
//! only approximation left is the quadrature over hyperparameters.

use inla_core::fit::{fit, FitOptions};
use inla_core::gaussian_approx::find_conditional_mode;
use inla_core::hyper_posterior::log_posterior_theta;
use inla_core::latent_marginals::{gaussian_latent_marginal, LatentStrategy, GAUSSIAN_POINTS};
use inla_core::likelihood::{LikelihoodFamily, Observation};
use inla_core::marginal::Marginal;
use inla_core::model::{HyperPrior, LatentComponent, ModelOptions};
use inla_core::model::LatentGaussianModel;
use nalgebra::{DMatrix, DVector};

const T: usize = 20;
const OBS_PRECISION: f64 = 4.0;
const NOISE: f64 = 1e-5;

fn series() -> Vec<f64> {
    // smooth trend plus fixed pseudo-noise
    let wiggle = [
        0.31, -0.12, 0.05, -0.44, 0.27, 0.18, -0.35, 0.09, 0.22, -0.16, -0.03, 0.41, -0.28, 0.13, -0.07, 0.36, -0.21,
        0.02, 0.15, -0.33,
    ];
    (0..T).map(|t| (t as f64 / 4.0).sin() + 0.05 * t as f64 + wiggle[t]).collect()
}

fn model(hyper_noise: bool) -> LatentGaussianModel {
    let y = series();
    let (lik, priors) = if hyper_noise {
        (
            LikelihoodFamily::GaussianHyperPrecision { slot: 1 },
            vec![
                HyperPrior::PcPrecision { u: 1.0, alpha: 0.01 },
                HyperPrior::PcPrecision { u: 1.0, alpha: 0.01 },
            ],
        )
    } else {
        (
            LikelihoodFamily::GaussianKnownPrecision { precision: OBS_PRECISION },
            vec![HyperPrior::PcPrecision { u: 1.0, alpha: 0.01 }],
        )
    };
    LatentGaussianModel::new(
        vec![LatentComponent::rw2("trend", (0..T).collect(), T, 0)],
        lik,
        y.iter().enumerate().map(|(i, &v)| Observation::new(v, i)).collect(),
        priors,
        ModelOptions::default(),
    )
    .unwrap()
}

fn second_differences() -> DMatrix<f64> {
    let mut d = DMatrix::zeros(T - 2, T);
    for r in 0..T - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    d
}

fn rw2_dense(log_tau: f64) -> DMatrix<f64> {
    let d = second_differences();
    d.transpose() * d * log_tau.exp() + DMatrix::identity(T, T) * NOISE
}

/// `log|τDᵀD + κI|` from the nonzero spectrum of `DDᵀ`; the two null
/// directions contribute `κ` each.
fn rw2_log_det(log_tau: f64) -> f64 {
    let d = second_differences();
    let eig = (&d * d.transpose()).symmetric_eigenvalues();
    2.0 * NOISE.ln() + eig.iter().map(|mu| (log_tau.exp() * mu + NOISE).ln()).sum::<f64>()
}

fn pc_log_density(theta: f64) -> f64 {
    let lambda = -(0.01f64).ln();
    (lambda / 2.0).ln() - lambda * (-theta / 2.0).exp() - theta / 2.0
}

/// Total noise variance between the trend and `y`.
fn noise_var(theta: &[f64]) -> f64 {
    let obs = if theta.len() > 1 { (-theta[1]).exp() } else { 1.0 / OBS_PRECISION };
    (-15.0f64).exp() + obs
}

/// `log N(y; 0, A⁻¹ + sI) + log π(θ)`, with the determinant and inverse
/// rewritten around `A + I/s` to avoid forming `A⁻¹`.
fn oracle_log_posterior(theta: &[f64]) -> f64 {
    let a = rw2_dense(theta[0]);
    let s = noise_var(theta);
    let y = DVector::from_vec(series());
    let b = &a + DMatrix::identity(T, T) / s;
    let lb = b.cholesky().unwrap();
    let log_det_b: f64 = lb.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let log_det_sigma = log_det_b - rw2_log_det(theta[0]) + T as f64 * s.ln();
    let quad = y.dot(&y) / s - y.dot(&lb.solve(&y)) / (s * s);
    let loglik = -0.5 * (T as f64 * (2.0 * std::f64::consts::PI).ln() + log_det_sigma + quad);
    loglik + theta.iter().map(|&t| pc_log_density(t)).sum::<f64>()
}

/// Exact posterior mean and variances of the trend given `θ`.
fn oracle_trend(theta: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let s = noise_var(theta);
    let p = rw2_dense(theta[0]) + DMatrix::identity(T, T) / s;
    let chol = p.cholesky().unwrap();
    let mean = chol.solve(&(DVector::from_vec(series()) / s));
    (mean, chol.inverse().diagonal())
}

#[test]
fn hyper_posterior_matches_closed_form() {
    for hyper_noise in [false, true] {
        let m = model(hyper_noise);
        let thetas: Vec<Vec<f64>> = if hyper_noise {
            vec![vec![2.0, 1.5], vec![4.0, 1.0], vec![6.5, 2.2], vec![3.0, 0.3]]
        } else {
            vec![vec![0.5], vec![2.0], vec![4.0], vec![7.0], vec![9.5]]
        };
        let diffs: Vec<f64> = thetas
            .iter()
            .map(|t| log_posterior_theta(&m, t).unwrap() - oracle_log_posterior(t))
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-8, "{diffs:?}");
        }
    }
}

#[test]
fn conditional_marginals_are_exact() {
    let m = model(false);
    for theta in [[1.0], [4.0], [8.0]] {
        let g = find_conditional_mode(&m, &theta, None).unwrap();
        let (mean, var) = oracle_trend(&theta);
        for t in 0..T {
            let i = T + t;
            assert!((g.mode[i] - mean[t]).abs() < 1e-9, "mode {t}");
            assert!((g.marginal_variances()[i] - var[t]).abs() < 1e-9 * var[t].max(1.0), "var {t}");
            let marg = gaussian_latent_marginal(&g, i, GAUSSIAN_POINTS).unwrap();
            let exact = Marginal::gaussian(mean[t], var[t].sqrt(), GAUSSIAN_POINTS).unwrap();
            let sup = marg.ds().iter().zip(exact.ds()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(sup < 1e-9 * exact.ds().iter().copied().fold(1.0, f64::max), "{t}: {sup}");
        }
    }
}

#[test]
fn mixtures_are_weighted_exact_gaussians() {
    let m = model(false);
    let out = fit(&m, &FitOptions::default()).unwrap();
    let lap = fit(
        &m,
        &FitOptions {
            latent: LatentStrategy::Laplace,
            latent_indices: Some(vec![T, T + 7, 2 * T - 1]),
            ..Default::default()
        },
    )
    .unwrap();
    for (p, &i) in out.latent_indices.iter().enumerate() {
        let mix = &out.latent[p];
        assert!((mix.integral() - 1.0).abs() < 1e-6);
        if i < T {
            continue;
        }
        let parts: Vec<(f64, f64, f64)> = out
            .support
            .iter()
            .map(|s| {
                let (mean, var) = oracle_trend(&s.theta_full);
                (s.weight, mean[i - T], var[i - T].sqrt())
            })
            .collect();
        let dense = |x: f64| -> f64 {
            parts
                .iter()
                .map(|&(w, mu, sd)| w * (-0.5 * ((x - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
                .sum()
        };
        // conditional tables stop at ±5 sd, so compare where every part is tabulated
        let lo = out.support.iter().map(|s| s.marginals[p].support().0).fold(f64::NEG_INFINITY, f64::max);
        let hi = out.support.iter().map(|s| s.marginals[p].support().1).fold(f64::INFINITY, f64::min);
        let inner: Vec<f64> = mix.xs().iter().copied().filter(|&x| x >= lo && x <= hi).collect();
        let peak = mix.ds().iter().copied().fold(0.0, f64::max);
        let sup = inner.iter().map(|&x| (mix.density_at(&[x])[0] - dense(x)).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-6 * peak.max(1.0), "index {i}: {sup}");

        if let Some(q) = lap.position(i) {
            let l = &lap.latent[q];
            let sup = inner.iter().map(|&x| (mix.density_at(&[x])[0] - l.density_at(&[x])[0]).abs()).fold(0.0, f64::max);
            assert!(sup < 1e-6 * peak.max(1.0), "laplace index {i}: {sup}");
        }
    }
}
