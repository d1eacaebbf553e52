//! Derivative-free maximization with the Nelder–Mead simplex method.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    /// Stop when the spread of simplex values falls below this.
    pub f_tolerance: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            initial_step: 1.0,
            f_tolerance: 1e-5,
            x_tolerance: 1e-5,
            max_evaluations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Maximizes `f` from `x0`. Non-finite values are treated as `-∞`.
pub fn nelder_mead_maximize<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    if d == 0 {
        let v = eval(x0);
        return NelderMeadResult {
            x: Vec::new(),
            value: -v,
            evaluations: 1,
            converged: true,
        };
    }

    // minimize g = -f
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    let mut used = d + 1;
    while used < opts.max_evaluations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_spread = simplex[d].1 - simplex[0].1;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if f_spread.is_finite() && f_spread <= opts.f_tolerance && x_spread <= opts.x_tolerance {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        used += 1;
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe);
            used += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[d].1 {
            let x = along(rho);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(-rho);
            let v = eval(&x);
            (x, v)
        };
        used += 1;
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best) {
                *xi = bi + sigma * (*xi - bi);
            }
            *v = eval(x);
            used += 1;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value: -v,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_maximum_of_quadratic() {
        let f = |x: &[f64]| -(x[0] - 1.5).powi(2) - 3.0 * (x[1] + 0.5).powi(2) - 0.5 * x[0] * x[1];
        let r = nelder_mead_maximize(f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(r.converged);
        // stationary point: [2, 0.5; 0.5, 6] x = [3, -3]
        let det = 2.0 * 6.0 - 0.25;
        let x0 = (3.0 * 6.0 + 0.5 * 3.0) / det;
        let x1 = (2.0 * -3.0 - 0.5 * 3.0) / det;
        assert!((r.x[0] - x0).abs() < 1e-3, "{:?} vs {x0}", r.x);
        assert!((r.x[1] - x1).abs() < 1e-3, "{:?} vs {x1}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let opts = NelderMeadOptions {
            f_tolerance: 1e-12,
            x_tolerance: 1e-8,
            max_evaluations: 20_000,
            ..Default::default()
        };
        let r = nelder_mead_maximize(f, &[-1.2, 1.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn non_finite_regions_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { -(x[0] - 0.3).powi(2) };
        let r = nelder_mead_maximize(f, &[0.1], &NelderMeadOptions::default());
        assert!((r.x[0] - 0.3).abs() < 1e-4);
    }

    #[test]
    fn zero_dimensional() {
        let r = nelder_mead_maximize(|_| 2.0, &[], &NelderMeadOptions::default());
        assert_eq!(r.value, 2.0);
        assert!(r.x.is_empty());
    }
}
