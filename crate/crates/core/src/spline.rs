//! Interpolating cubic spline with not-a-knot end conditions.
//!
//! Not-a-knot splines reproduce cubic polynomials exactly, so a log-density
//! that is quadratic (a Gaussian) is recovered without interpolation error.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ys.len(),
            });
        }
        if n < 2 {
            return Err(Error::TooFewEvaluations { needed: 2, got: n });
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMarginal("spline knots must be strictly ascending".into()));
        }
        let m = match n {
            2 => vec![0.0; 2],
            3 => {
                // single parabola through three points
                let d0 = (ys[1] - ys[0]) / (xs[1] - xs[0]);
                let d1 = (ys[2] - ys[1]) / (xs[2] - xs[1]);
                let c = 2.0 * (d1 - d0) / (xs[2] - xs[0]);
                vec![c; 3]
            }
            _ => not_a_knot_moments(xs, ys),
        };
        Ok(CubicSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        }
    }

    /// Value at `x`; outside the knots the end polynomial pieces continue.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let (a, b) = (x1 - x, x - x0);
        self.m[i] * a * a * a / (6.0 * h)
            + self.m[i + 1] * b * b * b / (6.0 * h)
            + (self.ys[i] / h - self.m[i] * h / 6.0) * a
            + (self.ys[i + 1] / h - self.m[i + 1] * h / 6.0) * b
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let (a, b) = (x1 - x, x - x0);
        -self.m[i] * a * a / (2.0 * h) + self.m[i + 1] * b * b / (2.0 * h)
            - (self.ys[i] / h - self.m[i] * h / 6.0)
            + (self.ys[i + 1] / h - self.m[i + 1] * h / 6.0)
    }
}

fn not_a_knot_moments(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();

    // unknowns M_1..M_{n-2}; M_0 and M_{n-1} are eliminated with the
    // third-derivative continuity conditions at x_1 and x_{n-2}
    let k = n - 2;
    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for r in 0..k {
        let i = r + 1;
        sub[r] = h[i - 1];
        diag[r] = 2.0 * (h[i - 1] + h[i]);
        sup[r] = h[i];
        rhs[r] = 6.0 * (d[i] - d[i - 1]);
    }
    // M_0 = ((h0 + h1) M_1 - h0 M_2) / h1
    let (h0, h1) = (h[0], h[1]);
    diag[0] += h0 * (h0 + h1) / h1;
    if k > 1 {
        sup[0] -= h0 * h0 / h1;
    }
    // M_{n-1} = ((hl + hp) M_{n-2} - hl M_{n-3}) / hp
    let (hp, hl) = (h[n - 3], h[n - 2]);
    diag[k - 1] += hl * (hl + hp) / hp;
    if k > 1 {
        sub[k - 1] -= hl * hl / hp;
    }

    let inner = solve_tridiagonal(&sub, &diag, &sup, &rhs);
    let mut m = vec![0.0; n];
    m[1..n - 1].copy_from_slice(&inner);
    m[0] = if k > 1 {
        ((h0 + h1) * m[1] - h0 * m[2]) / h1
    } else {
        m[1]
    };
    m[n - 1] = if k > 1 {
        ((hl + hp) * m[n - 2] - hl * m[n - 3]) / hp
    } else {
        m[n - 2]
    };
    m
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubic_polynomials() {
        let f = |x: f64| 0.3 * x * x * x - x * x + 2.0 * x - 0.5;
        let xs = [-2.0, -1.3, -0.1, 0.4, 1.0, 2.2, 3.0];
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let s = CubicSpline::new(&xs, &ys).unwrap();
        for k in -40..=50 {
            let x = k as f64 * 0.07;
            assert!((s.eval(x) - f(x)).abs() < 1e-9, "x={x}");
        }
        let df = |x: f64| 0.9 * x * x - 2.0 * x + 2.0;
        assert!((s.derivative(0.77) - df(0.77)).abs() < 1e-9);
    }

    #[test]
    fn small_knot_counts() {
        let s = CubicSpline::new(&[0.0, 1.0], &[1.0, 3.0]).unwrap();
        assert!((s.eval(0.5) - 2.0).abs() < 1e-14);
        let s = CubicSpline::new(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]).unwrap();
        assert!((s.eval(1.5) - 2.25).abs() < 1e-14);
        assert!((s.eval(3.0) - 9.0).abs() < 1e-12);
        let s = CubicSpline::new(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 4.0, 9.0]).unwrap();
        assert!((s.eval(-1.0) - 1.0).abs() < 1e-12);
        assert!(CubicSpline::new(&[0.0], &[1.0]).is_err());
        assert!(CubicSpline::new(&[0.0, 0.0, 1.0], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn interpolates_knots() {
        let xs: Vec<f64> = (0..10).map(|k| (k as f64).powf(1.3)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let s = CubicSpline::new(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.eval(*x) - y).abs() < 1e-12);
        }
    }
}
