//! Tabulated univariate densities and the operations defined on them:
//! density, distribution and quantile functions, sampling, HPD intervals,
//! expectations, mode, change of variables, summaries and resampling.

use std::io::{self, BufRead, Write};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spline::CubicSpline;

/// Smallest accepted table.
pub const MIN_POINTS: usize = 9;

/// Each tabulated interval is split this many times for integration.
const REFINE: usize = 8;

pub const SUMMARY_PROBS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Density tabulated on strictly ascending abscissae, normalized so the
/// trapezoid integral over the table is one.
#[derive(Debug, Clone)]
pub struct Marginal {
    xs: Vec<f64>,
    ds: Vec<f64>,
    interp: OnceLock<Interpolant>,
    refined: OnceLock<Refined>,
}

impl PartialEq for Marginal {
    fn eq(&self, other: &Self) -> bool {
        self.xs == other.xs && self.ds == other.ds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSummary {
    pub mean: f64,
    pub sd: f64,
    /// Paired with [`SUMMARY_PROBS`].
    pub quantiles: [f64; 5],
    pub mode: f64,
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

impl Marginal {
    pub fn new(xs: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        if xs.len() != ds.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ds.len(),
            });
        }
        if xs.len() < MIN_POINTS {
            return Err(Error::InvalidMarginal(format!(
                "need at least {MIN_POINTS} points, got {}",
                xs.len()
            )));
        }
        if xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMarginal("abscissae must be finite and strictly ascending".into()));
        }
        if ds.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidMarginal("densities must be finite and nonnegative".into()));
        }
        let total = trapezoid(&xs, &ds);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMarginal("density has no mass".into()));
        }
        // already-normalized tables are kept bit for bit
        let ds = if (total - 1.0).abs() < 1e-14 {
            ds
        } else {
            ds.into_iter().map(|d| d / total).collect()
        };
        Ok(Marginal {
            xs,
            ds,
            interp: OnceLock::new(),
            refined: OnceLock::new(),
        })
    }

    /// From unnormalized log densities; `-∞` entries become zero density.
    pub fn from_log_density(xs: Vec<f64>, log_ds: &[f64]) -> Result<Self> {
        let max = log_ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidMarginal("log density has no finite maximum".into()));
        }
        let ds = log_ds.iter().map(|l| (l - max).exp()).collect();
        Marginal::new(xs, ds)
    }

    /// `N(mean, sd²)` tabulated over `mean ± 5 sd`.
    pub fn gaussian(mean: f64, sd: f64, points: usize) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidMarginal(format!("bad gaussian parameters ({mean}, {sd})")));
        }
        let xs = linspace(mean - 5.0 * sd, mean + 5.0 * sd, points);
        let ds = xs
            .iter()
            .map(|x| {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp()
            })
            .collect();
        Marginal::new(xs, ds)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ds(&self) -> &[f64] {
        &self.ds
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Trapezoid integral of the stored table (one up to rounding).
    pub fn integral(&self) -> f64 {
        trapezoid(&self.xs, &self.ds)
    }

    fn interp(&self) -> &Interpolant {
        self.interp.get_or_init(|| Interpolant::new(&self.xs, &self.ds))
    }

    fn refined(&self) -> &Refined {
        self.refined.get_or_init(|| Refined::new(self))
    }

    fn density_one(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        self.interp().eval(&self.xs, &self.ds, x)
    }

    /// Interpolated in log density inside the support, zero outside.
    pub fn density_at(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.density_one(v)).collect()
    }

    pub fn cdf_at(&self, q: &[f64]) -> Vec<f64> {
        let r = self.refined();
        q.iter().map(|&v| r.cdf(v)).collect()
    }

    pub fn quantile_at(&self, p: &[f64]) -> Result<Vec<f64>> {
        let r = self.refined();
        p.iter()
            .map(|&v| {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::InvalidProbability(v));
                }
                Ok(r.inverse(v))
            })
            .collect()
    }

    /// Inverse-CDF draws from a ChaCha stream seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let r = self.refined();
        (0..n).map(|_| r.inverse(rng.random::<f64>())).collect()
    }

    /// `E[f(X)]` by trapezoid integration on the refined grid.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let r = self.refined();
        let vals: Vec<f64> = r.xs.iter().zip(&r.ds).map(|(&x, &d)| f(x) * d).collect();
        trapezoid(&r.xs, &vals) / r.total
    }

    /// Argmax of the interpolated density. A maximum shared by adjacent
    /// table points resolves to the smallest abscissa.
    pub fn mode(&self) -> f64 {
        let n = self.xs.len();
        let mut j = 0;
        for k in 1..n {
            if self.ds[k] > self.ds[j] {
                j = k;
            }
        }
        let dj = self.ds[j];
        let mut a = self.xs[j.saturating_sub(1)];
        let mut b = self.xs[(j + 1).min(n - 1)];
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (self.density_one(c), self.density_one(d));
        while b - a > 1e-10 * (1.0 + a.abs().max(b.abs())) {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.density_one(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.density_one(d);
            }
        }
        let x = 0.5 * (a + b);
        if self.density_one(x) > dj * (1.0 + 1e-12) {
            x
        } else {
            // flat top: leftmost table point attaining the maximum
            let k = self.ds.iter().position(|&d| d >= dj * (1.0 - 1e-12)).unwrap_or(j);
            self.xs[k]
        }
    }

    /// Shortest interval holding mass `p`, found by bisecting on a density
    /// threshold. Fails if the super-level set is not one interval.
    pub fn hpd_interval(&self, p: f64) -> Result<(f64, f64)> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        let r = self.refined();
        if p >= 1.0 - 1e-12 {
            return Ok(self.support());
        }
        let dmax = r.ds.iter().copied().fold(0.0, f64::max);
        let (mut lo, mut hi) = (0.0, dmax);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if r.mass_above(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let runs = r.level_set(0.5 * (lo + hi));
        match runs.len() {
            0 => Err(Error::EmptySupport),
            1 => Ok(runs[0]),
            _ => Err(Error::Multimodal(runs)),
        }
    }

    /// Change of variables through a strictly monotone map, with the
    /// Jacobian taken by finite differences on the mapped grid.
    pub fn transform<F: Fn(f64) -> f64>(&self, f: F) -> Result<Marginal> {
        let ys: Vec<f64> = self.xs.iter().map(|&x| f(x)).collect();
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonMonotone);
        }
        let increasing = ys.windows(2).all(|w| w[1] > w[0]);
        let decreasing = ys.windows(2).all(|w| w[1] < w[0]);
        if !increasing && !decreasing {
            return Err(Error::NonMonotone);
        }
        let n = ys.len();
        let slope = |j: usize| -> f64 {
            let xs = &self.xs;
            let h = if j == 0 { xs[1] - xs[0] } else { xs[j] - xs[j - 1] };
            let step = 1e-4 * h;
            (f(xs[j] + step) - f(xs[j] - step)) / (2.0 * step)
        };
        let mut pairs: Vec<(f64, f64)> = (0..n).map(|j| (ys[j], self.ds[j] / slope(j).abs())).collect();
        if decreasing {
            pairs.reverse();
        }
        let (xs, ds) = pairs.into_iter().unzip();
        Marginal::new(xs, ds)
    }

    pub fn summarize(&self) -> Result<MarginalSummary> {
        let mean = self.expect(|x| x);
        let var = self.expect(|x| (x - mean) * (x - mean));
        let q = self.quantile_at(&SUMMARY_PROBS)?;
        Ok(MarginalSummary {
            mean,
            sd: var.max(0.0).sqrt(),
            quantiles: [q[0], q[1], q[2], q[3], q[4]],
            mode: self.mode(),
        })
    }

    /// Resamples the interpolated density on `points` evenly spaced nodes.
    pub fn smooth(&self, points: usize) -> Result<Marginal> {
        let (lo, hi) = self.support();
        let xs = linspace(lo, hi, points);
        let ds = self.density_at(&xs);
        Marginal::new(xs, ds)
    }

    pub fn write_two_column<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (x, d) in self.xs.iter().zip(&self.ds) {
            writeln!(w, "{x:e} {d:e}")?;
        }
        Ok(())
    }

    pub fn read_two_column<R: BufRead>(r: R) -> Result<Marginal> {
        let mut xs = Vec::new();
        let mut ds = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidMarginal(e.to_string()))?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut it = t.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::InvalidMarginal(format!("line {}: expected two numbers", lineno + 1)))
            };
            xs.push(parse(it.next())?);
            ds.push(parse(it.next())?);
        }
        Marginal::new(xs, ds)
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo; n];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + h * k as f64 })
        .collect()
}

/// Log-density splines over each run of strictly positive table values;
/// intervals touching a zero are interpolated linearly in density.
#[derive(Debug, Clone)]
struct Interpolant {
    // spline covering each interval, if any
    piece: Vec<Option<usize>>,
    splines: Vec<CubicSpline>,
}

impl Interpolant {
    fn new(xs: &[f64], ds: &[f64]) -> Self {
        let n = xs.len();
        let mut piece = vec![None; n - 1];
        let mut splines = Vec::new();
        let mut start = 0;
        while start < n {
            if ds[start] <= 0.0 {
                start += 1;
                continue;
            }
            let mut end = start;
            while end + 1 < n && ds[end + 1] > 0.0 {
                end += 1;
            }
            if end > start {
                let lx = &xs[start..=end];
                let ly: Vec<f64> = ds[start..=end].iter().map(|d| d.ln()).collect();
                if let Ok(s) = CubicSpline::new(lx, &ly) {
                    for p in piece.iter_mut().take(end).skip(start) {
                        *p = Some(splines.len());
                    }
                    splines.push(s);
                }
            }
            start = end + 1;
        }
        Interpolant { piece, splines }
    }

    fn eval(&self, xs: &[f64], ds: &[f64], x: f64) -> f64 {
        let n = xs.len();
        let j = xs.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
        match self.piece[j] {
            Some(s) => self.splines[s].eval(x).exp(),
            None => {
                let t = (x - xs[j]) / (xs[j + 1] - xs[j]);
                ds[j] + t * (ds[j + 1] - ds[j])
            }
        }
    }
}

/// Piecewise-linear density on the refined grid with its running integral.
#[derive(Debug, Clone)]
struct Refined {
    xs: Vec<f64>,
    ds: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

impl Refined {
    fn new(m: &Marginal) -> Self {
        let mut xs = Vec::with_capacity((m.len() - 1) * REFINE + 1);
        for w in m.xs.windows(2) {
            let h = (w[1] - w[0]) / REFINE as f64;
            for k in 0..REFINE {
                xs.push(w[0] + h * k as f64);
            }
        }
        xs.push(m.xs[m.len() - 1]);
        let ds: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                if k % REFINE == 0 {
                    m.ds[k / REFINE]
                } else {
                    m.density_one(x).max(0.0)
                }
            })
            .collect();
        let mut cum = vec![0.0; xs.len()];
        for k in 1..xs.len() {
            cum[k] = cum[k - 1] + 0.5 * (xs[k] - xs[k - 1]) * (ds[k] + ds[k - 1]);
        }
        let total = cum[cum.len() - 1];
        Refined { xs, ds, cum, total }
    }

    fn cdf(&self, q: f64) -> f64 {
        let n = self.xs.len();
        if q <= self.xs[0] {
            return 0.0;
        }
        if q >= self.xs[n - 1] {
            return 1.0;
        }
        let k = self.xs.partition_point(|&x| x <= q) - 1;
        let s = q - self.xs[k];
        let h = self.xs[k + 1] - self.xs[k];
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let area = self.cum[k] + d0 * s + (d1 - d0) * s * s / (2.0 * h);
        (area / self.total).clamp(0.0, 1.0)
    }

    fn inverse(&self, p: f64) -> f64 {
        let n = self.xs.len();
        let target = p.clamp(0.0, 1.0) * self.total;
        if target <= 0.0 {
            return self.xs[0];
        }
        if target >= self.total {
            return self.xs[n - 1];
        }
        let k = (self.cum.partition_point(|&c| c < target)).clamp(1, n - 1) - 1;
        let h = self.xs[k + 1] - self.xs[k];
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let rem = target - self.cum[k];
        let a = (d1 - d0) / (2.0 * h);
        let disc = (d0 * d0 + 4.0 * a * rem).max(0.0);
        let denom = d0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * rem / denom } else { 0.0 };
        (self.xs[k] + s.clamp(0.0, h)).min(self.xs[k + 1])
    }

    /// Mass of the region where the density is at least `c`.
    fn mass_above(&self, c: f64) -> f64 {
        let mut m = 0.0;
        for k in 0..self.xs.len() - 1 {
            if let Some((a, b)) = self.segment_above(k, c) {
                let h = self.xs[k + 1] - self.xs[k];
                let (d0, d1) = (self.ds[k], self.ds[k + 1]);
                let at = |x: f64| d0 + (d1 - d0) * (x - self.xs[k]) / h;
                m += 0.5 * (b - a) * (at(a) + at(b));
            }
        }
        m / self.total
    }

    fn segment_above(&self, k: usize, c: f64) -> Option<(f64, f64)> {
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        match (d0 >= c, d1 >= c) {
            (true, true) => Some((x0, x1)),
            (false, false) => None,
            (true, false) => Some((x0, x0 + (x1 - x0) * (d0 - c) / (d0 - d1))),
            (false, true) => Some((x0 + (x1 - x0) * (c - d0) / (d1 - d0), x1)),
        }
    }

    fn level_set(&self, c: f64) -> Vec<(f64, f64)> {
        let mut runs: Vec<(f64, f64)> = Vec::new();
        for k in 0..self.xs.len() - 1 {
            if let Some((a, b)) = self.segment_above(k, c) {
                match runs.last_mut() {
                    Some(last) if last.1 >= a => last.1 = b,
                    _ => runs.push((a, b)),
                }
            }
        }
        runs
    }
}
