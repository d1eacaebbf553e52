//! Latent Gaussian model assembly.
//!
//! The latent field is laid out as `x = (η, c₁, c₂, …)`: one linear-predictor
//! element per observation followed by every component block in declaration
//! order. The predictor is tied to the components by a noisy constraint
//! `η | rest ~ N(offset + B·rest, τ_ε⁻¹ I)` with a large fixed `τ_ε`, which
//! keeps the joint precision sparse and full rank.

use std::f64::consts::LN_2;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::gmrf::{build_rw2_precision, rw2_log_det, SparseSymmetric};
use crate::likelihood::{LikelihoodFamily, Observation};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest number of hyperparameter slots a model may declare.
pub const MAX_HYPER_SLOTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    Intercept,
    FixedEffect,
    Iid,
    Rw2,
}

impl ComponentKind {
    pub fn label(&self) -> &'static str {
        match self {
            ComponentKind::Intercept => "intercept",
            ComponentKind::FixedEffect => "fixed",
            ComponentKind::Iid => "iid",
            ComponentKind::Rw2 => "rw2",
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, ComponentKind::Intercept | ComponentKind::FixedEffect)
    }
}

/// One block of the latent field and its contribution to every `η_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentComponent {
    pub name: String,
    pub kind: ComponentKind,
    pub size: usize,
    /// Per-observation covariate value (fixed effects only).
    pub covariate: Vec<f64>,
    /// Per-observation index into the block (iid and rw2 only).
    pub groups: Vec<usize>,
    /// Per-observation multiplier; `None` means all ones.
    pub weights: Option<Vec<f64>>,
    pub hyper_slot: Option<usize>,
    /// Prior precision of intercept and fixed effects. `None` uses the model
    /// default, `Some(0.0)` is a flat prior.
    pub prior_precision: Option<f64>,
}

impl LatentComponent {
    pub fn intercept() -> Self {
        Self::base("(Intercept)", ComponentKind::Intercept, 1)
    }

    pub fn fixed_effect(name: &str, covariate: Vec<f64>) -> Self {
        LatentComponent {
            covariate,
            ..Self::base(name, ComponentKind::FixedEffect, 1)
        }
    }

    pub fn iid(name: &str, groups: Vec<usize>, size: usize, hyper_slot: usize) -> Self {
        LatentComponent {
            groups,
            hyper_slot: Some(hyper_slot),
            ..Self::base(name, ComponentKind::Iid, size)
        }
    }

    pub fn rw2(name: &str, groups: Vec<usize>, size: usize, hyper_slot: usize) -> Self {
        LatentComponent {
            groups,
            hyper_slot: Some(hyper_slot),
            ..Self::base(name, ComponentKind::Rw2, size)
        }
    }

    fn base(name: &str, kind: ComponentKind, size: usize) -> Self {
        LatentComponent {
            name: name.to_string(),
            kind,
            size,
            covariate: Vec::new(),
            groups: Vec::new(),
            weights: None,
            hyper_slot: None,
            prior_precision: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_prior_precision(mut self, precision: f64) -> Self {
        self.prior_precision = Some(precision);
        self
    }

    fn weight(&self, obs: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[obs])
    }
}

/// Prior on one hyperparameter, always expressed on the log-precision scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperPrior {
    /// Exponential prior on the standard deviation with `P(σ > u) = alpha`.
    PcPrecision { u: f64, alpha: f64 },
    /// Precision fixed at `precision`; the slot is not estimated.
    Fixed { precision: f64 },
    /// Gamma(shape, rate) prior on the precision.
    LogGamma { shape: f64, rate: f64 },
}

impl HyperPrior {
    pub fn validate(&self, slot: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::HyperSlot { slot, reason });
        match *self {
            HyperPrior::PcPrecision { u, alpha } => {
                if !(u > 0.0) {
                    return bad(format!("pc prior needs u > 0, got {u}"));
                }
                if !(alpha > 0.0 && alpha < 1.0) {
                    return bad(format!("pc prior needs 0 < alpha < 1, got {alpha}"));
                }
            }
            HyperPrior::Fixed { precision } if !(precision > 0.0) => {
                return bad(format!("fixed precision must be positive, got {precision}"));
            }
            HyperPrior::LogGamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return bad("log-gamma prior needs positive shape and rate".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Rate of the exponential prior on σ for the PC prior.
    pub fn pc_rate(u: f64, alpha: f64) -> f64 {
        -alpha.ln() / u
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, HyperPrior::Fixed { .. })
    }

    /// Log density of `θ = log τ`, Jacobian included. Fixed priors contribute 0.
    pub fn log_density(&self, theta: f64) -> f64 {
        match *self {
            HyperPrior::PcPrecision { u, alpha } => {
                let lambda = Self::pc_rate(u, alpha);
                lambda.ln() - LN_2 - lambda * (-0.5 * theta).exp() - 0.5 * theta
            }
            HyperPrior::Fixed { .. } => 0.0,
            HyperPrior::LogGamma { shape, rate } => {
                shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + shape * theta
                    - rate * theta.exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    /// Log precision of the predictor noise tying `η` to the components.
    pub predictor_noise_log_precision: f64,
    /// Default prior precision for intercept and fixed effects.
    pub fixed_effect_prior_precision: f64,
    /// Diagonal added to rw2 precisions so they are proper.
    pub rw2_diagonal_noise: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            predictor_noise_log_precision: 15.0,
            fixed_effect_prior_precision: 0.001,
            rw2_diagonal_noise: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentGaussianModel {
    components: Vec<LatentComponent>,
    likelihood: LikelihoodFamily,
    observations: Vec<Observation>,
    hyperpriors: Vec<HyperPrior>,
    options: ModelOptions,
    offsets: Vec<f64>,
    starts: Vec<usize>,
    n_latent: usize,
    // row i of B: (latent index, coefficient) pairs contributing to η_i
    predictor_rows: Vec<Vec<(usize, f64)>>,
    free_slots: Vec<usize>,
}

impl LatentGaussianModel {
    pub fn new(
        components: Vec<LatentComponent>,
        likelihood: LikelihoodFamily,
        observations: Vec<Observation>,
        hyperpriors: Vec<HyperPrior>,
        options: ModelOptions,
    ) -> Result<Self> {
        let n_obs = observations.len();
        let mut model = LatentGaussianModel {
            components,
            likelihood,
            observations,
            hyperpriors,
            options,
            offsets: vec![0.0; n_obs],
            starts: Vec::new(),
            n_latent: 0,
            predictor_rows: Vec::new(),
            free_slots: Vec::new(),
        };
        model.validate()?;
        model.derive();
        Ok(model)
    }

    /// Adds a known offset to every linear predictor.
    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() != self.observations.len() {
            return Err(Error::DimensionMismatch {
                expected: self.observations.len(),
                got: offsets.len(),
            });
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::Validation("offsets must be finite".into()));
        }
        self.offsets = offsets;
        Ok(self)
    }

    /// Copy of the model with observation `obs` treated as missing.
    pub fn with_missing(&self, obs: usize) -> Result<Self> {
        if obs >= self.observations.len() {
            return Err(Error::IndexOutOfRange {
                index: obs,
                dim: self.observations.len(),
            });
        }
        let mut m = self.clone();
        m.observations[obs].missing = true;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let n_obs = self.observations.len();
        let n_slots = self.hyperpriors.len();
        if n_slots > MAX_HYPER_SLOTS {
            return Err(Error::Validation(format!(
                "{n_slots} hyperparameter slots exceed the limit of {MAX_HYPER_SLOTS}"
            )));
        }
        if self.components.is_empty() && n_obs == 0 {
            return Err(Error::EmptyModel);
        }
        for (s, p) in self.hyperpriors.iter().enumerate() {
            p.validate(s)?;
        }
        self.likelihood.validate()?;
        if let Some(slot) = self.likelihood.hyper_slot() {
            if slot >= n_slots {
                return Err(Error::HyperSlot {
                    slot,
                    reason: "likelihood references a slot without a prior".into(),
                });
            }
        }
        let mut seen = vec![false; n_obs];
        for o in &self.observations {
            if o.predictor_index >= n_obs || seen[o.predictor_index] {
                return Err(Error::Validation(format!(
                    "observation predictor index {} is out of range or repeated",
                    o.predictor_index
                )));
            }
            seen[o.predictor_index] = true;
            if !o.missing {
                self.likelihood.check_y(o.y)?;
            }
        }
        for c in &self.components {
            let ctx = |msg: String| Error::Validation(format!("component '{}': {msg}", c.name));
            if let Some(w) = &c.weights {
                if w.len() != n_obs {
                    return Err(ctx(format!("{} weights for {n_obs} observations", w.len())));
                }
            }
            match c.kind {
                ComponentKind::Intercept | ComponentKind::FixedEffect => {
                    if c.size != 1 {
                        return Err(ctx("fixed effects have size 1".into()));
                    }
                    if c.hyper_slot.is_some() {
                        return Err(ctx("fixed effects take no hyperparameter".into()));
                    }
                    if c.kind == ComponentKind::FixedEffect && c.covariate.len() != n_obs {
                        return Err(ctx(format!(
                            "{} covariate values for {n_obs} observations",
                            c.covariate.len()
                        )));
                    }
                    if c.covariate.iter().any(|v| !v.is_finite()) {
                        return Err(ctx("covariate values must be finite".into()));
                    }
                    if let Some(p) = c.prior_precision {
                        if !(p >= 0.0) {
                            return Err(ctx(format!("prior precision must be >= 0, got {p}")));
                        }
                    }
                }
                ComponentKind::Iid | ComponentKind::Rw2 => {
                    if c.size == 0 {
                        return Err(Error::EmptyModel);
                    }
                    if c.kind == ComponentKind::Rw2 && c.size < 3 {
                        return Err(Error::InsufficientLength(c.size));
                    }
                    let slot = c.hyper_slot.ok_or_else(|| ctx("needs a hyperparameter slot".into()))?;
                    if slot >= n_slots {
                        return Err(Error::HyperSlot {
                            slot,
                            reason: format!("component '{}' references a slot without a prior", c.name),
                        });
                    }
                    if c.groups.len() != n_obs {
                        return Err(ctx(format!(
                            "{} group indices for {n_obs} observations",
                            c.groups.len()
                        )));
                    }
                    if let Some(g) = c.groups.iter().find(|&&g| g >= c.size) {
                        return Err(ctx(format!("group index {g} outside [0, {})", c.size)));
                    }
                }
            }
        }
        if !(self.options.predictor_noise_log_precision.is_finite()
            && self.options.fixed_effect_prior_precision >= 0.0
            && self.options.rw2_diagonal_noise > 0.0)
        {
            return Err(Error::Validation("invalid model options".into()));
        }
        Ok(())
    }

    fn derive(&mut self) {
        let n_obs = self.observations.len();
        let mut start = n_obs;
        self.starts = self
            .components
            .iter()
            .map(|c| {
                let s = start;
                start += c.size;
                s
            })
            .collect();
        self.n_latent = start;

        // η rows are indexed by predictor index; component maps by observation
        let mut rows = vec![Vec::new(); n_obs];
        for (k, obs) in self.observations.iter().enumerate() {
            let row = &mut rows[obs.predictor_index];
            for (c, &s) in self.components.iter().zip(&self.starts) {
                let w = c.weight(k);
                let (col, v) = match c.kind {
                    ComponentKind::Intercept => (s, w),
                    ComponentKind::FixedEffect => (s, w * c.covariate[k]),
                    ComponentKind::Iid | ComponentKind::Rw2 => (s + c.groups[k], w),
                };
                if v != 0.0 {
                    row.push((col, v));
                }
            }
        }
        self.predictor_rows = rows;
        self.free_slots = (0..self.hyperpriors.len())
            .filter(|&s| !self.hyperpriors[s].is_fixed())
            .collect();
    }

    pub fn components(&self) -> &[LatentComponent] {
        &self.components
    }

    pub fn likelihood(&self) -> LikelihoodFamily {
        self.likelihood
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn hyperpriors(&self) -> &[HyperPrior] {
        &self.hyperpriors
    }

    pub fn options(&self) -> &ModelOptions {
        &self.options
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.n_latent
    }

    pub fn n_hyper(&self) -> usize {
        self.hyperpriors.len()
    }

    /// Slots whose prior is not fixed; these are the coordinates explored
    /// by the hyperparameter posterior.
    pub fn free_slots(&self) -> &[usize] {
        &self.free_slots
    }

    /// Full hyperparameter vector from the free coordinates.
    pub fn expand_theta(&self, free: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.free_slots.len() {
            return Err(Error::DimensionMismatch {
                expected: self.free_slots.len(),
                got: free.len(),
            });
        }
        let mut theta = vec![0.0; self.hyperpriors.len()];
        for (s, p) in self.hyperpriors.iter().enumerate() {
            if let HyperPrior::Fixed { precision } = p {
                theta[s] = precision.ln();
            }
        }
        for (&s, &v) in self.free_slots.iter().zip(free) {
            theta[s] = v;
        }
        Ok(theta)
    }

    /// Starting point for the hyperparameter search (log precision 4).
    pub fn initial_free_theta(&self) -> Vec<f64> {
        vec![4.0; self.free_slots.len()]
    }

    pub fn component_range(&self, index: usize) -> Range<usize> {
        let s = self.starts[index];
        s..s + self.components[index].size
    }

    pub fn component_by_name(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    pub fn predictor_range(&self) -> Range<usize> {
        0..self.n_obs()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Prior mean of the latent field: offsets on `η`, zero elsewhere.
    pub fn prior_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_latent];
        m[..self.n_obs()].copy_from_slice(&self.offsets);
        m
    }

    fn fixed_precision(&self, c: &LatentComponent) -> f64 {
        c.prior_precision
            .unwrap_or(self.options.fixed_effect_prior_precision)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.hyperpriors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.hyperpriors.len(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFiniteObjective(theta.to_vec()));
        }
        Ok(())
    }

    /// Precision of the component block `index` alone (prior only).
    fn component_precision_triplets(
        &self,
        index: usize,
        theta: &[f64],
        out: &mut Vec<(usize, usize, f64)>,
    ) -> Result<()> {
        let c = &self.components[index];
        let s = self.starts[index];
        match c.kind {
            ComponentKind::Intercept | ComponentKind::FixedEffect => {
                out.push((s, s, self.fixed_precision(c)));
            }
            ComponentKind::Iid => {
                let tau = theta[c.hyper_slot.expect("validated")].exp();
                out.extend((0..c.size).map(|k| (s + k, s + k, tau)));
            }
            ComponentKind::Rw2 => {
                let q = build_rw2_precision(c.size, theta[c.hyper_slot.expect("validated")])?;
                out.extend(q.iter_lower().map(|(i, j, v)| (s + i, s + j, v)));
                let kappa = self.options.rw2_diagonal_noise;
                out.extend((0..c.size).map(|k| (s + k, s + k, kappa)));
            }
        }
        Ok(())
    }

    /// Joint prior precision `Q(θ)` of the augmented latent field.
    pub fn assemble_joint_precision(&self, theta: &[f64]) -> Result<SparseSymmetric> {
        self.check_theta(theta)?;
        let tau_eps = self.options.predictor_noise_log_precision.exp();
        let mut trip = Vec::new();
        for (i, row) in self.predictor_rows.iter().enumerate() {
            trip.push((i, i, tau_eps));
            for (a, &(ca, va)) in row.iter().enumerate() {
                trip.push((ca, i, -tau_eps * va));
                for &(cb, vb) in &row[..=a] {
                    trip.push((ca, cb, tau_eps * va * vb));
                }
            }
        }
        for k in 0..self.components.len() {
            self.component_precision_triplets(k, theta, &mut trip)?;
        }
        SparseSymmetric::from_triplets(self.n_latent, trip)
    }

    /// `log |Q(θ)|` restricted to the proper part of the prior (flat fixed
    /// effects excluded), and the dimension of that part.
    pub fn log_det_prior_precision(&self, theta: &[f64]) -> Result<(f64, usize)> {
        self.check_theta(theta)?;
        let mut log_det = self.n_obs() as f64 * self.options.predictor_noise_log_precision;
        let mut dim = self.n_obs();
        for c in &self.components {
            match c.kind {
                ComponentKind::Intercept | ComponentKind::FixedEffect => {
                    let p = self.fixed_precision(c);
                    if p > 0.0 {
                        log_det += p.ln();
                        dim += 1;
                    }
                }
                ComponentKind::Iid => {
                    log_det += c.size as f64 * theta[c.hyper_slot.expect("validated")];
                    dim += c.size;
                }
                ComponentKind::Rw2 => {
                    log_det += rw2_log_det(
                        c.size,
                        theta[c.hyper_slot.expect("validated")],
                        self.options.rw2_diagonal_noise,
                    )?;
                    dim += c.size;
                }
            }
        }
        Ok((log_det, dim))
    }

    /// `log π(θ)`: sum of the slot priors on the log-precision scale.
    pub fn log_prior_hyper(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        let mut total = 0.0;
        for (s, (p, &t)) in self.hyperpriors.iter().zip(theta).enumerate() {
            if let HyperPrior::Fixed { precision } = p {
                if (t - precision.ln()).abs() > 1e-12 {
                    return Err(Error::HyperSlot {
                        slot: s,
                        reason: format!("fixed at log precision {}, got {t}", precision.ln()),
                    });
                }
            }
            total += p.log_density(t);
        }
        Ok(total)
    }

    /// `(x−μ)ᵀ Q(θ) (x−μ)` for centred `x−μ`, evaluated block by block so the
    /// large predictor-noise precision does not cancel catastrophically.
    pub fn prior_quad_form(&self, centered: &[f64], theta: &[f64]) -> Result<f64> {
        if centered.len() != self.n_latent {
            return Err(Error::DimensionMismatch {
                expected: self.n_latent,
                got: centered.len(),
            });
        }
        self.check_theta(theta)?;
        let tau_eps = self.options.predictor_noise_log_precision.exp();
        let mut noise = 0.0;
        for (i, row) in self.predictor_rows.iter().enumerate() {
            let r = centered[i] - row.iter().map(|&(c, v)| v * centered[c]).sum::<f64>();
            noise += r * r;
        }
        let mut total = tau_eps * noise;
        let mut trip = Vec::new();
        for k in 0..self.components.len() {
            trip.clear();
            self.component_precision_triplets(k, theta, &mut trip)?;
            for &(i, j, v) in &trip {
                total += if i == j { v } else { 2.0 * v } * centered[i] * centered[j];
            }
        }
        Ok(total)
    }

    /// `log π(x | θ)` for the Gaussian prior of the latent field. Flat
    /// fixed-effect priors contribute density one.
    pub fn log_prior_latent(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        if x.len() != self.n_latent {
            return Err(Error::DimensionMismatch {
                expected: self.n_latent,
                got: x.len(),
            });
        }
        let (log_det, dim) = self.log_det_prior_precision(theta)?;
        let centered: Vec<f64> = x.iter().zip(self.prior_mean()).map(|(a, m)| a - m).collect();
        Ok(-0.5 * self.prior_quad_form(&centered, theta)? + 0.5 * log_det - 0.5 * dim as f64 * LN_2PI)
    }

    /// `Σ log π(y_i | η_i, θ)` over non-missing observations.
    pub fn log_likelihood(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for o in self.observations.iter().filter(|o| !o.missing) {
            total += self.likelihood.terms(o.y, x[o.predictor_index], theta)?.0;
        }
        Ok(total)
    }

    /// Value, gradient and negative curvature of the log-likelihood with
    /// respect to each `η_i`.
    pub fn likelihood_terms(&self, x: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = self.n_obs();
        let mut grad = vec![0.0; n];
        let mut curv = vec![0.0; n];
        let mut total = 0.0;
        for o in self.observations.iter().filter(|o| !o.missing) {
            let i = o.predictor_index;
            let (f, d1, d2) = self.likelihood.terms(o.y, x[i], theta)?;
            total += f;
            grad[i] = d1;
            curv[i] = -d2;
        }
        Ok((total, grad, curv))
    }

    /// `offset + B·rest` for the non-predictor part of the latent field.
    pub fn predictor_from_components(&self, rest: &[f64]) -> Result<Vec<f64>> {
        let n_obs = self.n_obs();
        if rest.len() != self.n_latent - n_obs {
            return Err(Error::DimensionMismatch {
                expected: self.n_latent - n_obs,
                got: rest.len(),
            });
        }
        Ok(self
            .predictor_rows
            .iter()
            .zip(&self.offsets)
            .map(|(row, o)| o + row.iter().map(|&(c, v)| v * rest[c - n_obs]).sum::<f64>())
            .collect())
    }

    /// Human-readable label for a latent index, e.g. `Predictor.07` or `u.3`.
    pub fn latent_label(&self, index: usize) -> String {
        let n_obs = self.n_obs();
        if index < n_obs {
            let width = n_obs.to_string().len().max(2);
            return format!("Predictor.{:0width$}", index + 1);
        }
        for (k, c) in self.components.iter().enumerate() {
            let r = self.component_range(k);
            if r.contains(&index) {
                return if c.size == 1 {
                    c.name.clone()
                } else {
                    format!("{}.{}", c.name, index - r.start + 1)
                };
            }
        }
        format!("x.{index}")
    }
}
