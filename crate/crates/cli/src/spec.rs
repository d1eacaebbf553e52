//! Model-spec documents (TOML) and their translation into an engine model.
//!
//! ```toml
//! data = "salm.csv"
//!
//! [likelihood]
//! family = "poisson"
//! response = "y"
//!
//! [[components]]
//! kind = "intercept"
//! prior_precision = 0.0
//!
//! [[components]]
//! kind = "fixed"
//! name = "log(x + 10)"
//! covariate = "dose"
//! transform = "log"
//! shift = 10.0
//!
//! [[components]]
//! kind = "iid"
//! name = "u"
//! prior = "u"
//!
//! [priors.u]
//! kind = "pc"
//! u = 1.0
//! alpha = 0.01
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use inla_core::integration::Strategy;
use inla_core::latent_marginals::LatentStrategy;
use inla_core::likelihood::{LikelihoodFamily, Observation};
use inla_core::model::{ComponentKind, HyperPrior, LatentComponent, LatentGaussianModel, ModelOptions};
use serde::Deserialize;

use crate::data::DataTable;
use crate::error::{CliError, Context, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Data file, relative to the spec file.
    pub data: Option<PathBuf>,
    pub likelihood: LikelihoodSpec,
    #[serde(default)]
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub priors: BTreeMap<String, PriorSpec>,
    #[serde(default)]
    pub options: OptionsSpec,
    pub mcmc: Option<McmcSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodSpec {
    pub family: String,
    pub response: String,
    /// Known observation precision (gaussian).
    pub precision: Option<f64>,
    /// Prior of an estimated observation precision (gaussian).
    pub prior: Option<String>,
    /// Column added to every linear predictor.
    pub offset: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Log,
    Sqrt,
}

impl Transform {
    fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log => v.ln(),
            Transform::Sqrt => v.sqrt(),
        }
    }

    fn label(self, column: &str, shift: f64) -> String {
        let inner = if shift == 0.0 {
            column.to_string()
        } else if shift > 0.0 {
            format!("{column} + {shift}")
        } else {
            format!("{column} - {}", -shift)
        };
        match self {
            Transform::Identity if shift == 0.0 => inner,
            Transform::Identity => format!("({inner})"),
            Transform::Log => format!("log({inner})"),
            Transform::Sqrt => format!("sqrt({inner})"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ComponentSpec {
    Intercept {
        name: Option<String>,
        prior_precision: Option<f64>,
    },
    Fixed {
        name: Option<String>,
        covariate: String,
        #[serde(default)]
        transform: Transform,
        /// Added to the column before the transform.
        #[serde(default)]
        shift: f64,
        prior_precision: Option<f64>,
    },
    Iid {
        name: Option<String>,
        /// Column of 1-based group labels; each row is its own group if absent.
        group: Option<String>,
        size: Option<usize>,
        prior: String,
        weights: Option<String>,
    },
    Rw2 {
        name: Option<String>,
        group: Option<String>,
        size: Option<usize>,
        prior: String,
        weights: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorSpec {
    /// `P(σ > u) = alpha`.
    Pc { u: f64, alpha: f64 },
    /// Gamma prior on the precision.
    Loggamma { shape: f64, rate: f64 },
    Fixed { precision: f64 },
}

impl From<PriorSpec> for HyperPrior {
    fn from(p: PriorSpec) -> Self {
        match p {
            PriorSpec::Pc { u, alpha } => HyperPrior::PcPrecision { u, alpha },
            PriorSpec::Loggamma { shape, rate } => HyperPrior::LogGamma { shape, rate },
            PriorSpec::Fixed { precision } => HyperPrior::Fixed { precision },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSpec {
    pub fixed_prior_precision: Option<f64>,
    pub predictor_log_precision: Option<f64>,
    pub rw2_noise: Option<f64>,
    pub strategy: Option<String>,
    pub latent: Option<String>,
    pub grid_step: Option<f64>,
    pub grid_cutoff: Option<f64>,
    pub ccd_f0: Option<f64>,
}

/// Fixed effects to sample by Metropolis–Hastings instead of integrating.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSpec {
    pub condition: Vec<String>,
    pub init: Option<Vec<f64>>,
    pub scale: Option<f64>,
    #[serde(default)]
    pub track: Vec<String>,
}

impl ModelSpec {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("{}: {e}", origin.display())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// The data file named in the spec, resolved against the spec's directory.
    pub fn data_path(&self, spec_path: &Path) -> Option<PathBuf> {
        self.data.as_ref().map(|d| match spec_path.parent() {
            Some(dir) if d.is_relative() => dir.join(d),
            _ => d.clone(),
        })
    }

    pub fn strategy(&self, name: Option<&str>, step: Option<f64>, cutoff: Option<f64>) -> Result<Option<Strategy>> {
        let o = &self.options;
        let name = name.or(o.strategy.as_deref());
        let default_grid = Strategy::default_grid();
        let Strategy::Grid {
            step: def_step,
            cutoff: def_cutoff,
        } = default_grid
        else {
            unreachable!()
        };
        let grid = Strategy::Grid {
            step: step.or(o.grid_step).unwrap_or(def_step),
            cutoff: cutoff.or(o.grid_cutoff).unwrap_or(def_cutoff),
        };
        let s = match name {
            None if step.is_some() || cutoff.is_some() || o.grid_step.is_some() || o.grid_cutoff.is_some() => {
                Some(grid)
            }
            None | Some("auto") => None,
            Some("grid") => Some(grid),
            Some("ccd") => Some(Strategy::Ccd {
                f0: o.ccd_f0.unwrap_or(1.1),
            }),
            Some("eb") => Some(Strategy::EmpiricalBayes),
            Some(other) => {
                return Err(CliError::validation(format!(
                    "unknown strategy '{other}' (expected grid, ccd, eb or auto)"
                )))
            }
        };
        if let Some(Strategy::Grid { step, cutoff }) = s {
            if !(step > 0.0 && cutoff > 0.0) {
                return Err(CliError::validation("grid step and cutoff must be positive"));
            }
        }
        Ok(s)
    }

    pub fn latent_strategy(&self, name: Option<&str>) -> Result<LatentStrategy> {
        match name.or(self.options.latent.as_deref()) {
            None | Some("gaussian") => Ok(LatentStrategy::Gaussian),
            Some("laplace") => Ok(LatentStrategy::Laplace),
            Some(other) => Err(CliError::validation(format!(
                "unknown latent strategy '{other}' (expected gaussian or laplace)"
            ))),
        }
    }

    pub fn build(&self, data: &DataTable) -> Result<BuiltModel> {
        Builder::new(self, data).build()
    }
}

/// Engine model plus the names needed for reporting.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub model: LatentGaussianModel,
    /// Display name per hyperparameter slot, e.g. `Precision for u`.
    pub hyper_names: Vec<String>,
    /// Per component: the source column and covariate values as read.
    pub covariates: Vec<Option<(String, Vec<f64>)>>,
}

struct Builder<'a> {
    spec: &'a ModelSpec,
    data: &'a DataTable,
    slots: Vec<String>,
    slot_owner: Vec<String>,
}

impl<'a> Builder<'a> {
    fn new(spec: &'a ModelSpec, data: &'a DataTable) -> Self {
        Builder {
            spec,
            data,
            slots: Vec::new(),
            slot_owner: Vec::new(),
        }
    }

    fn slot(&mut self, prior: &str, owner: &str) -> Result<usize> {
        if !self.spec.priors.contains_key(prior) {
            return Err(CliError::validation(format!(
                "{owner} refers to prior '{prior}', which is not defined under [priors]"
            )));
        }
        if let Some(s) = self.slots.iter().position(|p| p == prior) {
            return Ok(s);
        }
        self.slots.push(prior.to_string());
        self.slot_owner.push(owner.to_string());
        Ok(self.slots.len() - 1)
    }

    fn groups(&self, group: &Option<String>, size: Option<usize>, name: &str) -> Result<(Vec<usize>, usize)> {
        let n = self.data.n_rows();
        let labels = match group {
            Some(col) => self.data.label_column(col)?,
            None => (0..n).collect(),
        };
        let max = labels.iter().max().map_or(0, |m| m + 1);
        let size = size.unwrap_or(max);
        if max > size {
            return Err(CliError::validation(format!(
                "component '{name}': group label {max} exceeds size {size}"
            )));
        }
        Ok((labels, size))
    }

    fn build(mut self) -> Result<BuiltModel> {
        let n = self.data.n_rows();
        if n == 0 {
            return Err(CliError::validation("data has no rows"));
        }
        if self.spec.components.is_empty() {
            return Err(CliError::validation("model spec declares no components"));
        }
        let mut components = Vec::new();
        let mut covariates = Vec::new();
        for c in &self.spec.components {
            let (comp, cov) = match c {
                ComponentSpec::Intercept { name, prior_precision } => {
                    let mut comp = LatentComponent::intercept();
                    if let Some(name) = name {
                        comp.name = name.clone();
                    }
                    comp.prior_precision = *prior_precision;
                    (comp, None)
                }
                ComponentSpec::Fixed {
                    name,
                    covariate,
                    transform,
                    shift,
                    prior_precision,
                } => {
                    let raw = self.data.column(covariate)?;
                    let name = name.clone().unwrap_or_else(|| transform.label(covariate, *shift));
                    let vals: Vec<f64> = raw.iter().map(|&v| transform.apply(v + shift)).collect();
                    if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
                        return Err(CliError::validation(format!(
                            "component '{name}': covariate is not finite at row {} after the transform",
                            k + 1
                        )));
                    }
                    let mut comp = LatentComponent::fixed_effect(&name, vals);
                    comp.prior_precision = *prior_precision;
                    (comp, Some((covariate.clone(), raw)))
                }
                ComponentSpec::Iid {
                    name,
                    group,
                    size,
                    prior,
                    weights,
                }
                | ComponentSpec::Rw2 {
                    name,
                    group,
                    size,
                    prior,
                    weights,
                } => {
                    let name = name.clone().or_else(|| group.clone()).unwrap_or_else(|| "index".into());
                    let (labels, size) = self.groups(group, *size, &name)?;
                    let slot = self.slot(prior, &format!("component '{name}'"))?;
                    let mut comp = if matches!(c, ComponentSpec::Iid { .. }) {
                        LatentComponent::iid(&name, labels, size, slot)
                    } else {
                        LatentComponent::rw2(&name, labels, size, slot)
                    };
                    if let Some(w) = weights {
                        comp = comp.with_weights(self.data.column(w)?);
                    }
                    (comp, None)
                }
            };
            if components.iter().any(|o: &LatentComponent| o.name == comp.name) {
                return Err(CliError::validation(format!("duplicate component name '{}'", comp.name)));
            }
            components.push(comp);
            covariates.push(cov);
        }

        let lik = &self.spec.likelihood;
        let family = match LikelihoodFamily::parse_name(&lik.family) {
            Some("poisson") => {
                if lik.precision.is_some() || lik.prior.is_some() {
                    return Err(CliError::validation("poisson likelihood takes no precision or prior"));
                }
                LikelihoodFamily::Poisson
            }
            Some(_) => match (lik.precision, &lik.prior) {
                (Some(precision), None) => LikelihoodFamily::GaussianKnownPrecision { precision },
                (None, Some(p)) => LikelihoodFamily::GaussianHyperPrecision {
                    slot: self.slot(p, "the likelihood")?,
                },
                _ => {
                    return Err(CliError::validation(
                        "gaussian likelihood needs exactly one of 'precision' or 'prior'",
                    ))
                }
            },
            None => {
                return Err(CliError::validation(format!(
                    "unknown likelihood family '{}' (expected poisson or gaussian)",
                    lik.family
                )))
            }
        };
        if let Some(unused) = self.spec.priors.keys().find(|k| !self.slots.contains(k)) {
            return Err(CliError::validation(format!("prior '{unused}' is not used by any component")));
        }

        let response = self.data.optional_column(&lik.response)?;
        let observations: Vec<Observation> = response
            .iter()
            .enumerate()
            .map(|(i, y)| match y {
                Some(y) => Observation::new(*y, i),
                None => Observation::missing(i),
            })
            .collect();
        let priors: Vec<HyperPrior> = self.slots.iter().map(|p| self.spec.priors[p].into()).collect();

        let o = &self.spec.options;
        let defaults = ModelOptions::default();
        let options = ModelOptions {
            predictor_noise_log_precision: o
                .predictor_log_precision
                .unwrap_or(defaults.predictor_noise_log_precision),
            fixed_effect_prior_precision: o.fixed_prior_precision.unwrap_or(defaults.fixed_effect_prior_precision),
            rw2_diagonal_noise: o.rw2_noise.unwrap_or(defaults.rw2_diagonal_noise),
        };
        let mut model =
            LatentGaussianModel::new(components, family, observations, priors, options).context("model")?;
        if let Some(col) = &lik.offset {
            model = model.with_offsets(self.data.column(col)?).context("model")?;
        }
        let hyper_names = self
            .slot_owner
            .iter()
            .map(|owner| match owner.strip_prefix("component '") {
                Some(rest) => format!("Precision for {}", rest.trim_end_matches('\'')),
                None => "Precision for the Gaussian observations".to_string(),
            })
            .collect();
        Ok(BuiltModel {
            model,
            hyper_names,
            covariates,
        })
    }
}

/// Label used in the random-effects table, e.g. `IID model`.
pub fn component_model_label(kind: ComponentKind) -> &'static str {
    match kind {
        ComponentKind::Iid => "IID model",
        ComponentKind::Rw2 => "RW2 model",
        ComponentKind::Intercept | ComponentKind::FixedEffect => "Fixed effect",
    }
}
