//! The persisted fit result: one JSON document with the summary tables, a
//! directory of two-column marginal files, and the per-support-point
//! conditional tables used for plot data.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use inla_core::fit::{precision_marginal, sd_marginal, FitOutput};
use inla_core::integration::Strategy;
use inla_core::marginal::Marginal;
use inla_core::prediction::{fitted_value_marginal, Link};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context, Result};
use crate::spec::{component_model_label, BuiltModel};

pub const RESULT_FILE: &str = "result.json";
pub const CONDITIONALS_FILE: &str = "conditionals.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const MARGINAL_DIR: &str = "marginals";
const FORMAT: &str = "inla-result/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    #[serde(rename = "0.025quant")]
    pub q025: f64,
    #[serde(rename = "0.5quant")]
    pub q500: f64,
    #[serde(rename = "0.975quant")]
    pub q975: f64,
    pub mode: f64,
    /// Marginal file, relative to the result directory.
    pub marginal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffect {
    pub name: String,
    pub model: String,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationInfo {
    pub strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_cutoff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ccd_f0: Option<f64>,
    pub latent_strategy: String,
    pub support_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRow {
    /// Free hyperparameters on the log-precision scale.
    pub theta: Vec<f64>,
    pub log_posterior: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub format: String,
    pub likelihood: String,
    pub n_obs: usize,
    pub latent_dim: usize,
    pub integration: IntegrationInfo,
    /// Hyperparameter mode on the log-precision scale.
    pub hyper_mode: Vec<f64>,
    pub log_marginal_likelihood: f64,
    pub fixed: Vec<SummaryRow>,
    pub random: Vec<RandomEffect>,
    /// Precisions.
    pub hyper: Vec<SummaryRow>,
    /// The same hyperparameters as standard deviations.
    pub hyper_sd: Vec<SummaryRow>,
    pub predictor: Vec<SummaryRow>,
    pub fitted: Vec<SummaryRow>,
    pub support: Vec<SupportRow>,
}

/// Conditional tables of every latent marginal at every support point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditionals {
    pub names: Vec<String>,
    pub support: Vec<ConditionalSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSet {
    pub theta: Vec<f64>,
    pub weight: f64,
    /// Aligned with `Conditionals::names`.
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl From<&Marginal> for Table {
    fn from(m: &Marginal) -> Self {
        Table {
            x: m.xs().to_vec(),
            density: m.ds().to_vec(),
        }
    }
}

impl Table {
    pub fn to_marginal(&self) -> Result<Marginal> {
        Marginal::new(self.x.clone(), self.density.clone()).context("conditional table")
    }
}

/// File-name-safe version of a row name.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let t = out.trim_matches('_');
    if t.is_empty() {
        "x".to_string()
    } else {
        t.to_string()
    }
}

/// Everything `write_result` puts on disk, held in memory.
pub struct ResultBundle {
    pub result: FitResult,
    /// `(relative path, marginal)` per summary row.
    pub files: Vec<(String, Marginal)>,
    pub conditionals: Conditionals,
}

struct RowBuilder {
    files: Vec<(String, Marginal)>,
}

impl RowBuilder {
    fn row(&mut self, section: &str, name: &str, m: Marginal) -> Result<SummaryRow> {
        let s = m.summarize().context(name)?;
        let stem = slug(name);
        let path = if stem.starts_with(&format!("{section}.")) {
            format!("{MARGINAL_DIR}/{stem}.txt")
        } else {
            format!("{MARGINAL_DIR}/{section}.{stem}.txt")
        };
        if self.files.iter().any(|(p, _)| *p == path) {
            return Err(CliError::validation(format!("two rows map to the file name {path}")));
        }
        self.files.push((path.clone(), m));
        Ok(SummaryRow {
            name: name.to_string(),
            mean: s.mean,
            sd: s.sd,
            q025: s.quantiles[0],
            q500: s.quantiles[2],
            q975: s.quantiles[4],
            mode: s.mode,
            marginal: path,
        })
    }
}

/// Builds the result document from a fit that tracked every latent index.
pub fn build_result(built: &BuiltModel, out: &FitOutput) -> Result<ResultBundle> {
    let model = &built.model;
    let mut rb = RowBuilder { files: Vec::new() };
    let latent = |i: usize| out.latent_marginal(i).cloned().context("latent marginal");

    let mut fixed = Vec::new();
    let mut random = Vec::new();
    for (k, c) in model.components().iter().enumerate() {
        let range = model.component_range(k);
        if c.kind.is_fixed() {
            fixed.push(rb.row("fixed", &c.name, latent(range.start)?)?);
        } else {
            let rows = range
                .map(|i| rb.row("random", &model.latent_label(i), latent(i)?))
                .collect::<Result<Vec<_>>>()?;
            random.push(RandomEffect {
                name: c.name.clone(),
                model: component_model_label(c.kind).to_string(),
                rows,
            });
        }
    }

    let mut hyper = Vec::new();
    let mut hyper_sd = Vec::new();
    for (k, &slot) in model.free_slots().iter().enumerate() {
        let name = &built.hyper_names[slot];
        let lp = &out.hyper[k];
        hyper.push(rb.row("hyper", name, precision_marginal(lp).context(name)?)?);
        let sd_name = name.replacen("Precision", "Stdev", 1);
        hyper_sd.push(rb.row("hyper_sd", &sd_name, sd_marginal(lp).context(name)?)?);
    }

    let link = Link::for_family(model.likelihood());
    let mut predictor = Vec::new();
    let mut fitted = Vec::new();
    for i in model.predictor_range() {
        let label = model.latent_label(i);
        predictor.push(rb.row("predictor", &label, latent(i)?)?);
        let fv = fitted_value_marginal(out, i, link).context(&label)?;
        fitted.push(rb.row("fitted", &format!("fitted.{label}"), fv)?);
    }

    let (grid_step, grid_cutoff, ccd_f0) = match out.strategy {
        Strategy::Grid { step, cutoff } => (Some(step), Some(cutoff), None),
        Strategy::Ccd { f0 } => (None, None, Some(f0)),
        Strategy::EmpiricalBayes => (None, None, None),
    };
    let result = FitResult {
        format: FORMAT.to_string(),
        likelihood: model.likelihood().name().to_string(),
        n_obs: model.n_obs(),
        latent_dim: model.latent_dim(),
        integration: IntegrationInfo {
            strategy: out.strategy.name().to_string(),
            grid_step,
            grid_cutoff,
            ccd_f0,
            latent_strategy: out.latent_strategy.name().to_string(),
            support_points: out.support.len(),
        },
        hyper_mode: out.theta.mode.clone(),
        log_marginal_likelihood: out.log_marginal_likelihood,
        fixed,
        random,
        hyper,
        hyper_sd,
        predictor,
        fitted,
        support: out
            .support
            .iter()
            .map(|s| SupportRow {
                theta: s.point.theta.clone(),
                log_posterior: s.point.log_post,
                weight: s.weight,
            })
            .collect(),
    };
    let conditionals = Conditionals {
        names: out.latent_indices.iter().map(|&i| model.latent_label(i)).collect(),
        support: out
            .support
            .iter()
            .map(|s| ConditionalSet {
                theta: s.point.theta.clone(),
                weight: s.weight,
                tables: s.marginals.iter().map(Table::from).collect(),
            })
            .collect(),
    };
    Ok(ResultBundle {
        result,
        files: rb.files,
        conditionals,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn write_marginal(path: &Path, m: &Marginal) -> Result<()> {
    let mut w = create(path)?;
    m.write_two_column(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn write_curve(path: &Path, xs: &[f64], ds: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    xs.iter()
        .zip(ds)
        .try_for_each(|(x, d)| writeln!(w, "{x:e} {d:e}"))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_result(dir: &Path, bundle: &ResultBundle) -> Result<()> {
    create_dir(&dir.join(MARGINAL_DIR))?;
    for (rel, m) in &bundle.files {
        write_marginal(&dir.join(rel), m)?;
    }
    write_json(&dir.join(CONDITIONALS_FILE), &bundle.conditionals)?;
    write_json(&dir.join(RESULT_FILE), &bundle.result)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::validation(format!("{}: corrupt result document: {e}", path.display())))
}

/// Accepts either the result directory or the `result.json` inside it.
pub fn result_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }
}

pub fn read_result(path: &Path) -> Result<FitResult> {
    let file = if path.is_dir() { path.join(RESULT_FILE) } else { path.to_path_buf() };
    let r: FitResult = read_json(&file)?;
    if r.format != FORMAT {
        return Err(CliError::validation(format!(
            "{}: unsupported result format '{}'",
            file.display(),
            r.format
        )));
    }
    Ok(r)
}

pub fn read_conditionals(dir: &Path) -> Result<Conditionals> {
    read_json(&dir.join(CONDITIONALS_FILE))
}

pub fn read_marginal(path: &Path) -> Result<Marginal> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Marginal::read_two_column(BufReader::new(file)).context(&path.display().to_string())
}

impl FitResult {
    /// Every row in document order.
    pub fn rows(&self) -> impl Iterator<Item = &SummaryRow> {
        self.fixed
            .iter()
            .chain(self.random.iter().flat_map(|r| &r.rows))
            .chain(&self.hyper)
            .chain(&self.hyper_sd)
            .chain(&self.predictor)
            .chain(&self.fitted)
    }

    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows().find(|r| r.name == name)
    }
}

/// Four significant digits, switching to exponent form for very large or
/// small magnitudes.
pub fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let a = v.abs();
    if !(1e-4..1e6).contains(&a) {
        return format!("{v:.3e}");
    }
    let exp = a.log10().floor() as i32;
    let decimals = (3 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

fn table(out: &mut String, rows: &[&SummaryRow]) {
    let header = ["mean", "sd", "0.025quant", "0.5quant", "0.975quant", "mode"];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            [r.mean, r.sd, r.q025, r.q500, r.q975, r.mode]
                .iter()
                .map(|&v| format_number(v))
                .collect()
        })
        .collect();
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..header.len())
        .map(|j| cells.iter().map(|c| c[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    out.push_str(&" ".repeat(name_w));
    for (h, w) in header.iter().zip(&widths) {
        out.push_str(&format!(" {h:>w$}"));
    }
    out.push('\n');
    for (r, c) in rows.iter().zip(&cells) {
        out.push_str(&format!("{:<name_w$}", r.name));
        for (v, w) in c.iter().zip(&widths) {
            out.push_str(&format!(" {v:>w$}"));
        }
        out.push('\n');
    }
}

/// Fixed-width text rendering of a result document.
pub fn render_summary(r: &FitResult) -> String {
    let mut s = String::new();
    let i = &r.integration;
    s.push_str(&format!(
        "Integration: {} over {} point{}, latent marginals: {}\n",
        i.strategy,
        i.support_points,
        if i.support_points == 1 { "" } else { "s" },
        i.latent_strategy
    ));
    s.push_str(&format!("Likelihood: {}, {} observations\n\n", r.likelihood, r.n_obs));
    if !r.fixed.is_empty() {
        s.push_str("Fixed effects:\n");
        table(&mut s, &r.fixed.iter().collect::<Vec<_>>());
        s.push('\n');
    }
    if !r.random.is_empty() {
        s.push_str("Random effects:\n");
        let w = r.random.iter().map(|e| e.name.len()).max().unwrap_or(0).max(4);
        s.push_str(&format!("{:<w$} Model\n", "Name"));
        for e in &r.random {
            s.push_str(&format!("{:<w$} {}\n", e.name, e.model));
        }
        s.push('\n');
    }
    if !r.hyper.is_empty() {
        s.push_str("Model hyperparameters:\n");
        table(&mut s, &r.hyper.iter().collect::<Vec<_>>());
        s.push('\n');
    }
    s.push_str(&format!(
        "Marginal log-Likelihood: {:.2}\n",
        r.log_marginal_likelihood
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("(Intercept)"), "Intercept");
        assert_eq!(slug("log(x + 10)"), "log_x_10");
        assert_eq!(slug("Precision for u"), "Precision_for_u");
        assert_eq!(slug("Predictor.07"), "Predictor.07");
        assert_eq!(slug("()"), "x");
    }

    #[test]
    fn numbers() {
        assert_eq!(format_number(2.16812), "2.168");
        assert_eq!(format_number(0.0976), "0.09760");
        assert_eq!(format_number(-0.00098123), "-0.0009812");
        assert_eq!(format_number(20.84), "20.84");
        assert_eq!(format_number(1234.6), "1235");
        assert_eq!(format_number(2.5e-6), "2.500e-6");
        assert_eq!(format_number(0.0), "0");
    }
}
