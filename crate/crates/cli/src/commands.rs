use std::io::Write;
use std::path::Path;
use std::time::Instant;

use inla_core::fit::{fit, FitOptions};
use inla_core::marginal::Marginal;
use inla_core::mcmc_hybrid::{bma_marginal, run_chain, ChainOptions, ConditionedModel, GaussianRandomWalk, StepOutcome};
use inla_core::model::{ComponentKind, LatentComponent, LatentGaussianModel};
use inla_core::prediction::{
    empirical_pmf, fitted_value_marginal, predictive_auto, predictive_by_sampling, total_variation, Link,
    PredictiveDistribution,
};
use serde::Serialize;

use crate::args::{FitArgs, MarginalOp, McmcArgs, ModelArgs, PlotArgs, PredictArgs};
use crate::data::DataTable;
use crate::error::{CliError, Context, Result};
use crate::report::{
    build_result, create_dir, read_conditionals, read_marginal, read_result, render_summary, result_dir, slug,
    write_curve, write_json, write_marginal, write_result, TIMINGS_FILE,
};
use crate::spec::{BuiltModel, ModelSpec};

fn io_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

pub struct Loaded {
    pub spec: ModelSpec,
    pub built: BuiltModel,
    pub options: FitOptions,
}

pub fn load(args: &ModelArgs) -> Result<Loaded> {
    let spec = ModelSpec::read(&args.spec)?;
    let data_path = args
        .data
        .clone()
        .or_else(|| spec.data_path(&args.spec))
        .ok_or_else(|| CliError::validation("no data file: pass --data or set 'data' in the spec"))?;
    let data = DataTable::read(&data_path)?;
    let built = spec.build(&data)?;
    let options = FitOptions {
        strategy: spec.strategy(args.strategy.as_deref(), args.grid_step, args.grid_cutoff)?,
        latent: spec.latent_strategy(args.latent.as_deref())?,
        ..Default::default()
    };
    Ok(Loaded { spec, built, options })
}

#[derive(Serialize)]
struct Timings {
    load_seconds: f64,
    fit_seconds: f64,
    write_seconds: f64,
}

pub fn run_fit(args: &FitArgs, stdout: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    let loaded = load(&args.model)?;
    let loaded_at = Instant::now();
    let out = fit(&loaded.built.model, &loaded.options).context("fit")?;
    let fitted_at = Instant::now();
    let bundle = build_result(&loaded.built, &out)?;
    write_result(&args.out, &bundle)?;
    if args.dump_precision {
        let model = &loaded.built.model;
        let theta = model.expand_theta(&out.theta.mode).context("precision dump")?;
        let q = model.assemble_joint_precision(&theta).context("precision dump")?;
        let path = args.out.join("precision.txt");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?);
        q.write_triplets(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
    }
    let done = Instant::now();
    write_json(
        &args.out.join(TIMINGS_FILE),
        &Timings {
            load_seconds: (loaded_at - start).as_secs_f64(),
            fit_seconds: (fitted_at - loaded_at).as_secs_f64(),
            write_seconds: (done - fitted_at).as_secs_f64(),
        },
    )?;
    stdout
        .write_all(render_summary(&bundle.result).as_bytes())
        .map_err(io_err)
}

pub fn run_summary(result: &Path, stdout: &mut dyn Write) -> Result<()> {
    let r = read_result(result)?;
    stdout.write_all(render_summary(&r).as_bytes()).map_err(io_err)
}

fn describe(label: &str, m: &Marginal) -> Result<String> {
    let s = m.summarize().context(label)?;
    Ok(format!(
        "# {label}: mean {} sd {} 0.025quant {} 0.5quant {} 0.975quant {}\n",
        s.mean, s.sd, s.quantiles[0], s.quantiles[2], s.quantiles[4]
    ))
}

pub fn run_predict(args: &PredictArgs, stdout: &mut dyn Write) -> Result<()> {
    let loaded = load(&args.model)?;
    let base = &loaded.built.model;
    if args.index == 0 || args.index > base.n_obs() {
        return Err(CliError::validation(format!(
            "--index must be between 1 and {}, got {}",
            base.n_obs(),
            args.index
        )));
    }
    let i = args.index - 1;
    let model = if base.observations()[i].missing {
        base.clone()
    } else {
        log::info!("row {} is observed; holding it out", args.index);
        base.with_missing(i).context("predict")?
    };
    let opts = FitOptions {
        latent_indices: Some(vec![i]),
        ..loaded.options.clone()
    };
    let out = fit(&model, &opts).context("fit")?;
    let fam = model.likelihood();
    let label = model.latent_label(i);
    let eta = out.latent_marginal(i).context("predict")?;
    let fitted = fitted_value_marginal(&out, i, Link::for_family(fam)).context("predict")?;
    let pred = predictive_auto(&fitted, fam, args.max_count).context("predictive distribution")?;
    let samples = match args.samples {
        Some(n) => Some(predictive_by_sampling(&fitted, fam, n, args.seed).context("predictive sampling")?),
        None => None,
    };

    let mut head = describe(&label, eta)?;
    head.push_str(&describe(&format!("fitted.{label}"), &fitted)?);
    head.push_str(&format!("# predictive: mean {} variance {}\n", pred.mean(), pred.variance()));
    if let (Some(s), PredictiveDistribution::Counts { masses }) = (&samples, &pred) {
        let tv = total_variation(&empirical_pmf(s, masses.len()), masses);
        head.push_str(&format!("# total variation between samples and quadrature: {tv}\n"));
    }
    let mut table = String::new();
    match &pred {
        PredictiveDistribution::Counts { masses } => {
            table.push_str("y probability\n");
            for (k, p) in masses.iter().enumerate() {
                table.push_str(&format!("{k} {p:e}\n"));
            }
        }
        PredictiveDistribution::Density(m) => {
            table.push_str("y density\n");
            for (x, d) in m.xs().iter().zip(m.ds()) {
                table.push_str(&format!("{x:e} {d:e}\n"));
            }
        }
    }
    let sample_text = samples.as_ref().map(|s| s.iter().map(|v| format!("{v}\n")).collect::<String>());

    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            let write = |name: &str, text: &str| {
                let p = dir.join(name);
                std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
            };
            write("predictive.txt", &format!("{head}{table}"))?;
            write_marginal(&dir.join(format!("{}.txt", slug(&label))), eta)?;
            write_marginal(&dir.join(format!("fitted.{}.txt", slug(&label))), &fitted)?;
            if let Some(t) = &sample_text {
                write("samples.txt", t)?;
            }
            stdout.write_all(head.as_bytes()).map_err(io_err)
        }
        None => {
            let mut text = head + &table;
            if let Some(t) = sample_text {
                text.push_str("# samples\n");
                text.push_str(&t);
            }
            stdout.write_all(text.as_bytes()).map_err(io_err)
        }
    }
}

/// The spec's model with some fixed effects moved into the offset.
pub struct ConditionedSpec {
    base: LatentGaussianModel,
    rest: Vec<LatentComponent>,
    /// Covariate and prior precision per conditioned effect.
    conditioned: Vec<(Vec<f64>, f64)>,
    pub names: Vec<String>,
}

impl ConditionedSpec {
    pub fn new(base: &LatentGaussianModel, names: &[String]) -> Result<Self> {
        if names.is_empty() {
            return Err(CliError::validation("mcmc needs at least one effect under 'condition'"));
        }
        let n = base.n_obs();
        let mut conditioned = Vec::new();
        for name in names {
            let c = base
                .components()
                .iter()
                .find(|c| &c.name == name)
                .ok_or_else(|| CliError::validation(format!("mcmc condition: no component named '{name}'")))?;
            let cov = match c.kind {
                ComponentKind::Intercept => vec![1.0; n],
                ComponentKind::FixedEffect => c.covariate.clone(),
                _ => {
                    return Err(CliError::validation(format!(
                        "mcmc condition: '{name}' is not a fixed effect"
                    )))
                }
            };
            let precision = c
                .prior_precision
                .unwrap_or(base.options().fixed_effect_prior_precision);
            conditioned.push((cov, precision));
        }
        let rest: Vec<LatentComponent> = base
            .components()
            .iter()
            .filter(|c| !names.contains(&c.name))
            .cloned()
            .collect();
        Ok(ConditionedSpec {
            base: base.clone(),
            rest,
            conditioned,
            names: names.to_vec(),
        })
    }
}

impl ConditionedModel for ConditionedSpec {
    fn dim(&self) -> usize {
        self.conditioned.len()
    }

    fn build(&self, zc: &[f64]) -> inla_core::Result<LatentGaussianModel> {
        let mut offsets = self.base.offsets().to_vec();
        for ((cov, _), z) in self.conditioned.iter().zip(zc) {
            for (o, c) in offsets.iter_mut().zip(cov) {
                *o += z * c;
            }
        }
        LatentGaussianModel::new(
            self.rest.clone(),
            self.base.likelihood(),
            self.base.observations().to_vec(),
            self.base.hyperpriors().to_vec(),
            *self.base.options(),
        )?
        .with_offsets(offsets)
    }

    fn log_prior(&self, zc: &[f64]) -> f64 {
        self.conditioned
            .iter()
            .zip(zc)
            .map(|((_, p), z)| {
                if *p > 0.0 {
                    0.5 * (p / (2.0 * std::f64::consts::PI)).ln() - 0.5 * p * z * z
                } else {
                    0.0
                }
            })
            .sum()
    }
}

fn resolve_tracked(model: &LatentGaussianModel, items: &[String]) -> Result<Vec<usize>> {
    items
        .iter()
        .map(|t| {
            if let Ok(i) = t.parse::<usize>() {
                return if i < model.latent_dim() {
                    Ok(i)
                } else {
                    Err(CliError::validation(format!(
                        "tracked index {i} outside 0..{}",
                        model.latent_dim()
                    )))
                };
            }
            (0..model.latent_dim())
                .find(|&i| model.latent_label(i) == *t)
                .ok_or_else(|| CliError::validation(format!("no latent row named '{t}' in the conditional model")))
        })
        .collect()
}

#[derive(Serialize)]
struct McmcSummary {
    conditioned: Vec<String>,
    iterations: usize,
    kept: usize,
    acceptance_rate: f64,
    failures: usize,
    posterior_mean: Vec<f64>,
    posterior_sd: Vec<f64>,
    tracked: Vec<String>,
    marginals: Vec<String>,
}

pub fn run_mcmc(args: &McmcArgs, stdout: &mut dyn Write) -> Result<()> {
    let loaded = load(&args.model)?;
    let mspec = loaded
        .spec
        .mcmc
        .clone()
        .ok_or_else(|| CliError::validation("model spec has no [mcmc] block naming the effects to condition on"))?;
    let cm = ConditionedSpec::new(&loaded.built.model, &mspec.condition)?;
    let init = mspec.init.clone().unwrap_or_else(|| vec![0.0; cm.dim()]);
    if init.len() != cm.dim() {
        return Err(CliError::validation(format!(
            "mcmc init has {} values for {} conditioned effects",
            init.len(),
            cm.dim()
        )));
    }
    let scale = args
        .scale
        .or(mspec.scale)
        .ok_or_else(|| CliError::validation("pass --scale or set 'scale' in the [mcmc] block"))?;
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(CliError::validation(format!("scale must be finite and nonnegative, got {scale}")));
    }
    let track_names = if args.track.is_empty() { &mspec.track } else { &args.track };
    let tracked = resolve_tracked(&cm.build(&init).context("conditional model")?, track_names)?;
    let labels: Vec<String> = {
        let m = cm.build(&init).context("conditional model")?;
        tracked.iter().map(|&i| m.latent_label(i)).collect()
    };
    let opts = ChainOptions {
        iterations: args.iters,
        burn_in: args.burn_in,
        thin: args.thin,
        seed: args.seed,
        tracked: tracked.clone(),
        fit: FitOptions {
            latent_indices: Some(tracked.clone()),
            ..loaded.options.clone()
        },
    };
    let kernel = GaussianRandomWalk::isotropic(cm.dim(), scale);
    let record = run_chain(&cm, &init, &kernel, &opts).context("mcmc")?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iteration".to_string()];
    header.extend(cm.names.iter().cloned());
    header.extend(["log_target".to_string(), "accepted".to_string()]);
    let csv_err = |e: csv::Error| CliError::io("<chain>", e.into());
    w.write_record(&header).map_err(csv_err)?;
    for row in &record.trace {
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(row.zc.iter().map(|z| z.to_string()));
        rec.push(row.log_target.to_string());
        rec.push(u8::from(row.outcome == StepOutcome::Accepted).to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let chain = w.into_inner().map_err(|e| CliError::io("<chain>", e.into_error()))?;

    let samples = record.samples();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..cm.dim()).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..cm.dim())
        .map(|j| (samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();

    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            let p = dir.join("chain.csv");
            std::fs::write(&p, &chain).map_err(|e| CliError::io(&p, e))?;
            let mut files = Vec::new();
            for (&j, label) in tracked.iter().zip(&labels) {
                let m = bma_marginal(&record, j).context("averaged marginal")?;
                let name = format!("bma.{}.txt", slug(label));
                write_marginal(&dir.join(&name), &m)?;
                files.push(name);
            }
            let summary = McmcSummary {
                conditioned: cm.names.clone(),
                iterations: args.iters,
                kept: record.kept.len(),
                acceptance_rate: record.acceptance_rate,
                failures: record.failures,
                posterior_mean: mean.clone(),
                posterior_sd: sd.clone(),
                tracked: labels.clone(),
                marginals: files,
            };
            write_json(&dir.join("mcmc.json"), &summary)?;
            let mut text = format!("acceptance rate {:.4}, {} kept states\n", record.acceptance_rate, record.kept.len());
            for ((name, m), s) in cm.names.iter().zip(&mean).zip(&sd) {
                text.push_str(&format!("{name}: mean {} sd {}\n", m, s));
            }
            for (&j, label) in tracked.iter().zip(&labels) {
                let m = bma_marginal(&record, j).context("averaged marginal")?;
                text.push_str(&describe(label, &m)?.trim_start_matches("# ").to_string());
            }
            stdout.write_all(text.as_bytes()).map_err(io_err)
        }
        None => {
            stdout.write_all(&chain).map_err(io_err)?;
            eprintln!("acceptance rate {:.4}, {} kept states", record.acceptance_rate, record.kept.len());
            Ok(())
        }
    }
}

/// Named scalar functions for `expect` and `transform`.
pub fn named_function(name: &str) -> Result<fn(f64) -> f64> {
    Ok(match name {
        "identity" => |x| x,
        "square" => |x| x * x,
        "exp" => f64::exp,
        "log" => f64::ln,
        "sqrt" => f64::sqrt,
        "inverse" => |x| 1.0 / x,
        "inverse-sqrt" => |x| 1.0 / x.sqrt(),
        "neg-half-exp" => |x| (-0.5 * x).exp(),
        other => {
            return Err(CliError::validation(format!(
                "unknown function '{other}' (expected identity, square, exp, log, sqrt, inverse, inverse-sqrt or neg-half-exp)"
            )))
        }
    })
}

fn two_column(m: &Marginal) -> String {
    m.xs().iter().zip(m.ds()).map(|(x, d)| format!("{x:e} {d:e}\n")).collect()
}

pub fn run_marginal(file: &Path, op: &MarginalOp, stdout: &mut dyn Write) -> Result<()> {
    let m = read_marginal(file)?;
    let text = match op {
        MarginalOp::Density { at } => at
            .iter()
            .zip(m.density_at(at))
            .map(|(x, d)| format!("{x} {d}\n"))
            .collect(),
        MarginalOp::Cdf { at } => at.iter().zip(m.cdf_at(at)).map(|(x, p)| format!("{x} {p}\n")).collect(),
        MarginalOp::Quantile { p } => {
            let q = m.quantile_at(p).context("quantile")?;
            p.iter().zip(q).map(|(p, q)| format!("{p} {q}\n")).collect()
        }
        MarginalOp::Sample { n, seed } => m.sample(*n, *seed).iter().map(|v| format!("{v}\n")).collect(),
        MarginalOp::Hpd { p } => {
            let (lo, hi) = m.hpd_interval(*p).context("hpd")?;
            format!("{lo} {hi}\n")
        }
        MarginalOp::Expect { fun } => format!("{}\n", m.expect(named_function(fun)?)),
        MarginalOp::Mode => format!("{}\n", m.mode()),
        MarginalOp::Transform { fun } => two_column(&m.transform(named_function(fun)?).context("transform")?),
        MarginalOp::Summary => {
            let s = m.summarize().context("summary")?;
            format!(
                "mean {}\nsd {}\n0.025quant {}\n0.25quant {}\n0.5quant {}\n0.75quant {}\n0.975quant {}\nmode {}\n",
                s.mean, s.sd, s.quantiles[0], s.quantiles[1], s.quantiles[2], s.quantiles[3], s.quantiles[4], s.mode
            )
        }
        MarginalOp::Smooth { points } => two_column(&m.smooth(*points).context("smooth")?),
    };
    stdout.write_all(text.as_bytes()).map_err(io_err)
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Writes the stored marginal of each requested row and, for latent rows,
/// the conditional curve at each support point: unweighted on its own
/// table, and weighted on the mixture's grid so the weighted curves sum
/// to the mixture.
pub fn run_plotdata(args: &PlotArgs, stdout: &mut dyn Write) -> Result<()> {
    let dir = result_dir(&args.result);
    let result = read_result(&args.result)?;
    let conditionals = read_conditionals(&dir)?;
    let names: Vec<String> = if args.which.iter().any(|w| w == "all") {
        result.rows().map(|r| r.name.clone()).collect()
    } else {
        args.which.clone()
    };
    create_dir(&args.out)?;
    let mut written = Vec::new();
    for name in &names {
        let row = result
            .row(name)
            .ok_or_else(|| CliError::validation(format!("no row named '{name}' in the result")))?;
        let mix = read_marginal(&dir.join(&row.marginal))?;
        let base = Path::new(&row.marginal)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| slug(name));
        let path = args.out.join(format!("{base}.txt"));
        write_marginal(&path, &mix)?;
        written.push(path);

        // fitted-value rows share their predictor's name after the prefix
        if name.starts_with("fitted.") {
            continue;
        }
        let Some(p) = conditionals.names.iter().position(|n| n == name) else {
            continue;
        };
        let parts: Vec<(Marginal, f64)> = conditionals
            .support
            .iter()
            .map(|s| Ok((s.tables[p].to_marginal()?, s.weight)))
            .collect::<Result<_>>()?;
        let grid = mix.xs();
        let weighted: Vec<Vec<f64>> = parts
            .iter()
            .map(|(m, w)| m.density_at(grid).into_iter().map(|d| w * d).collect())
            .collect();
        let total: Vec<f64> = (0..grid.len()).map(|j| weighted.iter().map(|c| c[j]).sum()).collect();
        let z = trapezoid(grid, &total);
        let width = parts.len().to_string().len().max(2);
        for (k, ((m, _), wc)) in parts.iter().zip(&weighted).enumerate() {
            let tag = format!("theta{:0width$}", k + 1);
            let path = args.out.join(format!("{base}.{tag}.txt"));
            write_marginal(&path, m)?;
            written.push(path);
            let ds: Vec<f64> = wc.iter().map(|d| d / z).collect();
            let path = args.out.join(format!("{base}.{tag}.weighted.txt"));
            write_curve(&path, grid, &ds)?;
            written.push(path);
        }
    }
    let text: String = written.iter().map(|p| format!("{}\n", p.display())).collect();
    stdout.write_all(text.as_bytes()).map_err(io_err)
}

