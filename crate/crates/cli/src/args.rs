use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "inla", version, about = "Approximate Bayesian inference for latent Gaussian models")]
pub struct Cli {
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "INLA_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write the result directory.
    Fit(FitArgs),
    /// Print the summary tables of a result directory.
    Summary {
        /// Result directory or its result.json.
        result: PathBuf,
    },
    /// Predictive distribution of one observation, held out of the fit.
    Predict(PredictArgs),
    /// Metropolis–Hastings over conditioning fixed effects.
    Mcmc(McmcArgs),
    /// Operations on a two-column marginal file.
    Marginal {
        /// Two-column `x density` file.
        file: PathBuf,
        #[command(subcommand)]
        op: MarginalOp,
    },
    /// Write two-column plot files for rows of a result.
    Plotdata(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model spec (TOML).
    pub spec: PathBuf,
    /// CSV data; defaults to the spec's `data` entry.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Hyperparameter integration: grid, ccd, eb or auto.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Latent marginals: gaussian or laplace.
    #[arg(long)]
    pub latent: Option<String>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub grid_cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Result directory.
    #[arg(long, default_value = "inla-result")]
    pub out: PathBuf,
    /// Also write the prior precision at the hyperparameter mode as
    /// 1-based triplets.
    #[arg(long)]
    pub dump_precision: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// 1-based data row to predict.
    #[arg(long)]
    pub index: usize,
    /// Also draw this many predictive samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Initial count support for discrete families; widened as needed.
    #[arg(long, default_value_t = 100)]
    pub max_count: usize,
    /// Directory for the table, marginals and samples instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Defaults to a tenth of the iterations.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Random-walk step size; overrides the spec.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Latent rows to average over the chain, by name or 0-based index of
    /// the conditional model; overrides the spec.
    #[arg(long, value_delimiter = ',')]
    pub track: Vec<String>,
    /// Directory for chain.csv and the averaged marginals instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Result directory.
    pub result: PathBuf,
    /// Row names, or `all`.
    #[arg(required = true)]
    pub which: Vec<String>,
    #[arg(long, default_value = "plotdata")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Subcommand)]
pub enum MarginalOp {
    /// Density at points.
    Density {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        at: Vec<f64>,
    },
    /// Distribution function at quantiles.
    Cdf {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        at: Vec<f64>,
    },
    /// Quantile function at probabilities.
    Quantile {
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
    },
    /// Random deviates.
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Highest posterior density interval.
    Hpd {
        #[arg(long, default_value_t = 0.95)]
        p: f64,
    },
    /// Expected value of a function.
    Expect {
        #[arg(long, default_value = "identity")]
        fun: String,
    },
    Mode,
    /// Change of variables through a monotone function.
    Transform {
        #[arg(long)]
        fun: String,
    },
    /// Mean, sd, quantiles and mode.
    Summary,
    /// Resample the interpolated density.
    Smooth {
        #[arg(long, default_value_t = 301)]
        points: usize,
    },
}
