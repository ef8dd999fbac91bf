use std::path::PathBuf;

use blockshap::{Method, StructureConfig};
use clap::{Args, Parser, Subcommand};

use crate::Failure;

/// Block-diagonal covariance estimation and exact Shapley effects.
#[derive(Debug, Parser)]
#[command(name = "blockshap", version)]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true, env = "BLOCKSHAP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the block structure and the block covariance of a data set.
    Estimate(EstimateArgs),
    /// Compute Shapley effects, fitted from data or from a known model.
    Shapley(ShapleyArgs),
    /// Run a Monte Carlo harness.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Write a synthetic block model and a sample drawn from it.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct StructureArgs {
    /// Structure estimator: tot, cgrid, threshold, sgrid or fixed.
    #[arg(long)]
    pub method: Option<Method>,
    /// Exponent in the penalty 1/(p n^delta) and the fixed threshold n^(-delta/2).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Largest admissible block (required by sgrid).
    #[arg(long)]
    pub max_block: Option<usize>,
}

impl StructureArgs {
    /// Applies the flags on top of `base`.
    pub fn resolve(&self, base: StructureConfig) -> Result<StructureConfig, Failure> {
        let mut cfg = base;
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(m) = self.max_block {
            cfg.max_block = Some(m);
        }
        if cfg.method == Method::Sgrid && cfg.max_block.is_none() {
            return Err(Failure::Usage("--method sgrid requires --max-block".into()));
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Data CSV: rows are observations, columns are variables.
    pub input: PathBuf,
    #[command(flatten)]
    pub structure: StructureArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShapleyArgs {
    /// Input matrix CSV (fitted mode).
    #[arg(long, conflicts_with = "known")]
    pub x: Option<PathBuf>,
    /// Output vector CSV (fitted mode).
    #[arg(long, conflicts_with = "known")]
    pub y: Option<PathBuf>,
    /// Use a known covariance and coefficient vector instead of data.
    #[arg(long)]
    pub known: bool,
    /// Covariance CSV (known mode).
    #[arg(long, requires = "known")]
    pub sigma: Option<PathBuf>,
    /// Coefficient CSV (known mode).
    #[arg(long, requires = "known")]
    pub beta: Option<PathBuf>,
    /// Partition file (known mode); defaults to the finest block pattern of the covariance.
    #[arg(long, requires = "known")]
    pub partition: Option<PathBuf>,
    /// Intercept (known mode).
    #[arg(long, default_value_t = 0.0, requires = "known", allow_hyphen_values = true)]
    pub beta0: f64,
    #[command(flatten)]
    pub structure: StructureArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Frobenius errors of S and S_B̂ against the group count.
    Fig1(ExperimentArgs),
    /// Plug-in Shapley errors against the group count.
    Fig2(ExperimentArgs),
    /// Exact structure recovery rates.
    Recovery(ExperimentArgs),
    /// Monte Carlo covariance of the block estimator beside its Cramér-Rao bound.
    Crb(CrbArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    pub seed: u64,
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Group counts K.
    #[arg(long = "k", value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    /// Samples per dimension N (n = N p).
    #[arg(long = "n-per-dim", value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    /// Replications per cell.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output noise standard deviation.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[command(flatten)]
    pub structure: StructureArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrbArgs {
    /// Master seed.
    #[arg(long)]
    pub seed: u64,
    /// JSON configuration with sigma, partition, n and replications.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample size per replication.
    #[arg(long)]
    pub n: Option<usize>,
    /// Replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("size").required(true).args(["k", "p"]))]
pub struct GenerateArgs {
    /// Number of groups.
    #[arg(long)]
    pub k: Option<usize>,
    /// Total dimension.
    #[arg(long)]
    pub p: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: u64,
    /// Samples per dimension (n = N p); ignored when --n is given.
    #[arg(long, default_value_t = 10)]
    pub n_per_dim: usize,
    /// Sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Intercept of the output.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub beta0: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
