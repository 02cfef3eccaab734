use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

const AFTER_HELP: &str = "\
Any flag can also be set in the TOML file given to --config, using the flag
name with dashes turned into underscores (kn_mult = 4, fixed_effects = true,
method = [\"ivmi\", \"divmi\"]). Flags on the command line override the file.
Unknown keys are rejected.

Output files go to --out. A one-line JSON summary is printed on standard
output; progress goes to standard error (set RUST_LOG to change the level).
Failures exit nonzero with a JSON error object on standard error.";

#[derive(Debug, Parser)]
#[command(name = "twostage", version, about = "Simulation-based inference for two-stage estimators", after_help = AFTER_HELP)]
pub struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel replications [default: available cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo study of one simulation design.
    Mc(McArgs),
    /// Estimate, intervals and debiased estimate on one sample.
    Estimate(EstimateArgs),
    /// Peer-effect estimates on a school friendship network.
    Peer(PeerArgs),
    /// Write a synthetic school network as edge and attribute CSV files.
    NetworkGen(GenArgs),
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Design: A, B, C or D.
    #[arg(long)]
    pub dgp: Option<String>,
    /// Sample size [default: 250].
    #[arg(long)]
    pub n: Option<usize>,
    /// Design B instrument count multiplier, 2 or 4 [default: 2].
    #[arg(long)]
    pub kn_mult: Option<f64>,
    /// Replications [default: 1000].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Simulated draws per replication [default: 1000].
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Seed of every random stream [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Confidence level [default: 0.95].
    #[arg(long)]
    pub level: Option<f64>,
    /// Bias correction: mean, median or off [default: mean].
    #[arg(long)]
    pub debias: Option<String>,
    /// Output directory [default: twostage-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Draw one sample from a simulation design (A, B, C or D).
    #[arg(long)]
    pub dgp: Option<String>,
    /// Sample size for --dgp [default: 250].
    #[arg(long)]
    pub n: Option<usize>,
    /// Design B instrument count multiplier, 2 or 4 [default: 2].
    #[arg(long)]
    pub kn_mult: Option<f64>,
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model for --data: iv, poisson or copula [default: iv].
    #[arg(long)]
    pub model: Option<String>,
    /// Outcome column of an IV data file [default: y].
    #[arg(long)]
    pub outcome: Option<String>,
    /// Endogenous regressor columns of an IV data file [default: d].
    #[arg(long, value_delimiter = ',')]
    pub endog: Option<Vec<String>>,
    /// Exogenous regressor columns of an IV data file; they also serve as
    /// instruments.
    #[arg(long, value_delimiter = ',')]
    pub exog: Option<Vec<String>>,
    /// Simulated draws [default: 1000].
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Seed of every random stream [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Confidence level [default: 0.95].
    #[arg(long)]
    pub level: Option<f64>,
    /// Bias correction: mean, median or off [default: mean].
    #[arg(long)]
    pub debias: Option<String>,
    /// Directory for estimate.json; the report is printed either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PeerArgs {
    /// Edge list CSV (group_id, src, dst) [default: bundled synthetic network].
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Node attribute CSV (group_id, node_id, outcome, covariates).
    #[arg(long)]
    pub attrs: Option<PathBuf>,
    /// Outcome column of the attribute file [default: y].
    #[arg(long)]
    pub outcome: Option<String>,
    /// Highest extra network power in the many-instrument set [default: 9].
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Demean within groups instead of fitting an intercept.
    #[arg(long)]
    pub fixed_effects: bool,
    /// Methods: ols, civ, oiv, ivmi, divmi or all, comma separated [default: all].
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    /// Simulated draws for ivmi and divmi [default: 1000].
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Seed of the simulation [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Confidence level [default: 0.95].
    #[arg(long)]
    pub level: Option<f64>,
    /// Output directory [default: twostage-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// TOML file with network parameters; defaults give the bundled network.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Seed [default: the bundled network's].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: twostage-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
