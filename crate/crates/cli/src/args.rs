use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use crw::calibrate::EffectMode;

use crate::config::RankMethodChoice;

#[derive(Parser, Debug)]
#[command(name = "crw", author, version, about = "Covariate rank weighting for multiple testing", long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate weights from a dataset and run weighted BH/Bonferroni over an alpha grid
    Adjust(DataArgs),
    /// Run a dilution or power simulation study from a JSON spec
    Simulate(SimulateArgs),
    /// Rank probabilities for a null and an alternative test
    Rankprob(RankprobArgs),
    /// CRW weights for a given model
    Weights(WeightsArgs),
    /// Null proportion, effect sizes and covariate regression for a dataset
    Estimate(DataArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Continuous,
    Binary,
}

impl From<ModeArg> for EffectMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Continuous => EffectMode::Continuous,
            ModeArg::Binary => EffectMode::Binary,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// JSON run configuration; flags override its values
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Input CSV with a header row
    #[arg(short, long)]
    pub input: Option<PathBuf>,

    /// Column holding p-values
    #[arg(long)]
    pub pvalue_column: Option<String>,

    /// Column holding the standardized covariate
    #[arg(long)]
    pub covariate_column: Option<String>,

    /// Column holding test identifiers
    #[arg(long)]
    pub id_column: Option<String>,

    #[arg(short, long)]
    pub alpha: Option<f64>,

    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,

    /// Storey tuning parameter
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Rank-probability method
    #[arg(short, long, value_enum)]
    pub method: Option<RankMethodChoice>,

    #[arg(long)]
    pub grid_size: Option<usize>,

    /// Monte-Carlo draws
    #[arg(long)]
    pub draws: Option<usize>,

    #[arg(short, long)]
    pub seed: Option<u64>,

    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// JSON simulation spec
    #[arg(short, long)]
    pub config: PathBuf,

    #[arg(short, long)]
    pub seed: Option<u64>,

    #[arg(short, long)]
    pub alpha: Option<f64>,

    #[arg(long)]
    pub replicates: Option<usize>,

    /// Comma-separated methods: crw, crw-oracle, bh, rdw, external-weights
    #[arg(short, long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,

    #[arg(short, long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Number of null tests
    #[arg(long)]
    pub m0: usize,

    /// Number of alternative tests
    #[arg(long)]
    pub m1: usize,

    /// Covariate effect of the alternatives
    #[arg(long)]
    pub tau: f64,

    #[arg(short, long, value_enum, default_value = "auto")]
    pub method: RankMethodChoice,

    #[arg(long, default_value_t = 512)]
    pub grid_size: usize,

    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,

    #[arg(short, long, default_value_t = 0)]
    pub seed: u64,

    /// Write into this directory instead of standard output
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RankprobArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Mean alternative test effect E(ε | ε > 0), or the fixed effect in binary mode
    #[arg(long)]
    pub effect: f64,

    #[arg(short, long, default_value_t = 0.05)]
    pub alpha: f64,

    #[arg(long, value_enum, default_value = "continuous")]
    pub mode: ModeArg,
}
