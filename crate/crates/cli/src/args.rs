use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cloudopf", version, about = "Scenario-cloud chance-constrained AC-OPF and its multi-scenario benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classical AC-OPF at one loading level.
    SolveOpf(CaseArgs),
    /// Chance-constrained AC-OPF over a Gaussian scenario cloud.
    SolveCloud(CloudArgs),
    /// One AC-OPF per sampled demand.
    SolveMs(MsArgs),
    /// Replay a cloud solution on fresh samples through the full power flow.
    Validate(ValidateArgs),
    /// Cloud policies against the multi-scenario ground truth.
    Compare(CompareArgs),
    /// Comparison over a loading x sigma x epsilon x policy grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    A,
    B,
    C,
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// MATPOWER `.m` file or canonical JSON case; the built-in 30-bus case when absent.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Factor applied to every active and reactive demand.
    #[arg(long, default_value_t = 1.0)]
    pub loading: f64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct UncertaintyArgs {
    /// Standard deviation of each uncertain demand as a fraction of its mean.
    #[arg(long, default_value_t = 0.05)]
    pub sigma_ratio: f64,
    /// Comma-separated bus ids with uncertain demand; every loaded bus when absent.
    #[arg(long, value_delimiter = ',')]
    pub buses: Option<Vec<u32>>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Deviation samples as CSV (header of bus ids, p.u. rows) instead of drawing them.
    #[arg(long)]
    pub samples_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChanceArgs {
    /// Violation probability of every constraint class.
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long)]
    pub eps_p: Option<f64>,
    #[arg(long)]
    pub eps_q: Option<f64>,
    #[arg(long)]
    pub eps_v: Option<f64>,
    /// Violation probability of the branch-flow limits.
    #[arg(long)]
    pub eps_line: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = Policy::A)]
    pub policy: Policy,
    /// Participation factors of policy a (`generator,alpha` CSV).
    #[arg(long)]
    pub alpha_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CloudArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub uncertainty: UncertaintyArgs,
    #[command(flatten)]
    pub chance: ChanceArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Fit the cloud to this many drawn samples instead of using the nominal Gaussian.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MsArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub uncertainty: UncertaintyArgs,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Also write the deviations that were solved, as CSV.
    #[arg(long)]
    pub export_samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub uncertainty: UncertaintyArgs,
    #[command(flatten)]
    pub chance: ChanceArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Samples the cloud is fitted to.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Fresh samples replayed through the power flow.
    #[arg(long, default_value_t = 5000)]
    pub holdout: usize,
    /// Seed of the fresh samples; `seed + 1` when absent.
    #[arg(long)]
    pub holdout_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub uncertainty: UncertaintyArgs,
    #[command(flatten)]
    pub chance: ChanceArgs,
    /// Policies to compare; repeat the flag for several. All three when absent.
    #[arg(long, value_enum)]
    pub policy: Vec<Policy>,
    #[arg(long)]
    pub alpha_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Zero-based generator pair of the scatter dataset, e.g. `1,3`; the two
    /// most variable non-slack units when absent.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub pair: Option<Vec<usize>>,
    /// Write the scatter dataset to this CSV file.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub case: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.95")]
    pub loadings: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.03,0.05")]
    pub sigma_ratios: Vec<f64>,
    /// Uniform violation probabilities of the grid.
    #[arg(long = "eps", value_delimiter = ',', default_value = "0.01")]
    pub eps: Vec<f64>,
    #[arg(long)]
    pub eps_p: Option<f64>,
    #[arg(long)]
    pub eps_q: Option<f64>,
    #[arg(long)]
    pub eps_v: Option<f64>,
    #[arg(long)]
    pub eps_line: Option<f64>,
    #[arg(long = "policy", value_enum, value_delimiter = ',', default_value = "a,b,c")]
    pub policies: Vec<Policy>,
    #[arg(long)]
    pub alpha_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub buses: Option<Vec<u32>>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for cached ground-truth runs.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}
