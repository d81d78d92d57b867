use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "r2sl", version, about = "Regional latent-state QoS prediction pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a QoS matrix and region tables into canonical records.
    Prepare(PrepareArgs),
    /// Split a record file into train / test / validation sets.
    Split(SplitArgs),
    /// Sample records from a known regional latent-state model.
    Synth(SynthArgs),
    /// Fit the regional latent-state model.
    FitLatent(FitLatentArgs),
    /// Train the gated expert network, once per seed.
    Train(TrainArgs),
    /// Score trained networks on a record file.
    Evaluate(EvaluateArgs),
    /// Run a methods x densities x seeds grid from a TOML file.
    Experiment(ExperimentArgs),
    /// Report which experts the gate activates.
    GateStats(GateStatsArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub user_meta: PathBuf,
    #[arg(long)]
    pub service_meta: PathBuf,
    /// Output directory for records.csv and meta.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Values above the cap are dropped.
    #[arg(long, default_value_t = 20.0)]
    pub cap: f64,
    /// Cell value marking a missing observation.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub sentinel: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Share of all records used for training.
    #[arg(long)]
    pub density: f64,
    /// Train, test and validation fractions of the sampled pool.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.75,0.2")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for train.csv, test.csv, valid.csv and split.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 50_000)]
    pub n_records: usize,
    #[arg(long, default_value_t = 40)]
    pub n_users: usize,
    #[arg(long, default_value_t = 60)]
    pub n_services: usize,
    /// User cities, user ASes, service cities, service ASes.
    #[arg(long, value_delimiter = ',', default_value = "4,8,5,10")]
    pub regions: Vec<usize>,
    /// Probability mass of each region's dominant state.
    #[arg(long, default_value_t = 0.8)]
    pub peak: f64,
    /// Per-state user scale factors (length m; geometric when omitted).
    #[arg(long, value_delimiter = ',')]
    pub c_user: Option<Vec<f64>>,
    /// Per-state service scale factors (length m; geometric when omitted).
    #[arg(long, value_delimiter = ',')]
    pub c_service: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for records.csv, meta.json and truth.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitLatentArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// TOML file with latent settings; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset metadata; region counts come from the records when omitted.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Validation records for early stopping.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub latent: PathBuf,
    /// Dataset metadata; id counts come from the records when omitted.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// TOML file with network settings; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// s_huber, huber, mae or mse.
    #[arg(long, default_value = "s_huber")]
    pub loss: String,
    #[arg(long, default_value_t = 0.5)]
    pub varsigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub psi: f64,
    /// One network is trained per seed; overrides the config's seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory; networks are written as model-seed<seed>.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained network; repeat to aggregate several runs.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value = "r2sl")]
    pub method: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Metric CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct GateStatsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub latent: PathBuf,
    /// Single query: user id (needs --service and --meta).
    #[arg(long, requires_all = ["service", "meta"], conflicts_with = "records")]
    pub user: Option<usize>,
    #[arg(long, requires = "user")]
    pub service: Option<usize>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Aggregate over every record in this file.
    #[arg(long, required_unless_present = "user")]
    pub records: Option<PathBuf>,
    /// Per-expert CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-feature-group share CSV.
    #[arg(long)]
    pub groups_out: Option<PathBuf>,
}
