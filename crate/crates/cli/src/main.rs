use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Joint generative search and recommendation laboratory.
#[derive(Debug, Parser)]
#[command(name = "genir", version, about)]
pub struct Cli {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed overriding the configuration and GENIR_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory receiving every output file and the run manifest.
    #[arg(short = 'o', long = "output-dir", global = true, default_value = ".")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset.
    Simulate(SimulateArgs),
    /// Train a retriever on a dataset directory.
    Train(TrainArgs),
    /// Write the top-K run of a trained model for the test queries of a task.
    Retrieve(RetrieveArgs),
    /// Score a run against qrels.
    Evaluate(EvaluateArgs),
    /// Popularity statistics of a dataset directory.
    Stats(StatsArgs),
    /// Run a hypothesis sweep.
    Experiment(ExperimentArgs),
    /// Compare a task-specific run with a joint run.
    Analyze(AnalyzeArgs),
    /// Export a 2-D projection of item embeddings.
    Project(ProjectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Sim1,
    Sim2,
    Sim3,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub kind: SimKind,
    /// SIM1 shuffle transpositions.
    #[arg(long)]
    pub swaps: Option<usize>,
    /// SIM2 share of an item's queries drawn from its cluster pool.
    #[arg(long = "query-match")]
    pub query_match: Option<f64>,
    /// SIM3 share of history pairs placed inside relevance sets.
    #[arg(long = "pairs-in-qrels")]
    pub pairs_in_qrels: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainKind {
    Search,
    Rec,
    Joint,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub kind: TrainKind,
    #[arg(long)]
    pub data: PathBuf,
    /// Share of recommendation training instances kept.
    #[arg(long = "sample-fraction")]
    pub sample_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Search,
    Rec,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub k: Option<usize>,
    /// Decode with diversified beam search.
    #[arg(long)]
    pub diverse: bool,
    /// Run tag written in the last column.
    #[arg(long, default_value = "genir")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Dataset directory supplying training popularity for head/torso
    /// buckets and the popularity baseline.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Run compared per instance with a paired t-test.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Sim1,
    Sim2,
    Sim3,
    Cap,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub kind: ExperimentArg,
    /// Comma-separated sweep levels (`inf` allowed for caps).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<String>>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Comma-separated SIM2 sample fractions.
    #[arg(long = "sample-fractions", value_delimiter = ',')]
    pub sample_fractions: Option<Vec<f64>>,
    /// Dataset directory for the cap ablation instead of SIM1 data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Target task of the cap ablation.
    #[arg(long, value_enum, default_value = "rec")]
    pub task: TaskArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Pop,
    Latent,
    Redundancy,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub kind: AnalysisKind,
    #[arg(long)]
    pub data: PathBuf,
    /// Task-specific run.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Joint run.
    #[arg(long)]
    pub joint: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
