use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wpcn_core::orchestrator::SchemeId;

#[derive(Debug, Parser)]
#[command(
    name = "wpcn",
    version,
    about = "Multi-UAV wireless-powered network trainer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one scheme and write metrics, checkpoints and resumable state.
    Train(TrainArgs),
    /// Continue an interrupted training run in place.
    Resume(ResumeArgs),
    /// Run deterministic evaluation episodes of a trained run.
    Eval(EvalArgs),
    /// Train and evaluate a benchmark scheme (phase division also searches its switch slot).
    Benchmark(BenchmarkArgs),
    /// Parameter sweeps over fresh training runs.
    Sweep(SweepArgs),
    /// Print one artifact of a run directory for external plotting.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Full-scale defaults (256-wide networks, 2000 episodes).
    Full,
    /// U=2, W=4, T=300, 200 episodes, small networks.
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON config; keys it omits keep the values of the profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Full)]
    pub profile: Profile,
    /// Overrides the training episode count of the config.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory; relative paths are resolved against $WPCN_OUT_ROOT when set.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing run directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = SchemeId::Mahdrl)]
    pub scheme: SchemeId,
    /// Switch slot for `phase_division`; defaults to T/2.
    #[arg(long)]
    pub tbar: Option<usize>,
    /// Stop (resumably) once this many episodes are done.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ResumeArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Expected config; the resume is rejected if it differs from the run's.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Full)]
    pub profile: Profile,
    /// Seed for a fresh RNG when the run has no saved RNG state.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub scheme: SchemeId,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(subcommand)]
    pub kind: SweepKind,
}

#[derive(Debug, Clone, Subcommand)]
pub enum SweepKind {
    /// MAHDRL over U with W = 2U, for every C_min.
    Scalability {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        uavs: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "100")]
        c_min: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        eval_episodes: usize,
    },
    /// MAHDRL over the status-report range d_cov, for every seed.
    Dcov {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_delimiter = ',', default_value = "5,20,80")]
        d_cov: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 5)]
        eval_episodes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Trajectory,
    Metrics,
    Config,
    Reports,
    Manifest,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportWhat,
    /// Destination file; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}
