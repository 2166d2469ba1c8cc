mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ProviderKind;

#[derive(Parser, Debug)]
#[command(name = "crosswalk", version, about = "Build and evaluate weakly labeled crosswalk image datasets")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "crosswalk.toml")]
    pub config: PathBuf,
    /// Working directory for artifacts; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Top-level seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Response cache directory for live providers.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Worker threads for provider requests and image work.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// More log output; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ThresholdArgs {
    #[arg(long, global = true)]
    pub threshold_max_span: Option<f64>,
    #[arg(long, global = true)]
    pub threshold_min_sites: Option<usize>,
    #[arg(long, global = true)]
    pub threshold_max_sites: Option<usize>,
    #[arg(long, global = true)]
    pub threshold_max_depth: Option<u32>,
    #[arg(long, global = true)]
    pub threshold_spacing: Option<f64>,
    #[arg(long, global = true)]
    pub threshold_snap_radius: Option<f64>,
    #[arg(long, global = true)]
    pub threshold_half_angle: Option<f64>,
    #[arg(long, global = true)]
    pub threshold_min_distance: Option<f64>,
    #[arg(long, global = true)]
    pub threshold_max_distance: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tile the configured regions and report the sub-regions worth harvesting.
    Plan,
    /// Collect sites, routes, panoramas and images; write an auto-labeled manifest.
    Harvest {
        /// Plan and count requests only; never contacts a live service.
        #[arg(long)]
        dry_run: bool,
    },
    /// Apply manual label corrections to the manifest.
    Annotate {
        #[arg(long)]
        overrides: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Region-disjoint train/val/test split with negative subsampling.
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the reference classifier on the training split.
    TrainBaseline {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write a prediction file for one split.
    Predict {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Score a prediction file against the manifest labels.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Crosswalk instance spans; enables the per-instance metric.
        #[arg(long)]
        spans: Option<PathBuf>,
        /// Count an instance as found with exactly half its frames.
        #[arg(long)]
        inclusive_majority: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Paired t-test between two per-run metric files.
    Compare { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                crosswalk_core::Error::Parse { .. } | crosswalk_core::Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
