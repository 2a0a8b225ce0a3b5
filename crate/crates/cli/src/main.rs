//! `plugtrace` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

mod commands;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plugtrace::geoloc::ScoringMode;
use plugtrace::pipeline::Comparator;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "plugtrace", version, about = "Indoor geolocation evidence from electrical sockets", propagate_version = true)]
pub struct Cli {
    /// Machine output format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker thread cap.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge metadata, reverse-geocode and lay out per-country directories.
    Ingest(IngestArgs),
    /// Detect and classify sockets in a directory of images.
    Run(RunArgs),
    /// Score findings against known image countries over a threshold sweep.
    Evaluate(EvaluateArgs),
    /// Detection metrics (precision, recall, mAP) from box CSVs.
    Detmetrics(DetmetricsArgs),
    /// Classification metrics from label CSVs.
    Clfmetrics(ClfmetricsArgs),
    /// Stratified k-fold assignment.
    Folds(FoldsArgs),
    /// Write each image plus one seeded augmented copy.
    Augment(AugmentArgs),
    /// Run the case service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Metadata CSVs (image tables and hotel tables).
    #[arg(long, required = true, num_args = 1..)]
    pub meta: Vec<PathBuf>,
    /// Country boundary GeoJSON, or `bundled`.
    #[arg(long)]
    pub boundaries: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Source image root; without it only the manifest is written.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub include_travel: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub images: PathBuf,
    /// Detector backend config (JSON).
    #[arg(long)]
    pub detector: PathBuf,
    /// Classifier backend config (JSON).
    #[arg(long)]
    pub classifier: PathBuf,
    /// Pipeline config (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Audit log path; defaults to the output path with `.audit.jsonl`.
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Findings JSON written by `run` (or a bare array of findings).
    #[arg(long)]
    pub findings: PathBuf,
    /// CSV with `image_id` and `country` columns.
    #[arg(long)]
    pub truth: PathBuf,
    /// Knowledge base JSON; the bundled v1 KB when omitted.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.8,0.9")]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value = "inclusive")]
    pub comparator: Comparator,
    #[arg(long, default_value = "per-detection")]
    pub mode: ScoringMode,
    /// Also write the chart series (`threshold,accuracy,total`) here.
    #[arg(long)]
    pub chart: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetmetricsArgs {
    /// Prediction CSV: image_id,class_id,x_min,y_min,x_max,y_max,confidence.
    #[arg(long)]
    pub preds: PathBuf,
    /// Ground-truth CSV, same columns without confidence.
    #[arg(long)]
    pub gts: PathBuf,
    /// Confidence floor for precision and recall.
    #[arg(long, default_value_t = 0.0)]
    pub conf_min: f64,
}

#[derive(Debug, Args)]
pub struct ClfmetricsArgs {
    /// CSV with `item_id` and `label` columns.
    #[arg(long)]
    pub preds: PathBuf,
    /// CSV with `item_id` and `label` columns.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct FoldsArgs {
    /// CSV with `item_id` and `label` columns.
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the assignment here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Augmentation spec JSON; default ranges when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config JSON; flags and environment override its fields.
    #[arg(long, env = "PLUGTRACE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "PLUGTRACE_BIND")]
    pub bind: Option<SocketAddr>,
    #[arg(long, env = "PLUGTRACE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, env = "PLUGTRACE_DETECTOR")]
    pub detector: Option<PathBuf>,
    #[arg(long, env = "PLUGTRACE_CLASSIFIER")]
    pub classifier: Option<PathBuf>,
    #[arg(long, env = "PLUGTRACE_KB", value_delimiter = ',')]
    pub kb: Vec<PathBuf>,
    #[arg(long, env = "PLUGTRACE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[arg(long, env = "PLUGTRACE_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, env = "PLUGTRACE_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Validation(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
