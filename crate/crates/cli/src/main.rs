mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "segbench", version, about = "Volumetric segmentation benchmarking toolkit")]
pub struct Cli {
    /// Base seed for every stochastic step
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output format for tabular results
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, env = "SEGBENCH_JOBS")]
    pub jobs: Option<usize>,
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predicted masks against ground truth, one row per case
    Evaluate(EvaluateArgs),
    /// Build a leaderboard from per-team metrics or a published summary
    Rank(RankArgs),
    /// Scan quality (snr, cr, het) for paired scans and labels
    Quality(QualityArgs),
    /// Intensity preprocessing and augmentation
    #[command(subcommand)]
    Preprocess(PreprocessCommand),
    /// Chain mask post-processing operators
    Postprocess(PostprocessArgs),
    /// Localize, crop, segment and pad every scan in a directory
    Pipeline(PipelineArgs),
    /// ROI placement and patch-size sweeps
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Generate a synthetic phantom cohort
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predictions (`<id>_label.nrrd` or `<id>.nrrd`)
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground truth (`<id>_label.nrrd`)
    #[arg(long)]
    pub truth: PathBuf,
    /// Output file (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// symmetric or directed
    #[arg(long)]
    pub hd_mode: Option<String>,
    /// Axis for the diameter measure (x, y or z)
    #[arg(long)]
    pub diameter_axis: Option<String>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).multiple(false).args(["metrics", "summary"]))]
pub struct RankArgs {
    /// Per-team case metrics CSV; the team id is the file stem
    #[arg(long, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
    /// Published summary table (team, <metric>_mean, <metric>_std, ...)
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Team attribute table with a `team` column
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Quality CSV (scan_id, snr, ...) for the snr/dice correlation
    #[arg(long)]
    pub quality: Option<PathBuf>,
    /// Output path stem; writes `<out>.csv` and `<out>.json`
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hd_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    /// Directory of `<id>.nrrd` scans with `<id>_label.nrrd` labels
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Background exclusion margin in voxels
    #[arg(long)]
    pub margin: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum PreprocessCommand {
    /// Apply volume operators in order (normalize, clahe, downsample)
    Apply(ApplyArgs),
    /// Write augmented variants of one scan/label pair
    Augment(AugmentArgs),
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Operator spec such as `clahe:tiles_x=8,tiles_y=8,clip=2`
    #[arg(long = "op", required = true)]
    pub ops: Vec<String>,
    /// raw or gzip
    #[arg(long, default_value = "gzip")]
    pub encoding: String,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub label: PathBuf,
    /// TOML file of `[[augmentation]]` entries
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// offline or online-stream
    #[arg(long, default_value = "offline")]
    pub mode: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "gzip")]
    pub encoding: String,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Operator spec such as `close:radius=2` (applied in the given order)
    #[arg(long = "op", required = true)]
    pub ops: Vec<String>,
    #[arg(long, default_value = "gzip")]
    pub encoding: String,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Directory of `<id>.nrrd` scans (labels `<id>_label.nrrd` optional)
    #[arg(long)]
    pub data: PathBuf,
    /// Where predicted masks are written as `<id>.nrrd`
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Per-case summary (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub localizer: Option<String>,
    #[arg(long)]
    pub segmenter: Option<String>,
    /// ROI size as XxYxZ
    #[arg(long)]
    pub roi: Option<String>,
    #[arg(long, default_value = "gzip")]
    pub encoding: String,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Dice against ROI offset from the label centroid
    Offset(OffsetArgs),
    /// Background share and containment against in-plane patch size
    PatchSize(PatchSizeArgs),
}

#[derive(Debug, Args)]
pub struct OffsetArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub label: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub segmenter: Option<String>,
    #[arg(long)]
    pub roi: Option<String>,
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated percentages of the largest lossless shift
    #[arg(long, value_delimiter = ',')]
    pub offsets: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PatchSizeArgs {
    #[arg(long)]
    pub label: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated in-plane sizes such as `400x400,320x240`
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<String>>,
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    /// Grid size as XxYxZ
    #[arg(long)]
    pub dims: Option<String>,
    /// Isotropic voxel spacing in mm
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub encoding: Option<String>,
}

/// A problem with the invocation itself rather than with the data.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
