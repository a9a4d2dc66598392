mod commands;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::UsageError;

/// Rotated-box geometry, suppression, tiling, evaluation and a synthetic
/// two-stage detection demo.
#[derive(Debug, Parser)]
#[command(name = "rroi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pairwise rotated IoU between the boxes of two annotation files, as CSV.
    Iou(IouArgs),
    /// Rotated NMS over a detection file.
    Nms(NmsArgs),
    /// Tile offsets for a large image, with annotations transferred per tile.
    Tile(TileArgs),
    /// Average precision of detection files against annotation files.
    Eval(EvalArgs),
    /// Train and evaluate the two-stage learner on synthetic scenes.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct IouArgs {
    /// Annotation file giving the matrix rows.
    pub a: PathBuf,
    /// Annotation file giving the matrix columns.
    pub b: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Detection file (`category score x1 y1 ... x4 y4` per line).
    pub detections: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou_thresh: f64,
    /// Drop detections scoring below this before suppression.
    #[arg(long, default_value_t = 0.0)]
    pub score_thresh: f64,
    /// Let detections of different categories suppress each other.
    #[arg(long)]
    pub class_agnostic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Annotation file of the full image.
    pub annotations: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    #[arg(long, default_value_t = 824)]
    pub stride: usize,
    /// Write one annotation file per tile into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth annotation file, or a directory of them.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detection file, or a directory with files named like the ground truth.
    #[arg(long)]
    pub det: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou_thresh: f64,
    /// VOC-2007 style 11-point interpolation instead of all points.
    #[arg(long)]
    pub eleven_point: bool,
    /// Also write eval_report.json and eval_summary.txt here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// JSON pipeline configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the manifest, detections, report and models.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Final rotated NMS threshold.
    #[arg(long)]
    pub iou_thresh: Option<f64>,
    #[arg(long)]
    pub score_thresh: Option<f64>,
    /// Suppress duplicate rotated RoIs before the second stage.
    #[arg(long, overrides_with = "no_rroi_nms")]
    pub rroi_nms: bool,
    #[arg(long, overrides_with = "rroi_nms")]
    pub no_rroi_nms: bool,
    #[arg(long)]
    pub context_long: Option<f64>,
    #[arg(long)]
    pub context_short: Option<f64>,
    /// Use exact regression targets instead of trained learners.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub train_scenes: Option<usize>,
    #[arg(long)]
    pub test_scenes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::Iou(a) => commands::iou(a, &mut out),
        Command::Nms(a) => commands::nms(a, &mut out),
        Command::Tile(a) => commands::tile(a, &mut out),
        Command::Eval(a) => commands::eval(a, &mut out),
        Command::Demo(a) => commands::demo(a, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.chain().any(|c| c.is::<UsageError>()) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
