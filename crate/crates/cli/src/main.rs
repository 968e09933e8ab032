//! Command-line front end.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "spadsplat", version, about = "Gaussian splatting from single-photon binary frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a manifest of ground-truth images into binary frames.
    Simulate(SimulateArgs),
    /// Stage 1: fit geometry and gray radiance to binary frames.
    Reconstruct(ReconstructArgs),
    /// Stage 2: fit color and a blur trajectory to the reference image.
    Colorize(ColorizeArgs),
    /// Render a checkpoint at manifest views or a given pose.
    Render(RenderArgs),
    /// Compare a checkpoint against the manifest's ground truth.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against finite differences on a random scene.
    Gradcheck(GradcheckArgs),
    /// Write the bundled synthetic scene as a ground-truth manifest.
    MakeToy(MakeToyArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Manifest whose views carry `ground_truth` or `ground_truth_color` images.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for frames and the new manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Photons per exposure for unit intensity.
    #[arg(long, conflicts_with = "target_rate")]
    pub gain: Option<f64>,
    /// Choose the gain so the mean detection probability over all views is this value.
    #[arg(long)]
    pub target_rate: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub frames_per_view: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of pixels that never fire.
    #[arg(long, default_value_t = 0.0)]
    pub dead_pixels: f64,
    /// Expected dark counts per pixel and exposure.
    #[arg(long, default_value_t = 0.0)]
    pub dark_count: f64,
}

/// Training configuration. Flags override `--config`; `--set` overrides both
/// and reaches every field by its dotted TOML path (for example
/// `--set lr.opacity=0.02`).
#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// TOML file with any subset of the training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Total stage-1 iterations. Without `--config`, iteration milestones are
    /// scaled with it.
    #[arg(long)]
    pub total_iters: Option<u64>,
    #[arg(long)]
    pub smooth_start_iter: Option<u64>,
    #[arg(long)]
    pub sigma_smooth: Option<f64>,
    #[arg(long)]
    pub num_perturbed: Option<usize>,
    #[arg(long)]
    pub smooth_weight: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub m_blur: Option<usize>,
    #[arg(long)]
    pub stage2_iters: Option<u64>,
    #[arg(long)]
    pub sh_degree: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_opacity: Option<f64>,
    #[arg(long)]
    pub lr_position: Option<f64>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    pub lr_rotation: Option<f64>,
    #[arg(long)]
    pub lr_opacity: Option<f64>,
    #[arg(long)]
    pub lr_sh_gray: Option<f64>,
    #[arg(long)]
    pub lr_sh_color: Option<f64>,
    #[arg(long)]
    pub lr_trajectory: Option<f64>,
    #[arg(long)]
    pub densify_interval: Option<u64>,
    #[arg(long)]
    pub densify_grad_threshold: Option<f64>,
    #[arg(long)]
    pub max_gaussians: Option<usize>,
    #[arg(long)]
    pub prune_opacity: Option<f64>,
    /// Train on non-overlapping averages of this many frames with an L1 loss
    /// instead of single frames with the photon loss.
    #[arg(long, value_name = "FRAMES")]
    pub baseline_averaging: Option<usize>,
    /// Keep the blur knots at identity during colorization.
    #[arg(long)]
    pub pin_knots: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a stage-1 checkpoint; its configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many iterations in total (the checkpoint can be resumed).
    #[arg(long)]
    pub stop_at: Option<u64>,
    /// Line-delimited training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print a progress line every this many iterations.
    #[arg(long, default_value_t = 500)]
    pub progress_every: u64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct ColorizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest with a `[reference]` entry.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// gray, color, photon_prob or depth.
    #[arg(long, default_value = "gray")]
    pub mode: String,
    /// Render every view of this manifest.
    #[arg(long, required_unless_present = "pose")]
    pub manifest: Option<PathBuf>,
    /// World-to-camera pose `qw,qx,qy,qz,tx,ty,tz`.
    #[arg(long, requires = "camera", allow_hyphen_values = true)]
    pub pose: Option<String>,
    /// Intrinsics `fx,fy,cx,cy,width,height`.
    #[arg(long)]
    pub camera: Option<String>,
    /// png or pnm.
    #[arg(long, default_value = "png")]
    pub format: String,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the metric table (comma-separated); always printed too.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 32)]
    pub width: u32,
    #[arg(long, default_value_t = 32)]
    pub height: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// photon, gray, color, smooth or all.
    #[arg(long, default_value = "all")]
    pub loss: String,
    /// Exit with an error when any group exceeds this relative error.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct MakeToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 40)]
    pub train_views: usize,
    #[arg(long, default_value_t = 8)]
    pub test_views: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Colorize(a) => commands::colorize(&a),
        Command::Render(a) => commands::render_views(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::MakeToy(a) => commands::make_toy(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
