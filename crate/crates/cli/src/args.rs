use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "hazediff", version, about = "Physics-guided patch diffusion dehazing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a transmission map with the dark-channel pipeline.
    Tmap(TmapArgs),
    /// Synthesize a hazy image from a clear image and transmission map.
    Synth(SynthArgs),
    /// Noise-schedule utilities.
    Schedule {
        #[command(subcommand)]
        command: ScheduleCommand,
    },
    /// Patch-grid utilities.
    Patches {
        #[command(subcommand)]
        command: PatchesCommand,
    },
    /// Dehaze an image with reverse diffusion.
    Dehaze(DehazeArgs),
    /// Train the tiny denoiser on generated toy scenes.
    TrainToy(TrainArgs),
    /// Compare images with PSNR and SSIM.
    Eval(EvalArgs),
}

/// Dark-channel estimator settings; unset flags fall back to the config file.
#[derive(Debug, Args, Default)]
pub struct DcpArgs {
    /// Haze retention factor [default: 0.95]
    #[arg(long)]
    pub omega: Option<f64>,
    /// Dark-channel window, odd [default: 15]
    #[arg(long)]
    pub window: Option<usize>,
    /// Guided-filter radius [default: 60]
    #[arg(long)]
    pub guided_radius: Option<usize>,
    /// Guided-filter regulariser [default: 0.001]
    #[arg(long)]
    pub guided_reg: Option<f64>,
    /// Lower bound on transmission [default: 0.1]
    #[arg(long)]
    pub t0: Option<f64>,
    /// Sky gradient threshold on the normalised gradient [default: 0.05]
    #[arg(long)]
    pub tau_g: Option<f64>,
    /// Sky brightness threshold [default: 0.7]
    #[arg(long)]
    pub tau_b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TmapArgs {
    /// Hazy input image (PNG/PPM/PGM) [default: none, required]
    #[arg(long)]
    pub input: PathBuf,
    /// Output transmission map (PGM) [default: none, required]
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the dark channel here [default: not written]
    #[arg(long)]
    pub dark: Option<PathBuf>,
    /// Also write the feathered sky mask here [default: not written]
    #[arg(long)]
    pub sky_mask: Option<PathBuf>,
    /// Also write the unrefined map here [default: not written]
    #[arg(long)]
    pub raw: Option<PathBuf>,
    /// JSON sidecar path [default: the output path with a .json extension]
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// TOML run configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub dcp: DcpArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Clear input image [default: none; required unless --generate]
    #[arg(long, required_unless_present = "generate")]
    pub clear: Option<PathBuf>,
    /// Transmission map (PGM) [default: none; required unless --generate]
    #[arg(long, required_unless_present = "generate")]
    pub tmap: Option<PathBuf>,
    /// Generate toy scenes instead of reading inputs [default: off]
    #[arg(long, conflicts_with_all = ["clear", "tmap"])]
    pub generate: bool,
    /// Generated scene side length
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Number of generated scenes
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Atmospheric light [default: 0.8 for inputs, drawn for generated scenes]
    #[arg(long)]
    pub airlight: Option<f64>,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: none, required]
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ScheduleCommand {
    /// Print beta, alpha, gamma and the PIST weight per step as CSV.
    Dump(ScheduleArgs),
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Number of diffusion steps T
    #[arg(long = "T", default_value_t = 1000)]
    pub steps: usize,
    /// First beta
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    /// Last beta
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
    /// PIST decay rate a
    #[arg(long, default_value_t = 0.002)]
    pub pist_a: f64,
    /// Transmission values for the weight columns
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0])]
    pub tau: Vec<f64>,
    /// Output CSV [default: standard output]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PatchesCommand {
    /// Print the patch grid, coverage and blending weights as JSON.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Image height [default: none, required]
    #[arg(long)]
    pub height: usize,
    /// Image width [default: none, required]
    #[arg(long)]
    pub width: usize,
    /// Patch side
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    /// Patch stride
    #[arg(long, default_value_t = 16)]
    pub stride: usize,
    /// Include per-patch weight maps [default: off]
    #[arg(long)]
    pub weights: bool,
    /// Output JSON [default: standard output]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Oracle,
    Tiny,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct DehazeArgs {
    /// Hazy input image [default: none, required]
    #[arg(long)]
    pub input: PathBuf,
    /// Transmission map (PGM) [default: estimated from the input]
    #[arg(long)]
    pub tmap: Option<PathBuf>,
    /// Noise predictor
    #[arg(long, value_enum, default_value_t = Backend::Oracle)]
    pub backend: Backend,
    /// Ground-truth clear image; needed by the oracle, enables report.json [default: none]
    #[arg(long)]
    pub clear: Option<PathBuf>,
    /// Tiny-backend model file [default: none]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// External-backend command line, whitespace separated [default: none]
    #[arg(long)]
    pub denoiser_cmd: Option<String>,
    /// Reverse steps to take, evenly spaced [default: T]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of diffusion steps T [default: 1000]
    #[arg(long = "T")]
    pub total_steps: Option<usize>,
    /// Patch side [default: 64]
    #[arg(long)]
    pub patch: Option<usize>,
    /// Patch stride [default: 16]
    #[arg(long)]
    pub stride: Option<usize>,
    /// PIST decay rate a [default: 0.002]
    #[arg(long)]
    pub pist_a: Option<f64>,
    /// Haze-aware timestep offsets [default: on]
    #[arg(long, value_enum)]
    pub hadtp: Option<Toggle>,
    /// Offset gain [default: 0.25]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Disable injected sampling noise [default: off]
    #[arg(long)]
    pub deterministic: bool,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory for result.png, tmap.pgm and config.json [default: none, required]
    #[arg(long)]
    pub output: PathBuf,
    /// Directory for the per-step CSV trace [default: <output>/trace]
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Worker threads for patch evaluation [default: all cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// TOML run configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub dcp: DcpArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Number of generated training scenes [default: 16]
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Scene side length [default: 64]
    #[arg(long)]
    pub size: Option<usize>,
    /// Optimiser steps [default: 2000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seed for scenes, initialisation and sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples per step [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Training patch side, multiple of 4 [default: 32]
    #[arg(long)]
    pub patch: Option<usize>,
    /// Peak learning rate [default: 0.002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// First-level channel width [default: 16]
    #[arg(long)]
    pub base: Option<usize>,
    /// PIST decay rate a [default: 0.002]
    #[arg(long)]
    pub pist_a: Option<f64>,
    /// Output model file [default: none, required]
    #[arg(long)]
    pub out_model: PathBuf,
    /// Loss trace CSV [default: the model path with a .csv extension]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// TOML run configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference image or directory [default: none, required]
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Test image or directory, paired by file name [default: none, required]
    #[arg(long)]
    pub test: PathBuf,
    /// Output JSON [default: standard output]
    #[arg(long)]
    pub output: Option<PathBuf>,
}
