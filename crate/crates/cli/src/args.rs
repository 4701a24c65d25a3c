use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use motionfit::fitting::{FitConfig, LossMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "motionfit", version, about = "Fit per-frame poses of a rigged mesh to a feature video")]
pub struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario: mesh, rig with camera, feature video
    /// and ground-truth clip.
    Synth {
        #[command(flatten)]
        params: SynthParams,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a clip to a feature video.
    Fit(FitArgs),
    /// Compare a clip with a ground-truth clip.
    Eval {
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write rendered features, depth and coverage of one frame as PGM images.
    Dump(DumpArgs),
    /// Rerun the command recorded in a manifest and compare its outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthParams {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub bones: usize,
    #[arg(long, default_value_t = 500)]
    pub vertices: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Feature channels.
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Peak joint angle in radians.
    #[arg(long, default_value_t = 0.3)]
    pub amplitude: f64,
    /// Relative norm of smooth noise added to non-reference frames.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub rig: PathBuf,
    /// Feature video (FTRV).
    #[arg(long)]
    pub features: PathBuf,
    /// Camera JSON; defaults to the camera embedded in the rig.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// TOML file with fit settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: FitOverrides,
    /// Print every n-th iteration to stderr (the log file has all of them).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct FitOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub warmup_end: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub encoding_order: Option<usize>,
    #[arg(long)]
    pub w_render: Option<f64>,
    #[arg(long)]
    pub w_depth: Option<f64>,
    #[arg(long)]
    pub w_smooth: Option<f64>,
    #[arg(long)]
    pub w_fidelity: Option<f64>,
    #[arg(long)]
    pub w_jacobian: Option<f64>,
    /// `cosine` or `mse`.
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
}

impl FitOverrides {
    pub fn apply(&self, c: &mut FitConfig) {
        fn set<T: Copy>(dst: &mut T, src: Option<T>) {
            if let Some(v) = src {
                *dst = v;
            }
        }
        set(&mut c.seed, self.seed);
        set(&mut c.iterations, self.iterations);
        set(&mut c.warmup_end, self.warmup_end);
        set(&mut c.learning_rate, self.learning_rate);
        set(&mut c.adam_eps, self.adam_eps);
        set(&mut c.alpha, self.alpha);
        set(&mut c.hidden, self.hidden);
        set(&mut c.layers, self.layers);
        set(&mut c.encoding_order, self.encoding_order);
        set(&mut c.w_render, self.w_render);
        set(&mut c.w_depth, self.w_depth);
        set(&mut c.w_smooth, self.w_smooth);
        set(&mut c.w_fidelity, self.w_fidelity);
        set(&mut c.w_jacobian, self.w_jacobian);
        set(&mut c.loss_mode, self.loss_mode);
    }
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Pose the mesh with this clip instead of the rest pose.
    #[arg(long)]
    pub clip: Option<PathBuf>,
    /// Frame to dump; defaults to the reference frame.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Feature channels to dump.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub channels: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}
