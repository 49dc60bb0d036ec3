use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matforge::denoiser::Solver;

#[derive(Parser, Debug)]
#[command(
    name = "matforge",
    version,
    about = "Multi-view PBR material generation, baking and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render per-view normal, CCM, depth and mask images of a mesh.
    Gbuffers(GbuffersArgs),
    /// Build a procedural training dataset.
    Dataset(DatasetArgs),
    /// Train the denoiser (phase 1, optionally followed by phase 2).
    Train(TrainArgs),
    /// Sample albedo and MR views for a mesh.
    Generate(GenerateArgs),
    /// Bake generated views into UV textures and a glTF asset.
    Bake(BakeArgs),
    /// Score generated views and baked textures.
    Eval(EvalArgs),
    /// Run generate, bake and eval in sequence.
    Pipeline(PipelineArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Euler,
    Heun,
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Solver {
        match s {
            SolverArg::Euler => Solver::Euler,
            SolverArg::Heun => Solver::Heun,
        }
    }
}

#[derive(Args, Debug)]
pub struct GbuffersArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub views: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[arg(long, default_value_t = 8)]
    pub assets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub source_size: usize,
    #[arg(long, default_value_t = 256)]
    pub texture_resolution: usize,
    #[arg(long, default_value_t = 2)]
    pub lights: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `dataset`. Without it a dataset of
    /// `--assets` assets is generated in memory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub assets: usize,
    #[arg(long)]
    pub phase: Option<u8>,
    /// Checkpoint to start from; required for phase 2.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// After phase 1, continue with this many phase-2 steps.
    #[arg(long)]
    pub phase2_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference image; without it sampling is unconditional.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long)]
    pub preview: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BakeFlags {
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub cos_power: Option<f64>,
    #[arg(long)]
    pub depth_epsilon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BakeArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Directory written by `generate`.
    #[arg(long)]
    pub views: PathBuf,
    #[command(flatten)]
    pub bake: BakeFlags,
    #[arg(long)]
    pub preview: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Directory written by `generate`.
    #[arg(long)]
    pub views: PathBuf,
    /// Directory written by `bake`.
    #[arg(long)]
    pub textures: Option<PathBuf>,
    /// Directory holding ground-truth `albedo.png` and `mr.png` textures.
    #[arg(long)]
    pub gt_textures: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// TOML pipeline config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub gt_textures: Option<PathBuf>,
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub bake: BakeFlags,
    #[arg(long)]
    pub preview: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
