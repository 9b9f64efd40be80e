use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "uvrefine", version, about = "Refine facial UV textures against a photograph")]
pub struct Cli {
    /// Log progress to stderr (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Run configuration (flat TOML with dotted keys).
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set schedule.iterations=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the style texture and face mask from the photograph.
    Prepare(PrepareArgs),

    /// Run the multi-stage refinement.
    Refine(RefineArgs),

    /// Score a texture against ground truth or the photograph.
    Evaluate(EvaluateArgs),

    /// Match style-texture landmarks against every stage checkpoint.
    DiagnoseMatching(DiagnoseArgs),

    /// Download or copy a weights bundle and verify it.
    FetchWeights(FetchArgs),

    /// Render a comparison grid of input, content, refined and re-rendered images.
    Report(Common),

    /// Run a job list in worker processes.
    Batch(BatchArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,

    /// Also write the depth buffer and coverage of the posed mesh.
    #[arg(long)]
    pub dump_raster: bool,
}

/// Shading applied when rendering a texture. Textures hold lit appearance,
/// so only `none` exists for now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Lighting {
    #[default]
    None,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long, value_enum, default_value_t = Lighting::None)]
    pub lighting: Lighting,

    /// Number of stages (shorthand for `--set schedule.stages=N`).
    #[arg(long)]
    pub stages: Option<usize>,

    /// Iterations per scale (shorthand for `--set schedule.iterations=N`).
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Uv,
    Reprojected,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long, value_enum, default_value = "reprojected")]
    pub protocol: ProtocolArg,

    /// Texture to score; defaults to the refined texture in the output directory.
    #[arg(long)]
    pub texture: Option<PathBuf>,

    /// Ground-truth texture (uv protocol).
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,

    /// Mask of the scored texels (uv protocol); defaults to the mesh's UV coverage.
    #[arg(long)]
    pub region: Option<PathBuf>,

    /// Record identifier.
    #[arg(long, default_value = "scene")]
    pub id: String,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,

    /// Style-texture point in texels, `x,y`; repeatable. Defaults to six landmarks.
    #[arg(long = "point", value_name = "X,Y")]
    pub points: Vec<String>,

    /// Spacing of candidate output locations, in texels.
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[command(flatten)]
    pub common: Common,

    /// http(s) URL or local path of a safetensors bundle.
    #[arg(long)]
    pub url: String,

    /// Expected SHA-256 of the downloaded bytes.
    #[arg(long)]
    pub sha256: Option<String>,

    /// Destination; defaults to `paths.weights_bundle`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Job list file.
    #[arg(long)]
    pub jobs: PathBuf,

    #[arg(long, default_value_t = 1)]
    pub workers: usize,

    /// Pass `--force` to every job.
    #[arg(long)]
    pub force: bool,
}
