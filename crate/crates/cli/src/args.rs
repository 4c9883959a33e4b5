use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// `AxB` pair, as in `148x25`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims<T>(pub T, pub T);

impl<T: FromStr> FromStr for Dims<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected AxB, got `{s}`"))?;
        let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad number `{v}` in `{s}`"));
        Ok(Dims(p(a)?, p(b)?))
    }
}

/// `a,b` pair of overlap fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions(pub f64, pub f64);

impl FromStr for Fractions {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected MAJOR,MINOR, got `{s}`"))?;
        let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number `{v}` in `{s}`"));
        Ok(Fractions(p(a)?, p(b)?))
    }
}

#[derive(Debug, Parser)]
#[command(name = "ovitrap", version, about = "Ovitrap scan planning, tile merging and egg counting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan the tile poses covering a trap.
    Plan(PlanCmd),
    /// Compile a plan into the stage command stream.
    Compile(CompileCmd),
    /// Generate a synthetic scene and render every tile.
    Simulate(SimulateCmd),
    /// Run the perfect-knowledge detector over a scene.
    #[command(name = "detect-oracle")]
    DetectOracle(DetectCmd),
    /// Merge tile detections into whole-trap instances.
    Merge(MergeCmd),
    /// Print the egg counts of a merged document.
    Count(CountCmd),
    /// Mask-IoU mAP of detections against ground truth.
    Eval(EvalCmd),
    /// Per-split instance counts of a ground-truth file.
    Stats(StatsCmd),
    /// Render the whole-trap overlay and print the counts.
    Report(ReportCmd),
    /// Plan, simulate, detect, merge, evaluate and report in one go.
    Run(RunCmd),
}

#[derive(Debug, Clone, Args, Default)]
pub struct GeometryArgs {
    /// Named configuration; explicit flags override its values.
    #[arg(long)]
    pub preset: Option<String>,
    /// Trap size in mm, major x minor.
    #[arg(long, value_name = "LxW")]
    pub trap_mm: Option<Dims<f64>>,
    /// Tile footprint in mm, major x minor.
    #[arg(long, value_name = "AxB")]
    pub tile_mm: Option<Dims<f64>>,
    /// Tile resolution in pixels, major x minor.
    #[arg(long, value_name = "PxQ")]
    pub tile_px: Option<Dims<u32>>,
    /// Overlap fractions along major and minor axes.
    #[arg(long, value_name = "MAJOR,MINOR")]
    pub overlap: Option<Fractions>,
    /// Force the tile counts, major x minor.
    #[arg(long, value_name = "NxM")]
    pub counts: Option<Dims<usize>>,
}

impl GeometryArgs {
    pub fn is_empty(&self) -> bool {
        self.preset.is_none()
            && self.trap_mm.is_none()
            && self.tile_mm.is_none()
            && self.tile_px.is_none()
            && self.overlap.is_none()
            && self.counts.is_none()
    }
}

#[derive(Debug, Clone, Args)]
pub struct PlanSource {
    /// Plan JSON to read instead of geometry flags.
    #[arg(long, conflicts_with_all = ["preset", "trap_mm", "tile_mm", "tile_px", "overlap", "counts"])]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct PlanCmd {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Output file; the plan goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompileCmd {
    #[command(flatten)]
    pub source: PlanSource,
    /// Settle time before each capture, seconds.
    #[arg(long, default_value_t = 2.0)]
    pub dwell_s: f64,
    /// Stage time per move, seconds, for the duration estimate.
    #[arg(long, default_value_t = 0.3037)]
    pub per_move_s: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 200)]
    pub eggs: usize,
    #[arg(long, default_value_t = 0.15)]
    pub hatch_fraction: f64,
    /// Minimum distance between egg centers.
    #[arg(long, default_value_t = 0.5)]
    pub min_sep_mm: f64,
    /// Seed of every random draw in the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub source: PlanSource,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct JitterArgs {
    /// Radial vertex noise of the oracle, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub sigma_px: f64,
    /// Oracle scores are drawn from [1 - noise, 1].
    #[arg(long, default_value_t = 0.0)]
    pub score_noise: f64,
}

#[derive(Debug, Args)]
pub struct DetectCmd {
    #[command(flatten)]
    pub source: PlanSource,
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub jitter: JitterArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Combine {
    Max,
    Mean,
}

#[derive(Debug, Clone, Args)]
pub struct MergeArgs {
    #[arg(long, default_value_t = 0.5)]
    pub dup_iou: f64,
    #[arg(long, default_value_t = 0.02)]
    pub contact_mm: f64,
    #[arg(long, value_enum, default_value_t = Combine::Max)]
    pub score_combine: Combine,
    #[arg(long, default_value_t = 0.007)]
    pub raster_pitch_mm: f64,
}

#[derive(Debug, Args)]
pub struct MergeCmd {
    #[command(flatten)]
    pub source: PlanSource,
    #[arg(long)]
    pub detections: PathBuf,
    #[command(flatten)]
    pub merge: MergeArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the counts as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CountCmd {
    pub merged: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Ground-truth annotation file (image-level evaluation).
    #[arg(long, requires = "detections", conflicts_with_all = ["scene", "merged"])]
    pub gt: Option<PathBuf>,
    /// Tile detections whose tile ids are ground-truth image ids.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Synthetic scene (trap-level evaluation).
    #[arg(long, requires = "merged")]
    pub scene: Option<PathBuf>,
    /// Merged document to score against the scene.
    #[arg(long)]
    pub merged: Option<PathBuf>,
    /// Raster pitch: pixels for --gt, mm for --scene. Defaults to one pixel.
    #[arg(long)]
    pub pitch: Option<f64>,
    #[arg(long)]
    pub max_dets: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsCmd {
    pub gt: PathBuf,
    /// Split name for images without a `split` field.
    #[arg(long, default_value = "all")]
    pub default_split: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    #[command(flatten)]
    pub source: PlanSource,
    /// Directory holding the tile PNGs and their manifest.
    #[arg(long)]
    pub tiles: PathBuf,
    #[arg(long)]
    pub merged: PathBuf,
    /// Mosaic resolution.
    #[arg(long, default_value_t = 0.05)]
    pub mm_per_px: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunCmd {
    #[command(flatten)]
    pub source: PlanSource,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub jitter: JitterArgs,
    #[command(flatten)]
    pub merge: MergeArgs,
    #[arg(long, default_value_t = 2.0)]
    pub dwell_s: f64,
    #[arg(long, default_value_t = 0.05)]
    pub mm_per_px: f64,
    /// Skip tile rendering and the overlay.
    #[arg(long)]
    pub no_images: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub json: bool,
}
