use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "airwaytopo", version, about = "Airway tree post-processing, parsing, metrics, losses and sampling")]
pub struct Cli {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true, env = "AIRWAYTOPO_THREADS")]
    pub threads: Option<usize>,

    /// JSON file of flag defaults: keys are long flag names, optionally
    /// grouped under a subcommand name. Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probability map → binary airway mask (hysteresis, hole filling,
    /// largest component).
    #[command(args_override_self = true)]
    Postprocess(PostprocessArgs),
    /// Clamp CT intensities to a window and rescale to [0, 1].
    #[command(args_override_self = true)]
    Normalize(NormalizeArgs),
    /// Binary mask → labelled airway tree JSON.
    #[command(args_override_self = true)]
    Parse(ParseArgs),
    /// Score a prediction against a reference, one case or a directory.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Draw training patches from the curriculum scheduler.
    #[command(args_override_self = true)]
    Sample(SampleArgs),
    /// Dice, GUL, ATRL and the stage-3 loss of a prediction.
    #[command(args_override_self = true)]
    Loss(LossArgs),
    /// Write a synthetic airway tree with exact ground truth.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Layer shapes and parameter count of the segmentation network.
    #[command(args_override_self = true)]
    Netshape(NetshapeArgs),
}

impl Command {
    pub const NAMES: [&'static str; 8] = [
        "postprocess",
        "normalize",
        "parse",
        "evaluate",
        "sample",
        "loss",
        "synth",
        "netshape",
    ];
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Probability volume.
    pub input: PathBuf,
    /// Output mask; format follows the extension.
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub t_high: f64,
    #[arg(long, default_value_t = 0.35)]
    pub t_low: f64,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Lower end of the intensity window (HU).
    #[arg(long, default_value_t = -1000.0, allow_negative_numbers = true)]
    pub window_lo: f64,
    /// Upper end of the intensity window (HU).
    #[arg(long, default_value_t = 500.0, allow_negative_numbers = true)]
    pub window_hi: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ParseFlags {
    /// Odd moving-average window for centerline smoothing.
    #[arg(long, default_value_t = 5)]
    pub smooth_window: usize,
    /// Leaves shorter than this many voxels are pruned.
    #[arg(long, default_value_t = 3.0)]
    pub prune_min_len: f64,
    /// Leaves at this depth or shallower are never pruned.
    #[arg(long, default_value_t = 0)]
    pub prune_protect_generation: usize,
    /// Largest parent/child angle (degrees) treated as a straight continuation.
    #[arg(long, default_value_t = 15.0)]
    pub anatomy_max_angle: f64,
    /// Smallest child/parent radius ratio treated as a continuation.
    #[arg(long, default_value_t = 0.8)]
    pub anatomy_min_radius_ratio: f64,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Binary airway mask.
    pub mask: PathBuf,
    /// Output tree JSON.
    pub output: PathBuf,
    /// Also write the skeleton as JSON here.
    #[arg(long, value_name = "FILE")]
    pub emit_skeleton: Option<PathBuf>,
    #[command(flatten)]
    pub parse: ParseFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted mask (single-case mode).
    pub pred: Option<PathBuf>,
    /// Reference mask (single-case mode).
    pub gt: Option<PathBuf>,
    /// Report JSON (single-case mode); stdout when omitted.
    pub output: Option<PathBuf>,

    /// Directory of predictions; each is matched to the same file name in
    /// --gt-dir.
    #[arg(long, requires_all = ["gt_dir", "out_dir"])]
    pub pred_dir: Option<PathBuf>,
    #[arg(long, requires = "pred_dir")]
    pub gt_dir: Option<PathBuf>,
    /// Receives `<case>.report.json` per case and `summary.json`.
    #[arg(long, requires = "pred_dir")]
    pub out_dir: Option<PathBuf>,

    /// Reference tree JSON to score against instead of parsing the reference.
    #[arg(long, value_name = "FILE", conflicts_with = "pred_dir")]
    pub tree: Option<PathBuf>,

    /// A branch is detected when at least this fraction of its length is.
    #[arg(long, default_value_t = 0.8)]
    pub bd_threshold: f64,
    #[command(flatten)]
    pub parse: ParseFlags,

    /// Only combine the four given scores into the weighted mean score.
    #[arg(long, requires_all = ["td", "bd", "dsc", "pre"], conflicts_with_all = ["pred", "pred_dir"])]
    pub wms_only: bool,
    #[arg(long, requires = "wms_only")]
    pub td: Option<f64>,
    #[arg(long, requires = "wms_only")]
    pub bd: Option<f64>,
    #[arg(long, requires = "wms_only")]
    pub dsc: Option<f64>,
    #[arg(long, requires = "wms_only")]
    pub pre: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Reference mask.
    #[arg(long)]
    pub gt: PathBuf,
    /// Current prediction; needed from stage 2 on.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Reference centerline JSON; skeletonized from --gt when omitted.
    #[arg(long, value_name = "FILE")]
    pub centerline: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub stage: u8,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = airwaytopo::sampling::DEFAULT_PATCH_SIZE)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Non-binary predictions count as foreground strictly above this.
    #[arg(long, default_value_t = 0.5)]
    pub pred_threshold: f32,
    #[arg(long, default_value_t = 4.0)]
    pub boost: f64,
    #[arg(long, default_value_t = 0.2)]
    pub r_min: f64,
    #[arg(long, default_value_t = 0.6)]
    pub r_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub breakage_min: f64,
    #[arg(long, default_value_t = 0.4)]
    pub breakage_max: f64,
    /// Also write the scheduler state here.
    #[arg(long, value_name = "FILE")]
    pub state_out: Option<PathBuf>,
    /// Patch list JSON; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Predicted probabilities.
    pub pred: PathBuf,
    /// Reference mask.
    pub gt: PathBuf,
    /// Reference tree JSON; parsed from the reference when omitted.
    #[arg(long, value_name = "FILE")]
    pub tree: Option<PathBuf>,
    /// Reference centerline JSON; skeletonized from the reference when omitted.
    #[arg(long, value_name = "FILE")]
    pub centerline: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    pub beta: f64,
    /// Exponent of the branch-size weights.
    #[arg(long, default_value_t = 0.5)]
    pub kappa: f64,
    /// Upper clamp of the branch-size weights.
    #[arg(long, default_value_t = 8.0)]
    pub cap: f64,
    /// Cap on the breakage term of the centerline weights.
    #[arg(long, default_value_t = 2.0)]
    pub k_cap: f64,
    /// Voxels by which breakage points are grown.
    #[arg(long, default_value_t = 1)]
    pub eta_dilation: usize,
    /// Let the breakage term go negative far from the centerline.
    #[arg(long)]
    pub eta_unclamped: bool,
    /// The prediction counts as foreground strictly above this when
    /// detecting breakages.
    #[arg(long, default_value_t = 0.5)]
    pub pred_threshold: f32,
    #[command(flatten)]
    pub parse: ParseFlags,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationMode {
    Whole,
    Gap,
    Tip,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for mask, tree, centerline and spec files.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Volume file extension: nii, nii.gz or json.
    #[arg(long, default_value = "nii.gz")]
    pub format: String,
    #[arg(long, default_value_t = 3)]
    pub generations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw lengths, radii and angle from the seed.
    #[arg(long)]
    pub randomized: bool,
    #[arg(long)]
    pub branching_factor: Option<usize>,
    /// Breadth-first id of a branch that splits into three.
    #[arg(long)]
    pub trifurcation_at: Option<usize>,
    #[arg(long)]
    pub root_radius: Option<f64>,
    #[arg(long)]
    pub radius_decay: Option<f64>,
    /// Axis length per generation in voxels, comma separated (G + 1 values).
    #[arg(long, value_delimiter = ',')]
    pub branch_lengths: Option<Vec<f64>>,
    #[arg(long)]
    pub branch_angle: Option<f64>,
    #[arg(long)]
    pub curvature: Option<f64>,
    /// Fixed volume size z,y,x; fitted to the tree when omitted.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub dims: Option<Vec<usize>>,
    /// Voxel spacing z,y,x in mm.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub spacing: Option<Vec<f64>>,

    /// Also write a blurred probability map of the mask.
    #[arg(long)]
    pub probability: bool,
    #[arg(long, default_value_t = 0.9)]
    pub p_fg: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_bg: f64,
    #[arg(long, default_value_t = 1)]
    pub blur: usize,

    /// Also write the mask with this branch (partly) removed.
    #[arg(long)]
    pub ablate_branch: Option<usize>,
    #[arg(long, value_enum, default_value = "whole")]
    pub ablation: AblationMode,
    /// Axial start of a gap, in voxels from the branch origin.
    #[arg(long, default_value_t = 0.0)]
    pub ablate_start: f64,
    /// Axial length of a gap or tip, in voxels.
    #[arg(long, default_value_t = 0.0)]
    pub ablate_len: f64,
}

#[derive(Debug, Args)]
pub struct NetshapeArgs {
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub input_channels: Option<usize>,
    /// Block widths per encoder module: `8,16,32/16,32,64/...`.
    #[arg(long)]
    pub encoder_dies: Option<String>,
    /// Block widths per decoder module, deepest first.
    #[arg(long)]
    pub decoder_dies: Option<String>,
    /// Fused output width of each of the seven modules, comma separated.
    #[arg(long)]
    pub die_out_channels: Option<String>,
    /// Widths of the three input-residual convolutions, comma separated.
    #[arg(long)]
    pub residual_channels: Option<String>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}
