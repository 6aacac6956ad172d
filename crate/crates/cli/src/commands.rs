use std::fs;
use std::path::{Path, PathBuf};

use airwaytopo::losses::{self, CenterlineParams, GulParams, LocalWeightParams};
use airwaytopo::metrics::{self, BdParams, EvalParams, EvalReport};
use airwaytopo::morphology::{self, DtiParams};
use airwaytopo::netshape::{self, NetConfig};
use airwaytopo::sampling::{self, PatchSpec, SchedulerParams, SchedulerState, Strategy};
use airwaytopo::skeleton::{self, SkeletonPointSet};
use airwaytopo::testkit::{self, Ablation, TreeSpec};
use airwaytopo::tree::{self, AirwayTree, AnatomyParams, ParseParams};
use airwaytopo::volume::{self, VolumeKind, VoxelGrid};
use airwaytopo::{Dims, Error};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::args::*;

/// A failed run: exit code plus the error JSON fields.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            kind: "Usage".into(),
            message: message.into(),
        }
    }
}

/// Exit code of a library error: 1 for unreadable or invalid input, 2 for
/// degenerate input, 3 when the computation itself failed.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        return 1;
    }
    if e.is_degenerate() {
        return 2;
    }
    match e {
        Error::InvalidVolume(_)
        | Error::DimMismatch { .. }
        | Error::InvalidParams(_)
        | Error::OutOfRange(_)
        | Error::DegenerateRange { .. }
        | Error::InvalidConfig(_)
        | Error::IndivisibleInput { .. }
        | Error::PatchExceedsVolume { .. }
        | Error::BranchNotFound(_)
        | Error::GapTooLarge { .. } => 1,
        _ => 3,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

/// How a successful run ended.
#[derive(Debug)]
pub enum Status {
    Done,
    /// Output was written but the input was degenerate (exit 2).
    Degenerate { kind: String, message: String },
}

type Run = Result<Status, Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        kind: "IoFailure".into(),
        message: format!("{}: {e}", path.display()),
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable output");
    bytes.push(b'\n');
    bytes
}

/// Writes JSON to `path` atomically, or to stdout.
fn emit<T: Serialize + ?Sized>(value: &T, path: Option<&Path>) -> Result<(), Failure> {
    let bytes = to_json(value);
    match path {
        Some(p) => Ok(volume::write_atomic(p, &bytes)?),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure {
        code: 1,
        kind: "Json".into(),
        message: format!("{}: {e}", path.display()),
    })
}

fn check_input(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(io_failure(path, "no such file"))
    }
}

/// The directory an output goes into must already exist.
fn check_output(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(io_failure(path, "output directory does not exist"))
        }
        _ => Ok(()),
    }
}

fn load(path: &Path) -> Result<VoxelGrid, Failure> {
    check_input(path)?;
    Ok(volume::load_volume(path)?)
}

/// A mask file of any stored kind whose values are all 0 or 1.
fn load_mask(path: &Path) -> Result<VoxelGrid, Failure> {
    let g = load(path)?;
    if g.kind() == VolumeKind::Binary {
        return Ok(g);
    }
    g.with_kind(VolumeKind::Binary).map_err(|e| Failure {
        code: 1,
        kind: e.kind().into(),
        message: format!("{} is not a binary mask: {e}", path.display()),
    })
}

/// A volume whose values all lie in [0, 1].
fn load_probability(path: &Path) -> Result<VoxelGrid, Failure> {
    let g = load(path)?;
    if g.kind() == VolumeKind::Probability {
        return Ok(g);
    }
    g.with_kind(VolumeKind::Probability).map_err(|e| Failure {
        code: 1,
        kind: e.kind().into(),
        message: format!("{} is not a probability map: {e}", path.display()),
    })
}

fn as_binary(g: VoxelGrid, threshold: f32) -> VoxelGrid {
    if g.kind() == VolumeKind::Binary {
        g
    } else {
        g.binarized(threshold)
    }
}

impl ParseFlags {
    fn params(&self) -> ParseParams {
        ParseParams {
            smooth_window: self.smooth_window,
            prune_min_len_vox: self.prune_min_len,
            prune_max_generation_protect: self.prune_protect_generation,
            anatomy: AnatomyParams {
                max_angle_deg: self.anatomy_max_angle,
                min_radius_ratio: self.anatomy_min_radius_ratio,
            },
        }
    }
}

pub fn run(cmd: Command) -> Run {
    match cmd {
        Command::Postprocess(a) => postprocess(a),
        Command::Normalize(a) => normalize(a),
        Command::Parse(a) => parse(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sample(a) => sample(a),
        Command::Loss(a) => loss(a),
        Command::Synth(a) => synth(a),
        Command::Netshape(a) => netshape(a),
    }
}

fn postprocess(a: PostprocessArgs) -> Run {
    let params = DtiParams::new(a.t_high, a.t_low)?;
    check_output(&a.output)?;
    let prob = load_probability(&a.input)?;
    let out = morphology::postprocess(&prob, params)?;
    volume::save_volume(&out.mask, &a.output)?;
    Ok(match out.warning {
        Some(w) => Status::Degenerate {
            kind: format!("{w:?}"),
            message: format!("no voxel reached t_high = {}; wrote an empty mask", a.t_high),
        },
        None => Status::Done,
    })
}

fn normalize(a: NormalizeArgs) -> Run {
    check_output(&a.output)?;
    let ct = load(&a.input)?;
    let out = volume::truncate_normalize(&ct, a.window_lo, a.window_hi)?;
    volume::save_volume(&out, &a.output)?;
    Ok(Status::Done)
}

fn parse(a: ParseArgs) -> Run {
    let params = a.parse.params();
    params.validate()?;
    check_output(&a.output)?;
    if let Some(p) = &a.emit_skeleton {
        check_output(p)?;
    }
    let mask = load_mask(&a.mask)?;
    let parsed = match tree::parse_pipeline_with_skeleton(&mask, &params) {
        // nothing to parse is an input problem here, not a handled case
        Err(Error::EmptyMask) => {
            return Err(Failure {
                code: 1,
                kind: "EmptyMask".into(),
                message: format!("{} has no foreground voxels", a.mask.display()),
            })
        }
        r => r?,
    };
    emit(&parsed.tree, Some(&a.output))?;
    if let Some(p) = &a.emit_skeleton {
        emit(&parsed.skeleton, Some(p))?;
    }
    Ok(Status::Done)
}

fn evaluate(a: EvaluateArgs) -> Run {
    if a.wms_only {
        let (td, bd, dsc, pre) = (a.td.unwrap(), a.bd.unwrap(), a.dsc.unwrap(), a.pre.unwrap());
        let wms = metrics::weighted_mean_score(td, bd, dsc, pre)?;
        emit(&json!({"td": td, "bd": bd, "dsc": dsc, "pre": pre, "wms": wms}), None)?;
        return Ok(Status::Done);
    }
    let params = EvalParams {
        bd: BdParams {
            branch_detect_threshold: a.bd_threshold,
        },
        parse: a.parse.params(),
    };
    params.bd.validate()?;
    params.parse.validate()?;
    if let Some(pred_dir) = &a.pred_dir {
        if a.pred.is_some() {
            return Err(Failure::usage("give either PRED GT or --pred-dir, not both"));
        }
        let (gt_dir, out_dir) = (a.gt_dir.as_ref().unwrap(), a.out_dir.as_ref().unwrap());
        return evaluate_batch(pred_dir, gt_dir, out_dir, &params);
    }
    let (Some(pred), Some(gt)) = (&a.pred, &a.gt) else {
        return Err(Failure::usage("evaluate needs PRED and GT, --pred-dir, or --wms-only"));
    };
    if let Some(out) = &a.output {
        check_output(out)?;
    }
    let report = match &a.tree {
        Some(t) => {
            let tree: AirwayTree = read_json(t)?;
            let pred = load_mask(pred)?;
            let gt = load_mask(gt)?;
            metrics::evaluate_with_tree(&pred, &gt, &tree, &params.bd)?
        }
        None => evaluate_files(pred, gt, &params)?,
    };
    emit(&report, a.output.as_deref())?;
    Ok(Status::Done)
}

fn evaluate_files(pred: &Path, gt: &Path, params: &EvalParams) -> Result<EvalReport, Failure> {
    let pred = load_mask(pred)?;
    let gt = load_mask(gt)?;
    Ok(metrics::evaluate_case(&pred, &gt, params)?)
}

/// Case name and extension-stripped stem of a volume file, if it is one.
fn case_name(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    [".nii.gz", ".nii", ".json"]
        .iter()
        .find_map(|ext| name.strip_suffix(ext))
        .filter(|stem| !stem.is_empty() && !stem.starts_with('.'))
        .map(str::to_owned)
}

fn evaluate_batch(pred_dir: &Path, gt_dir: &Path, out_dir: &Path, params: &EvalParams) -> Run {
    for d in [pred_dir, gt_dir] {
        if !d.is_dir() {
            return Err(io_failure(d, "not a directory"));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| io_failure(out_dir, e))?;
    let mut cases: Vec<(String, PathBuf)> = fs::read_dir(pred_dir)
        .map_err(|e| io_failure(pred_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter_map(|p| case_name(&p).map(|n| (n, p)))
        .collect();
    cases.sort();
    if cases.is_empty() {
        return Err(io_failure(pred_dir, "no prediction volumes found"));
    }

    let results: Vec<Result<EvalReport, Failure>> = cases
        .par_iter()
        .map(|(_, pred)| {
            let gt = gt_dir.join(pred.file_name().unwrap());
            evaluate_files(pred, &gt, params)
        })
        .collect();

    let mut reports = Vec::new();
    let mut succeeded = Vec::new();
    let mut failed = Vec::new();
    for ((name, _), r) in cases.iter().zip(results) {
        match r {
            Ok(report) => {
                emit(&report, Some(&out_dir.join(format!("{name}.report.json"))))?;
                succeeded.push(name.clone());
                reports.push(report);
            }
            Err(f) => failed.push(json!({"case": name, "error": f.kind, "message": f.message})),
        }
    }
    let summary = json!({
        "cases": cases.len(),
        "succeeded": succeeded,
        "failed": failed,
        "metrics": metrics::aggregate(&reports),
    });
    emit(&summary, Some(&out_dir.join("summary.json")))?;
    if failed.is_empty() {
        Ok(Status::Done)
    } else {
        Err(Failure {
            code: 3,
            kind: "CaseFailures".into(),
            message: format!("{} of {} cases failed; see summary.json", failed.len(), cases.len()),
        })
    }
}

/// Independent seed for the `k`-th patch of a plan.
fn patch_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample(a: SampleArgs) -> Run {
    let params = SchedulerParams {
        boost: a.boost,
        r_min: a.r_min,
        r_max: a.r_max,
        breakage_min: a.breakage_min,
        breakage_max: a.breakage_max,
    };
    params.validate()?;
    if a.stage > 1 && a.pred.is_none() {
        return Err(Failure::usage(format!("stage {} needs --pred", a.stage)));
    }
    for p in a.out.iter().chain(&a.state_out) {
        check_output(p)?;
    }
    let gt = load_mask(&a.gt)?;
    let dims = gt.dims();

    let mut missed = SkeletonPointSet::new(dims, gt.spacing(), vec![])?;
    let mut breakages = skeleton::BreakageSet::default();
    let mut state = SchedulerState::new(a.stage)?;
    if let Some(pred) = &a.pred {
        let pred = as_binary(load(pred)?, a.pred_threshold);
        let centerline: SkeletonPointSet = match &a.centerline {
            Some(p) => read_json(p)?,
            None => skeleton::skeletonize(&gt)?,
        };
        missed = skeleton::classify_skeleton_vs_prediction(&centerline, &pred)?.1;
        breakages = skeleton::detect_breakages(&centerline, &pred)?;
        state = sampling::scheduler_update(
            &state,
            missed.len(),
            breakages.breakage_points.len(),
            centerline.len(),
            &params,
        )?;
    }

    let plan = sampling::make_batch_plan(&state, a.count, a.seed)?;
    let mut fallbacks = 0;
    let mut patches: Vec<PatchSpec> = Vec::with_capacity(plan.len());
    for (k, strategy) in plan.into_iter().enumerate() {
        let s = patch_seed(a.seed, k);
        let drawn = match strategy {
            Strategy::Random => sampling::random_crop(&gt, a.patch_size, s),
            Strategy::HardMining => sampling::hard_mining_crop(&missed, a.patch_size, s),
            Strategy::Breakage => sampling::breakage_crop(&breakages, dims, a.patch_size, s),
        };
        let patch = match drawn {
            Err(Error::EmptySet(_)) => {
                fallbacks += 1;
                sampling::random_crop(&gt, a.patch_size, s)?
            }
            r => r?,
        };
        patches.push(patch);
    }
    emit(&patches, a.out.as_deref())?;
    if let Some(p) = &a.state_out {
        emit(&state, Some(p))?;
    }
    if fallbacks > 0 {
        return Ok(Status::Degenerate {
            kind: "EmptySet".into(),
            message: format!(
                "{fallbacks} of {} patches fell back to random crops: no missed or breakage points to anchor on",
                patches.len()
            ),
        });
    }
    Ok(Status::Done)
}

fn loss(a: LossArgs) -> Run {
    let gp = GulParams {
        gamma: a.gamma,
        alpha: a.alpha,
        beta: a.beta,
    };
    let lw = LocalWeightParams {
        kappa: a.kappa,
        cap: a.cap,
    };
    let cl = CenterlineParams {
        k_cap: a.k_cap,
        eta_term_clamped_nonneg: !a.eta_unclamped,
        eta_dilation: a.eta_dilation,
    };
    gp.validate()?;
    lw.validate()?;
    cl.validate()?;
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let pred = load_probability(&a.pred)?;
    let gt = load_mask(&a.gt)?;
    let tree: AirwayTree = match &a.tree {
        Some(p) => read_json(p)?,
        None => tree::parse_pipeline(&gt, &a.parse.params())?,
    };
    let centerline: SkeletonPointSet = match &a.centerline {
        Some(p) => read_json(p)?,
        None => skeleton::skeletonize(&gt)?,
    };
    let breakages = skeleton::detect_breakages(&centerline, &pred.binarized(a.pred_threshold))?;
    let w = losses::weight_field(&gt, &tree, &centerline, &breakages, &lw, &cl)?;
    let dice = losses::dice_loss(&pred, &gt)?;
    let gul = losses::gul(&pred, &gt, &w.w_l, &gp)?;
    let atrl = losses::atrl(&pred, &gt, &centerline, &w)?;
    let out = json!({
        "dice": dice,
        "gul": gul,
        "atrl": atrl,
        "stage3": gul + atrl,
        "params": {"gul": gp, "local": lw, "centerline": cl},
    });
    emit(&out, a.out.as_deref())?;
    Ok(Status::Done)
}

/// Axis lengths for a non-randomized tree of depth `g`: the stock lengths,
/// continued by shrinking each further generation to 0.82 of the previous.
fn default_lengths(g: usize) -> Vec<f64> {
    let mut v = TreeSpec::default().branch_length_vox;
    while v.len() < g + 1 {
        let last = *v.last().unwrap();
        v.push(f64::max(f64::round(last * 0.82), 12.0));
    }
    v.truncate(g + 1);
    v
}

fn triple<T: Copy>(v: &[T], what: &str) -> Result<[T; 3], Failure> {
    <[T; 3]>::try_from(v).map_err(|_| Failure::usage(format!("{what} needs exactly 3 values (z,y,x)")))
}

fn synth_spec(a: &SynthArgs) -> Result<TreeSpec, Failure> {
    let mut spec = if a.randomized {
        TreeSpec::randomized(a.generations, a.seed)
    } else {
        TreeSpec {
            generations: a.generations,
            branch_length_vox: default_lengths(a.generations),
            seed: a.seed,
            ..TreeSpec::default()
        }
    };
    if let Some(v) = a.branching_factor {
        spec.branching_factor = v;
    }
    if a.trifurcation_at.is_some() {
        spec.trifurcation_at = a.trifurcation_at;
    }
    if let Some(v) = a.root_radius {
        spec.root_radius_vox = v;
    }
    if let Some(v) = a.radius_decay {
        spec.radius_decay = v;
    }
    if let Some(v) = &a.branch_lengths {
        spec.branch_length_vox = v.clone();
    }
    if let Some(v) = a.branch_angle {
        spec.branch_angle_deg = v;
    }
    if let Some(v) = a.curvature {
        spec.curvature = v;
    }
    if let Some(v) = &a.dims {
        spec.dims = Some(Dims::from(triple(v, "--dims")?));
    }
    if let Some(v) = &a.spacing {
        spec.spacing = triple(v, "--spacing")?;
    }
    Ok(spec)
}

fn synth(a: SynthArgs) -> Run {
    if !["nii", "nii.gz", "json"].contains(&a.format.as_str()) {
        return Err(Failure::usage(format!(
            "--format must be nii, nii.gz or json, got {:?}",
            a.format
        )));
    }
    let spec = synth_spec(&a)?;
    let ablation = a.ablate_branch.map(|id| {
        let mode = match a.ablation {
            AblationMode::Whole => Ablation::Whole,
            AblationMode::Gap => Ablation::InteriorGap {
                start: a.ablate_start,
                len: a.ablate_len,
            },
            AblationMode::Tip => Ablation::Tip { len: a.ablate_len },
        };
        (id, mode)
    });
    let bundle = testkit::generate(&spec)?;
    let ablated = match ablation {
        Some((id, mode)) => Some(testkit::ablate_branch(&bundle, id, mode)?),
        None => None,
    };
    let probability = if a.probability {
        Some(testkit::to_probability(&bundle.mask, a.p_fg, a.p_bg, a.blur)?)
    } else {
        None
    };

    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let vol = |stem: &str| dir.join(format!("{stem}.{}", a.format));
    volume::save_volume(&bundle.mask, vol("mask"))?;
    emit(&bundle.tree, Some(&dir.join("tree.json")))?;
    emit(&bundle.centerline, Some(&dir.join("centerline.json")))?;
    emit(&spec, Some(&dir.join("spec.json")))?;
    if let Some(p) = &probability {
        volume::save_volume(p, vol("probability"))?;
    }
    if let Some(m) = &ablated {
        volume::save_volume(m, vol("ablated"))?;
    }
    Ok(Status::Done)
}

fn usize_list(s: &str, what: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::usage(format!("{what}: {e} in {s:?}")))
}

fn nested_list(s: &str, what: &str) -> Result<Vec<Vec<usize>>, Failure> {
    s.split('/').map(|part| usize_list(part, what)).collect()
}

fn netshape(a: NetshapeArgs) -> Run {
    let mut cfg = NetConfig::default();
    if let Some(v) = a.input_size {
        cfg.input_size = v;
    }
    if let Some(v) = a.input_channels {
        cfg.input_channels = v;
    }
    if let Some(s) = &a.encoder_dies {
        cfg.encoder_dies = nested_list(s, "--encoder-dies")?;
    }
    if let Some(s) = &a.decoder_dies {
        cfg.decoder_dies = nested_list(s, "--decoder-dies")?;
    }
    if let Some(s) = &a.die_out_channels {
        cfg.die_out_channels = Some(usize_list(s, "--die-out-channels")?);
    }
    if let Some(s) = &a.residual_channels {
        cfg.residual_channels = Some(usize_list(s, "--residual-channels")?);
    }
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let shape = netshape::analyze(&cfg)?;
    emit(&json!({"config": cfg, "layers": shape.layers, "params": shape.params}), a.out.as_deref())?;
    Ok(Status::Done)
}
