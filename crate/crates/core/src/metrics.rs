//! Overlap and tree-topology metrics.
//!
//! Any nonzero voxel counts as foreground in prediction and reference
//! volumes. Tree lengths are measured in mm on each branch's (possibly
//! smoothed) points; membership is tested on the branch's skeleton voxels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::tree::{parse_pipeline, step_length, AirwayTree, AnatomicalLabel, ParseParams};
use crate::volume::{check_dims, VoxelGrid};

fn overlap_counts(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<[f64; 3]> {
    check_dims(pred.dims(), gt.dims())?;
    let (p, g) = (pred.values(), gt.values());
    Ok(exec::sum_n(p.len(), |i| {
        let a = p[i] != 0.0;
        let b = g[i] != 0.0;
        [f64::from(u8::from(a && b)), f64::from(u8::from(a)), f64::from(u8::from(b))]
    }))
}

/// 2|P∩G| / (|P| + |G|); 1 when both are empty.
pub fn dsc(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<f64> {
    let [both, p, g] = overlap_counts(pred, gt)?;
    if p + g == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * both / (p + g))
}

/// |P∩G| / |P|; 1 when the prediction is empty.
pub fn precision(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<f64> {
    let [both, p, _] = overlap_counts(pred, gt)?;
    if p == 0.0 {
        return Ok(1.0);
    }
    Ok(both / p)
}

/// Coverage of one reference branch by a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchCoverage {
    pub branch_id: usize,
    pub total_mm: f64,
    pub detected_mm: f64,
    /// `detected_mm / total_mm`; for a single-point branch, 1 if that point
    /// is predicted and 0 otherwise.
    pub fraction: f64,
}

/// Per-branch detected length: the mm steps whose two endpoints are both
/// inside `pred`.
pub fn branch_coverage(tree: &AirwayTree, pred: &VoxelGrid) -> Result<Vec<BranchCoverage>> {
    check_dims(tree.dims(), pred.dims())?;
    let spacing = tree.spacing();
    Ok(tree
        .branches()
        .iter()
        .map(|b| {
            let hit: Vec<bool> = b.centerline.iter().map(|&c| pred.is_set_at(c)).collect();
            let mut total = 0.0;
            let mut detected = 0.0;
            for k in 1..b.points.len() {
                let step = step_length(b.points[k - 1], b.points[k], spacing);
                total += step;
                if hit[k - 1] && hit[k] {
                    detected += step;
                }
            }
            let fraction = if total > 0.0 {
                detected / total
            } else {
                f64::from(u8::from(hit.iter().all(|&h| h)))
            };
            BranchCoverage {
                branch_id: b.id,
                total_mm: total,
                detected_mm: detected,
                fraction,
            }
        })
        .collect())
}

/// Pooled detected length over pooled total length of the selected branches.
fn pooled_td<'a>(cov: impl Iterator<Item = &'a BranchCoverage> + Clone) -> Option<f64> {
    let n = cov.clone().count();
    if n == 0 {
        return None;
    }
    let total: f64 = cov.clone().map(|c| c.total_mm).sum();
    if total > 0.0 {
        Some(cov.map(|c| c.detected_mm).sum::<f64>() / total)
    } else {
        Some(cov.map(|c| c.fraction).sum::<f64>() / n as f64)
    }
}

/// Tree-length detected rate plus the per-branch fractions.
pub fn tree_length_detected(tree: &AirwayTree, pred: &VoxelGrid) -> Result<(f64, Vec<f64>)> {
    let cov = branch_coverage(tree, pred)?;
    let td = pooled_td(cov.iter()).unwrap_or(0.0);
    Ok((td, cov.iter().map(|c| c.fraction).collect()))
}

/// Per-branch detection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdParams {
    /// A branch counts as detected when its covered length fraction is at
    /// least this.
    pub branch_detect_threshold: f64,
}

impl Default for BdParams {
    fn default() -> Self {
        BdParams {
            branch_detect_threshold: 0.8,
        }
    }
}

impl BdParams {
    pub fn validate(&self) -> Result<()> {
        let t = self.branch_detect_threshold;
        if t > 0.0 && t <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "branch_detect_threshold must be in (0, 1], got {t}"
            )))
        }
    }

    fn detected(&self, fraction: f64) -> bool {
        fraction >= self.branch_detect_threshold
    }
}

fn pooled_bd<'a>(cov: impl Iterator<Item = &'a BranchCoverage>, params: &BdParams) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for c in cov {
        n += 1;
        hit += usize::from(params.detected(c.fraction));
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Branch detected rate plus the per-branch detection flags.
pub fn branch_detected(
    tree: &AirwayTree,
    pred: &VoxelGrid,
    params: &BdParams,
) -> Result<(f64, Vec<bool>)> {
    params.validate()?;
    let cov = branch_coverage(tree, pred)?;
    let bd = pooled_bd(cov.iter(), params).unwrap_or(0.0);
    Ok((bd, cov.iter().map(|c| params.detected(c.fraction)).collect()))
}

/// TD and BD restricted to the large and small airway classes; `None` when
/// the class has no branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hierarchical {
    pub td_large: Option<f64>,
    pub bd_large: Option<f64>,
    pub td_small: Option<f64>,
    pub bd_small: Option<f64>,
}

pub fn hierarchical_metrics(
    tree: &AirwayTree,
    pred: &VoxelGrid,
    params: &BdParams,
) -> Result<Hierarchical> {
    params.validate()?;
    if !tree.is_labeled() {
        return Err(Error::UnlabeledTree);
    }
    let cov = branch_coverage(tree, pred)?;
    Ok(hierarchical_from(tree, &cov, params))
}

fn hierarchical_from(tree: &AirwayTree, cov: &[BranchCoverage], params: &BdParams) -> Hierarchical {
    let class = |pick: fn(AnatomicalLabel) -> bool| {
        cov.iter()
            .filter(move |c| pick(tree.branches()[c.branch_id].label))
    };
    Hierarchical {
        td_large: pooled_td(class(AnatomicalLabel::is_large)),
        bd_large: pooled_bd(class(AnatomicalLabel::is_large), params),
        td_small: pooled_td(class(AnatomicalLabel::is_small)),
        bd_small: pooled_bd(class(AnatomicalLabel::is_small), params),
    }
}

/// 0.3·td + 0.3·bd + 0.2·dsc + 0.2·pre.
///
/// Inputs may be fractions or percentages (the result has the same scale);
/// anything outside [0, 100] or non-finite is rejected.
pub fn weighted_mean_score(td: f64, bd: f64, dsc: f64, pre: f64) -> Result<f64> {
    for (name, v) in [("td", td), ("bd", bd), ("dsc", dsc), ("pre", pre)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} = {v} is outside [0, 100]")));
        }
    }
    Ok(0.3 * td + 0.3 * bd + 0.2 * dsc + 0.2 * pre)
}

/// Per-branch entry of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub branch_id: usize,
    pub label: AnatomicalLabel,
    pub detected_fraction: f64,
    pub detected: bool,
}

/// All metrics for one prediction against one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub td: f64,
    pub bd: f64,
    pub dsc: f64,
    pub pre: f64,
    pub td_large: Option<f64>,
    pub bd_large: Option<f64>,
    pub td_small: Option<f64>,
    pub bd_small: Option<f64>,
    pub wms: f64,
    pub per_branch: Vec<BranchReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalParams {
    pub bd: BdParams,
    pub parse: ParseParams,
}

/// Parses `gt` into a tree and scores `pred` against it.
pub fn evaluate_case(pred: &VoxelGrid, gt: &VoxelGrid, params: &EvalParams) -> Result<EvalReport> {
    check_dims(pred.dims(), gt.dims())?;
    let gt_bin = gt.binarized(0.0);
    let tree = parse_pipeline(&gt_bin, &params.parse)?;
    evaluate_with_tree(pred, gt, &tree, &params.bd)
}

/// [`evaluate_case`] against an already parsed, labelled reference tree.
pub fn evaluate_with_tree(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    tree: &AirwayTree,
    params: &BdParams,
) -> Result<EvalReport> {
    params.validate()?;
    if !tree.is_labeled() {
        return Err(Error::UnlabeledTree);
    }
    let dsc = dsc(pred, gt)?;
    let pre = precision(pred, gt)?;
    let cov = branch_coverage(tree, pred)?;
    let td = pooled_td(cov.iter()).unwrap_or(0.0);
    let bd = pooled_bd(cov.iter(), params).unwrap_or(0.0);
    let h = hierarchical_from(tree, &cov, params);
    let per_branch = cov
        .iter()
        .map(|c| BranchReport {
            branch_id: c.branch_id,
            label: tree.branches()[c.branch_id].label,
            detected_fraction: c.fraction,
            detected: params.detected(c.fraction),
        })
        .collect();
    Ok(EvalReport {
        td,
        bd,
        dsc,
        pre,
        td_large: h.td_large,
        bd_large: h.bd_large,
        td_small: h.td_small,
        bd_small: h.bd_small,
        wms: weighted_mean_score(td, bd, dsc, pre)?,
        per_branch,
    })
}

/// Mean and sample standard deviation of one metric across cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Cases that reported this metric.
    pub n: usize,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd {
            mean,
            std,
            n: xs.len(),
        })
    }
}

/// Mean ± std for every scalar field of a set of reports, keyed by field
/// name. Class metrics are averaged over the cases where they exist.
pub fn aggregate(reports: &[EvalReport]) -> BTreeMap<String, MeanStd> {
    type Get = fn(&EvalReport) -> Option<f64>;
    let fields: [(&str, Get); 9] = [
        ("td", |r| Some(r.td)),
        ("bd", |r| Some(r.bd)),
        ("dsc", |r| Some(r.dsc)),
        ("pre", |r| Some(r.pre)),
        ("td_large", |r| r.td_large),
        ("bd_large", |r| r.bd_large),
        ("td_small", |r| r.td_small),
        ("bd_small", |r| r.bd_small),
        ("wms", |r| Some(r.wms)),
    ];
    fields
        .iter()
        .filter_map(|(name, get)| {
            let xs: Vec<f64> = reports.iter().filter_map(get).collect();
            MeanStd::of(&xs).map(|m| (name.to_string(), m))
        })
        .collect()
}
