//! Region losses, their weight fields and analytic gradients.
//!
//! The volume-level functions take [`VoxelGrid`]s and check dims and kinds;
//! the arithmetic lives in [`dense`], which works on plain `f64` slices so
//! gradients can be checked at full precision. Sums are order-fixed (see
//! [`exec::sum_n`]), so results do not depend on thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::morphology::{distance_to_points, feature_transform};
use crate::skeleton::{BreakageSet, SkeletonPointSet};
use crate::tree::AirwayTree;
use crate::volume::{check_dims, Dims, VolumeKind, VoxelGrid, OFFSETS_26};

/// Exponent and error weights of the general union loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GulParams {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GulParams {
    fn default() -> Self {
        GulParams {
            gamma: 0.7,
            alpha: 0.2,
            beta: 0.8,
        }
    }
}

impl GulParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma > 0.0 && self.gamma <= 1.0 && self.alpha > 0.0 && self.beta > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "GUL needs gamma in (0, 1] and alpha, beta > 0, got {self:?}"
            )))
        }
    }
}

/// Branch-size weighting: `clamp((V_max / V_b)^kappa, 1, cap)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalWeightParams {
    pub kappa: f64,
    pub cap: f64,
}

impl Default for LocalWeightParams {
    fn default() -> Self {
        LocalWeightParams {
            kappa: 0.5,
            cap: 8.0,
        }
    }
}

impl LocalWeightParams {
    pub fn validate(&self) -> Result<()> {
        if self.kappa >= 0.0 && self.cap >= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "local weights need kappa >= 0 and cap >= 1, got {self:?}"
            )))
        }
    }
}

/// Centerline-distance weighting with breakage emphasis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterlineParams {
    /// Cap `K` on the breakage term.
    pub k_cap: f64,
    /// Clamp the breakage term `min(1 - d, K)` at zero from below.
    pub eta_term_clamped_nonneg: bool,
    /// Breakage points are grown by this many voxels (3×3×3 steps) to get the
    /// voxels flagged as breakage-inducing.
    pub eta_dilation: usize,
}

impl Default for CenterlineParams {
    fn default() -> Self {
        CenterlineParams {
            k_cap: 2.0,
            eta_term_clamped_nonneg: true,
            eta_dilation: 1,
        }
    }
}

impl CenterlineParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_cap > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("k_cap must be > 0, got {}", self.k_cap)))
        }
    }
}

/// Per-voxel weights: `w = w_l + w_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    pub w_l: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w: Vec<f64>,
}

impl WeightField {
    pub fn new(w_l: Vec<f64>, w_c: Vec<f64>) -> Result<Self> {
        if w_l.len() != w_c.len() {
            return Err(Error::InvalidParams(format!(
                "weight fields differ in length: {} vs {}",
                w_l.len(),
                w_c.len()
            )));
        }
        let w = w_l.iter().zip(&w_c).map(|(a, b)| a + b).collect();
        Ok(WeightField { w_l, w_c, w })
    }
}

/// Slice-level loss values and gradients.
///
/// Probabilities `p` and labels `g` are aligned per voxel; weights likewise.
/// Degenerate quotients (zero denominator) evaluate to a loss of 0 with a
/// zero gradient.
pub mod dense {
    use super::*;

    /// `1 - 2Σpg / Σ(p + g)`.
    pub fn dice(p: &[f64], g: &[f64]) -> f64 {
        let [inter, sum] = exec::sum_n(p.len(), |i| [p[i] * g[i], p[i] + g[i]]);
        if sum == 0.0 {
            return 0.0;
        }
        1.0 - 2.0 * inter / sum
    }

    pub fn dice_gradient(p: &[f64], g: &[f64]) -> Vec<f64> {
        let [inter, sum] = exec::sum_n(p.len(), |i| [p[i] * g[i], p[i] + g[i]]);
        if sum == 0.0 {
            return vec![0.0; p.len()];
        }
        exec::map_indexed(p.len(), |i| -(2.0 * g[i] * sum - 2.0 * inter) / (sum * sum))
    }

    fn gul_sums(p: &[f64], g: &[f64], w: &[f64], prm: &GulParams) -> [f64; 2] {
        exec::sum_n(p.len(), |i| {
            let a = if g[i] == 0.0 { 0.0 } else { w[i] * p[i].powf(prm.gamma) * g[i] };
            [a, w[i] * (prm.alpha * p[i] + prm.beta * g[i])]
        })
    }

    /// `1 - Σ w p^γ g / Σ w (α p + β g)`.
    pub fn gul(p: &[f64], g: &[f64], w: &[f64], prm: &GulParams) -> f64 {
        let [a, b] = gul_sums(p, g, w, prm);
        if b == 0.0 {
            return 0.0;
        }
        1.0 - a / b
    }

    /// Fails with [`Error::SingularPoint`] at a voxel with `p = 0` and
    /// `w·g > 0` when `γ < 1`, where `d(p^γ)/dp` is unbounded.
    pub fn gul_gradient(p: &[f64], g: &[f64], w: &[f64], prm: &GulParams) -> Result<Vec<f64>> {
        if prm.gamma < 1.0 {
            if let Some(index) = (0..p.len()).find(|&i| p[i] == 0.0 && w[i] * g[i] > 0.0) {
                return Err(Error::SingularPoint { index });
            }
        }
        let [a, b] = gul_sums(p, g, w, prm);
        if b == 0.0 {
            return Ok(vec![0.0; p.len()]);
        }
        Ok(exec::map_indexed(p.len(), |i| {
            let da = if w[i] * g[i] == 0.0 {
                0.0
            } else {
                w[i] * prm.gamma * p[i].powf(prm.gamma - 1.0) * g[i]
            };
            let db = w[i] * prm.alpha;
            -(da * b - a * db) / (b * b)
        }))
    }

    fn atrl_sums(p: &[f64], g: &[f64], w: &[f64], support: &[usize]) -> [f64; 2] {
        exec::sum_n(support.len(), |k| {
            let i = support[k];
            [w[i] * p[i] * g[i], w[i] * (p[i] + g[i])]
        })
    }

    /// `1 - Σ_C w p g / Σ_C w (p + g)` over the voxel indices in `support`.
    pub fn atrl(p: &[f64], g: &[f64], w: &[f64], support: &[usize]) -> f64 {
        let [a, b] = atrl_sums(p, g, w, support);
        if b == 0.0 {
            return 0.0;
        }
        1.0 - a / b
    }

    /// Zero everywhere outside `support`.
    pub fn atrl_gradient(p: &[f64], g: &[f64], w: &[f64], support: &[usize]) -> Vec<f64> {
        let mut grad = vec![0.0; p.len()];
        let [a, b] = atrl_sums(p, g, w, support);
        if b == 0.0 {
            return grad;
        }
        for &i in support {
            grad[i] = -(w[i] * g[i] * b - a * w[i]) / (b * b);
        }
        grad
    }

    /// Centerline weight of one voxel at distance `d` from the centerline.
    ///
    /// `(1 - d/d_max)^2 + η·min(1 - d, K)`, with the first term taken as 1
    /// when `d_max = 0` and the second clamped at 0 when requested.
    pub fn centerline_weight(d: f64, d_max: f64, eta: bool, prm: &CenterlineParams) -> f64 {
        let base = if d_max > 0.0 { (1.0 - d / d_max).powi(2) } else { 1.0 };
        if !eta {
            return base;
        }
        let mut term = (1.0 - d).min(prm.k_cap);
        if prm.eta_term_clamped_nonneg {
            term = term.max(0.0);
        }
        base + term
    }
}

fn as_f64(grid: &VoxelGrid) -> Vec<f64> {
    grid.values().iter().map(|&v| f64::from(v)).collect()
}

fn labels(grid: &VoxelGrid) -> Vec<f64> {
    grid.values()
        .iter()
        .map(|&v| if v != 0.0 { 1.0 } else { 0.0 })
        .collect()
}

fn check_pair(p: &VoxelGrid, g: &VoxelGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(p.dims(), g.dims())?;
    if p.kind() == VolumeKind::Intensity {
        return Err(Error::InvalidVolume(
            "loss inputs must be probabilities, got an Intensity volume".into(),
        ));
    }
    Ok((as_f64(p), labels(g)))
}

fn check_len(w: &[f64], dims: Dims) -> Result<()> {
    if w.len() == dims.len() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "weight field has {} entries for {} voxels",
            w.len(),
            dims.len()
        )))
    }
}

fn support_of(centerline: &SkeletonPointSet, dims: Dims) -> Result<Vec<usize>> {
    check_dims(centerline.dims(), dims)?;
    if centerline.is_empty() {
        return Err(Error::EmptyCenterline);
    }
    let mut idx: Vec<usize> = centerline.points().iter().map(|&c| dims.index(c)).collect();
    idx.sort_unstable();
    Ok(idx)
}

pub fn dice_loss(p: &VoxelGrid, g: &VoxelGrid) -> Result<f64> {
    let (p, g) = check_pair(p, g)?;
    Ok(dense::dice(&p, &g))
}

pub fn gul(p: &VoxelGrid, g: &VoxelGrid, w_l: &[f64], params: &GulParams) -> Result<f64> {
    params.validate()?;
    let (pv, gv) = check_pair(p, g)?;
    check_len(w_l, p.dims())?;
    Ok(dense::gul(&pv, &gv, w_l, params))
}

pub fn atrl(
    p: &VoxelGrid,
    g: &VoxelGrid,
    centerline: &SkeletonPointSet,
    w: &WeightField,
) -> Result<f64> {
    let (pv, gv) = check_pair(p, g)?;
    check_len(&w.w, p.dims())?;
    let support = support_of(centerline, p.dims())?;
    Ok(dense::atrl(&pv, &gv, &w.w, &support))
}

/// GUL with `w_l` plus ATRL with `w`.
pub fn stage3_loss(
    p: &VoxelGrid,
    g: &VoxelGrid,
    w_l: &[f64],
    centerline: &SkeletonPointSet,
    w: &WeightField,
    params: &GulParams,
) -> Result<f64> {
    Ok(gul(p, g, w_l, params)? + atrl(p, g, centerline, w)?)
}

pub fn dice_gradient(p: &VoxelGrid, g: &VoxelGrid) -> Result<Vec<f64>> {
    let (p, g) = check_pair(p, g)?;
    Ok(dense::dice_gradient(&p, &g))
}

pub fn gul_gradient(
    p: &VoxelGrid,
    g: &VoxelGrid,
    w_l: &[f64],
    params: &GulParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let (pv, gv) = check_pair(p, g)?;
    check_len(w_l, p.dims())?;
    dense::gul_gradient(&pv, &gv, w_l, params)
}

pub fn atrl_gradient(
    p: &VoxelGrid,
    g: &VoxelGrid,
    centerline: &SkeletonPointSet,
    w: &WeightField,
) -> Result<Vec<f64>> {
    let (pv, gv) = check_pair(p, g)?;
    check_len(&w.w, p.dims())?;
    let support = support_of(centerline, p.dims())?;
    Ok(dense::atrl_gradient(&pv, &gv, &w.w, &support))
}

/// Branch-size weights: every foreground voxel joins the branch owning its
/// nearest centerline voxel (a voxel shared by several branches belongs to
/// the lowest id), then gets `clamp((V_max / V_b)^kappa, 1, cap)`.
/// Background voxels get 1.
///
/// Fails with [`Error::UnparsedTree`] if a tree centerline voxel lies outside
/// the mask, i.e. the tree was not parsed from `g`.
pub fn local_imbalance_weights(
    g: &VoxelGrid,
    tree: &AirwayTree,
    params: &LocalWeightParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let dims = g.dims();
    check_dims(tree.dims(), dims)?;
    let mut owner = vec![u32::MAX; dims.len()];
    for b in tree.branches() {
        for &c in &b.centerline {
            if !g.is_set_at(c) {
                return Err(Error::UnparsedTree(c));
            }
            let i = dims.index(c);
            owner[i] = owner[i].min(b.id as u32);
        }
    }
    let is_site: Vec<bool> = owner.iter().map(|&o| o != u32::MAX).collect();
    let ft = feature_transform(dims, &is_site)?;
    let branch_of = |i: usize| owner[ft.nearest(i)] as usize;

    let mut volume = vec![0usize; tree.len()];
    for i in 0..dims.len() {
        if g.is_set(i) {
            volume[branch_of(i)] += 1;
        }
    }
    let v_max = *volume.iter().max().unwrap_or(&0) as f64;
    let weight: Vec<f64> = volume
        .iter()
        .map(|&v| {
            if v == 0 {
                1.0
            } else {
                (v_max / v as f64).powf(params.kappa).clamp(1.0, params.cap)
            }
        })
        .collect();
    Ok(exec::map_indexed(dims.len(), |i| {
        if g.is_set(i) {
            weight[branch_of(i)]
        } else {
            1.0
        }
    }))
}

/// Voxels within `steps` 26-neighbourhood steps of `points`.
pub fn dilate_points(dims: Dims, points: &[crate::volume::Coord], steps: usize) -> Vec<bool> {
    let mut on = vec![false; dims.len()];
    let mut frontier: Vec<usize> = points.iter().map(|&c| dims.index(c)).collect();
    for &i in &frontier {
        on[i] = true;
    }
    for _ in 0..steps {
        let mut next = Vec::new();
        for &i in &frontier {
            let [z, y, x] = dims.coord(i);
            for [dz, dy, dx] in OFFSETS_26 {
                let c = [z as isize + dz, y as isize + dy, x as isize + dx];
                if let Some(j) = dims.checked_index(c) {
                    if !on[j] {
                        on[j] = true;
                        next.push(j);
                    }
                }
            }
        }
        frontier = next;
    }
    on
}

/// Centerline-distance weights on the foreground of `g`; 0 on background.
///
/// `d` is the Euclidean voxel distance to the nearest centerline point and
/// `d_max` its maximum over the foreground. The breakage indicator is the
/// breakage point set grown by `eta_dilation` voxels.
pub fn centerline_weights(
    g: &VoxelGrid,
    centerline: &SkeletonPointSet,
    breakages: &BreakageSet,
    params: &CenterlineParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let dims = g.dims();
    check_dims(centerline.dims(), dims)?;
    if centerline.is_empty() {
        return Err(Error::EmptyCenterline);
    }
    let d = distance_to_points(dims, centerline.points())?;
    let d = d.values();
    let d_max = (0..dims.len())
        .filter(|&i| g.is_set(i))
        .map(|i| d[i])
        .fold(0.0, f64::max);
    let eta = dilate_points(dims, &breakages.breakage_points, params.eta_dilation);
    Ok(exec::map_indexed(dims.len(), |i| {
        if g.is_set(i) {
            dense::centerline_weight(d[i], d_max, eta[i], params)
        } else {
            0.0
        }
    }))
}

/// `w_l` and `w_c` for a reference mask, its tree and its centerline.
pub fn weight_field(
    g: &VoxelGrid,
    tree: &AirwayTree,
    centerline: &SkeletonPointSet,
    breakages: &BreakageSet,
    local: &LocalWeightParams,
    cl: &CenterlineParams,
) -> Result<WeightField> {
    WeightField::new(
        local_imbalance_weights(g, tree, local)?,
        centerline_weights(g, centerline, breakages, cl)?,
    )
}
