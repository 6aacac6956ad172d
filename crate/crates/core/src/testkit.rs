//! Synthetic airway trees with exact ground truth.
//!
//! A tree is a set of tubes around straight (optionally bent) axes: a voxel
//! is foreground iff its centre lies within the branch radius of the axis.
//! The generator keeps its own branch list, generations, labels and
//! rasterised axis voxels, which serve as oracles for parsing, metrics and
//! breakage detection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::morphology::distance_to_points;
use crate::skeleton::SkeletonPointSet;
use crate::tree::{AirwayTree, AnatomicalLabel, Branch};
use crate::volume::{Coord, Dims, VolumeKind, VoxelGrid};

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Two unit vectors completing `d` to an orthonormal frame.
fn frame(d: Vec3) -> (Vec3, Vec3) {
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = unit(cross(d, helper));
    (u, cross(d, u))
}

/// Distance from `p` to segment `ab` and the arc position of the closest
/// point along it.
fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> (f64, f64) {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 == 0.0 {
        0.0
    } else {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    };
    (norm(sub(p, add(a, scale(ab, t)))), t * len2.sqrt())
}

/// Closest distance between segments `ab` and `cd`.
fn segment_segment(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    // coarse sampling refined by point-segment distance; adequate for the
    // clearance checks here
    let n = 32;
    let mut best = f64::INFINITY;
    for k in 0..=n {
        let t = k as f64 / n as f64;
        best = best.min(segment_distance(add(a, scale(sub(b, a), t)), c, d).0);
        best = best.min(segment_distance(add(c, scale(sub(d, c), t)), a, b).0);
    }
    best
}

/// Axis of one generated branch, in continuous voxel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchAxis {
    pub parent: Option<usize>,
    /// Polyline from the proximal to the distal end.
    pub polyline: Vec<Vec3>,
    pub radius: f64,
}

impl BranchAxis {
    pub fn straight(parent: Option<usize>, start: Vec3, end: Vec3, radius: f64) -> Self {
        BranchAxis {
            parent,
            polyline: vec![start, end],
            radius,
        }
    }

    pub fn length(&self) -> f64 {
        self.polyline.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
    }

    /// Distance from `p` to the axis and the arc length of the closest point.
    pub fn distance(&self, p: Vec3) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        let mut walked = 0.0;
        for w in self.polyline.windows(2) {
            let (d, s) = segment_distance(p, w[0], w[1]);
            if d < best.0 {
                best = (d, walked + s);
            }
            walked += norm(sub(w[1], w[0]));
        }
        best
    }

    fn end(&self) -> Vec3 {
        *self.polyline.last().unwrap()
    }

    fn translated(&self, by: Vec3) -> Self {
        BranchAxis {
            parent: self.parent,
            polyline: self.polyline.iter().map(|&p| add(p, by)).collect(),
            radius: self.radius,
        }
    }
}

/// Parameters of a generated tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    /// Depth `G`: the deepest branches have generation `G`.
    pub generations: usize,
    pub branching_factor: usize,
    /// Branch id (breadth-first) that splits into three instead.
    #[serde(default)]
    pub trifurcation_at: Option<usize>,
    pub root_radius_vox: f64,
    pub radius_decay: f64,
    /// Axis length per generation, `G + 1` entries.
    pub branch_length_vox: Vec<f64>,
    pub branch_angle_deg: f64,
    /// Sideways bow of each axis as a fraction of its length (0 = straight).
    #[serde(default)]
    pub curvature: f64,
    /// Volume size; `None` fits the volume to the tree with a margin.
    #[serde(default)]
    pub dims: Option<Dims>,
    pub spacing: [f64; 3],
    pub seed: u64,
}

/// Clearance kept between tubes that do not touch by construction, and
/// between tubes and the volume border.
const CLEARANCE: f64 = 3.0;
const MAX_ATTEMPTS: usize = 400;

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            generations: 3,
            branching_factor: 2,
            trifurcation_at: None,
            root_radius_vox: 5.0,
            radius_decay: 0.72,
            branch_length_vox: vec![36.0, 28.0, 22.0, 18.0],
            branch_angle_deg: 35.0,
            curvature: 0.0,
            dims: None,
            spacing: [1.0; 3],
            seed: 0,
        }
    }
}

impl TreeSpec {
    /// A straight bifurcating tree of depth `generations` with lengths,
    /// radii and angle drawn from `seed`.
    pub fn randomized(generations: usize, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_3e5d);
        let root_radius_vox = r.random_range(4.5..6.0);
        let radius_decay = r.random_range(0.70..0.78);
        let mut len = r.random_range(30.0..40.0);
        let mut branch_length_vox = Vec::new();
        for _ in 0..=generations {
            branch_length_vox.push(f64::round(len));
            len *= r.random_range(0.75..0.85);
            len = len.max(14.0);
        }
        TreeSpec {
            generations,
            root_radius_vox,
            radius_decay,
            branch_length_vox,
            branch_angle_deg: r.random_range(30.0..42.0),
            seed,
            ..TreeSpec::default()
        }
    }

    pub fn radius_at(&self, generation: usize) -> f64 {
        self.root_radius_vox * self.radius_decay.powi(generation as i32)
    }

    /// Number of branches the spec produces.
    pub fn branch_count(&self) -> usize {
        let mut total = 1;
        let mut level = 1;
        for _ in 0..self.generations {
            level *= self.branching_factor;
            total += level;
        }
        if let Some(t) = self.trifurcation_at {
            if t < total - level {
                total += self.subtree_size_below(t);
            }
        }
        total
    }

    /// Extra branches caused by one node gaining a third child: that child
    /// and its full subtree.
    fn subtree_size_below(&self, id: usize) -> usize {
        let depth = self.depth_of(id);
        let mut total = 0;
        let mut level = 1;
        for _ in depth + 1..=self.generations {
            total += level;
            level *= self.branching_factor;
        }
        total
    }

    fn depth_of(&self, id: usize) -> usize {
        let (mut first, mut level, mut depth) = (0, 1, 0);
        while id >= first + level {
            first += level;
            level *= self.branching_factor;
            depth += 1;
        }
        depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(format!("tree spec: {m}")));
        if !(2..=3).contains(&self.branching_factor) {
            return bad(format!("branching_factor must be 2 or 3, got {}", self.branching_factor));
        }
        if self.branch_length_vox.len() != self.generations + 1 {
            return bad(format!(
                "branch_length_vox needs {} entries, got {}",
                self.generations + 1,
                self.branch_length_vox.len()
            ));
        }
        if self.branch_length_vox.iter().any(|&l| !(l >= 4.0)) {
            return bad("branch lengths must be >= 4 voxels".into());
        }
        if !(self.radius_decay > 0.0 && self.radius_decay < 1.0) {
            return bad("radius_decay must be in (0, 1)".into());
        }
        if !(self.radius_at(self.generations) >= 1.0) {
            return bad(format!(
                "radius at generation {} is {:.3} < 1 voxel",
                self.generations,
                self.radius_at(self.generations)
            ));
        }
        if !(self.branch_angle_deg > 0.0 && self.branch_angle_deg < 90.0) {
            return bad("branch_angle_deg must be in (0, 90)".into());
        }
        if !self.curvature.is_finite() || self.curvature.abs() > 0.5 {
            return bad("curvature must be within [-0.5, 0.5]".into());
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("bad spacing {:?}", self.spacing));
        }
        if self.generations > 8 {
            return bad("at most 8 generations".into());
        }
        Ok(())
    }
}

/// Generated mask together with its exact tree and centreline.
#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub mask: VoxelGrid,
    pub tree: AirwayTree,
    pub centerline: SkeletonPointSet,
    pub axes: Vec<BranchAxis>,
}

fn bowed(start: Vec3, end: Vec3, side: Vec3, curvature: f64) -> Vec<Vec3> {
    if curvature == 0.0 {
        return vec![start, end];
    }
    let len = norm(sub(end, start));
    let mid = add(scale(add(start, end), 0.5), scale(side, curvature * len));
    let n = 8;
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let a = scale(start, (1.0 - t) * (1.0 - t));
            let b = scale(mid, 2.0 * t * (1.0 - t));
            let c = scale(end, t * t);
            add(add(a, b), c)
        })
        .collect()
}

/// Branch axes in breadth-first order, or `None` if the drawn azimuths make
/// unrelated tubes come too close.
fn draw_axes(spec: &TreeSpec, rng: &mut ChaCha8Rng) -> Option<Vec<BranchAxis>> {
    let theta = spec.branch_angle_deg.to_radians();
    let root_dir = [-1.0, 0.0, 0.0];
    let mut axes = vec![BranchAxis {
        parent: None,
        polyline: bowed(
            [0.0; 3],
            scale(root_dir, spec.branch_length_vox[0]).map(f64::round),
            frame(root_dir).0,
            spec.curvature,
        ),
        radius: spec.radius_at(0),
    }];
    let mut generation = vec![0usize];
    let mut plane = vec![rng.random_range(0.0..std::f64::consts::TAU)];
    let mut k = 0;
    while k < axes.len() {
        let g = generation[k];
        if g < spec.generations {
            let n = if spec.trifurcation_at == Some(k) { 3 } else { spec.branching_factor };
            let d = unit(sub(axes[k].end(), axes[k].polyline[axes[k].polyline.len() - 2]));
            let (u, v) = frame(d);
            let phi0 = plane[k] + std::f64::consts::FRAC_PI_2 + rng.random_range(-0.35..0.35);
            for j in 0..n {
                let phi = phi0 + j as f64 * std::f64::consts::TAU / n as f64;
                let side = add(scale(u, phi.cos()), scale(v, phi.sin()));
                let dir = add(scale(d, theta.cos()), scale(side, theta.sin()));
                let start = axes[k].end();
                // junctions sit on voxel centres so child rasters never step
                // back into the parent
                let end = add(start, scale(dir, spec.branch_length_vox[g + 1])).map(f64::round);
                let (bu, _) = frame(dir);
                axes.push(BranchAxis {
                    parent: Some(k),
                    polyline: bowed(start, end, bu, spec.curvature),
                    radius: spec.radius_at(g + 1),
                });
                generation.push(g + 1);
                plane.push(phi0);
            }
        }
        k += 1;
    }
    let touching = |a: usize, b: usize| {
        axes[a].parent == Some(b) || axes[b].parent == Some(a) || axes[a].parent == axes[b].parent
    };
    for a in 0..axes.len() {
        for b in a + 1..axes.len() {
            if touching(a, b) {
                continue;
            }
            let need = axes[a].radius + axes[b].radius + CLEARANCE;
            for sa in axes[a].polyline.windows(2) {
                for sb in axes[b].polyline.windows(2) {
                    if segment_segment(sa[0], sa[1], sb[0], sb[1]) < need {
                        return None;
                    }
                }
            }
        }
    }
    Some(axes)
}

/// Builds a tree, drawing branch orientations until unrelated tubes keep
/// their clearance. Deterministic in `spec.seed`.
pub fn generate(spec: &TreeSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let axes = (0..MAX_ATTEMPTS)
        .find_map(|_| draw_axes(spec, &mut rng))
        .ok_or_else(|| {
            Error::SpecDoesNotFit(format!(
                "no collision-free layout in {MAX_ATTEMPTS} attempts"
            ))
        })?;

    // bounding box of all tubes
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for a in &axes {
        for p in &a.polyline {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k] - a.radius);
                hi[k] = hi[k].max(p[k] + a.radius);
            }
        }
    }
    let margin = CLEARANCE;
    let (dims, shift) = match spec.dims {
        None => {
            let size = [0, 1, 2].map(|k| (hi[k] - lo[k] + 2.0 * margin).ceil() as usize + 1);
            let shift = [0, 1, 2].map(|k| (margin - lo[k]).round());
            (Dims::new(size[0], size[1], size[2]), shift)
        }
        Some(d) => {
            let size = d.to_array();
            // root at the top centre
            let shift = [
                size[0] as f64 - 1.0 - margin - hi[0],
                (size[1] as f64 - 1.0) / 2.0,
                (size[2] as f64 - 1.0) / 2.0,
            ]
            .map(f64::round);
            for k in 0..3 {
                if lo[k] + shift[k] < margin || hi[k] + shift[k] > size[k] as f64 - 1.0 - margin {
                    return Err(Error::SpecDoesNotFit(format!(
                        "tree extent {:.1} along axis {k} exceeds volume size {}",
                        hi[k] - lo[k],
                        size[k]
                    )));
                }
            }
            (d, shift)
        }
    };
    let axes: Vec<BranchAxis> = axes.iter().map(|a| a.translated(shift)).collect();
    from_axes(&axes, dims, spec.spacing)
}

fn round_coord(p: Vec3, dims: Dims) -> Option<Coord> {
    let c = p.map(|v| v.round());
    if c.iter().any(|&v| v < 0.0) {
        return None;
    }
    let c = c.map(|v| v as usize);
    dims.contains(c).then_some(c)
}

/// Voxels along a polyline, consecutive ones 26-adjacent, no repeats in a
/// row.
fn rasterize_axis(polyline: &[Vec3], dims: Dims) -> Result<Vec<Coord>> {
    let mut out: Vec<Coord> = Vec::new();
    for w in polyline.windows(2) {
        let len = norm(sub(w[1], w[0]));
        let steps = (len / 0.2).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let p = add(w[0], scale(sub(w[1], w[0]), s as f64 / steps as f64));
            let c = round_coord(p, dims)
                .ok_or_else(|| Error::SpecDoesNotFit(format!("axis point {p:?} outside volume")))?;
            if out.last() != Some(&c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Rasterises arbitrary branch axes (breadth-first order, root first) into a
/// bundle. Generations are hop counts and labels follow them.
pub fn from_axes(axes: &[BranchAxis], dims: Dims, spacing: [f64; 3]) -> Result<GroundTruthBundle> {
    if axes.is_empty() || axes[0].parent.is_some() {
        return Err(Error::InvalidParams("first axis must be the root".into()));
    }
    for (i, a) in axes.iter().enumerate().skip(1) {
        match a.parent {
            Some(p) if p < i => {}
            _ => return Err(Error::InvalidParams(format!("axis {i} needs an earlier parent"))),
        }
    }

    // foreground: voxel centre within radius of some axis
    let plane = dims.height * dims.width;
    let mut fg = vec![false; dims.len()];
    exec::for_each_chunk_mut(&mut fg, plane, |z, slab| {
        for a in axes {
            let (zl, zh) = a
                .polyline
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[0]), h.max(p[0])));
            if (z as f64) < zl - a.radius || (z as f64) > zh + a.radius {
                continue;
            }
            let lo = [1, 2].map(|k| {
                a.polyline.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min) - a.radius
            });
            let hi = [1, 2].map(|k| {
                a.polyline.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) + a.radius
            });
            let y0 = lo[0].ceil().max(0.0) as usize;
            let y1 = (hi[0].floor().max(-1.0) as isize).min(dims.height as isize - 1);
            let x0 = lo[1].ceil().max(0.0) as usize;
            let x1 = (hi[1].floor().max(-1.0) as isize).min(dims.width as isize - 1);
            if y1 < 0 || x1 < 0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    if a.distance([z as f64, y as f64, x as f64]).0 <= a.radius {
                        slab[y * dims.width + x] = true;
                    }
                }
            }
        }
    });
    let mask = VoxelGrid::from_mask(dims, spacing, &fg);

    let mut lines = axes
        .iter()
        .map(|a| rasterize_axis(&a.polyline, dims))
        .collect::<Result<Vec<_>>>()?;
    for (i, line) in lines.iter().enumerate() {
        if let Some(&c) = line.iter().find(|&&c| !mask.is_set_at(c)) {
            return Err(Error::SpecDoesNotFit(format!(
                "axis voxel {c:?} of branch {i} falls outside its tube (radius too small)"
            )));
        }
    }
    // Sibling rasters usually leave the junction through the same voxel or
    // two; that shared run is recorded as the end of the parent so each
    // voxel belongs to one branch apart from the junction itself.
    for p in 0..axes.len() {
        let kids: Vec<usize> = (0..axes.len()).filter(|&k| axes[k].parent == Some(p)).collect();
        if kids.len() < 2 {
            continue;
        }
        let shortest = kids.iter().map(|&k| lines[k].len()).min().unwrap_or(0);
        let mut shared = 1;
        while shared + 2 < shortest && kids.iter().all(|&k| lines[k][shared] == lines[kids[0]][shared]) {
            shared += 1;
        }
        if shared > 1 {
            let run = lines[kids[0]][1..shared].to_vec();
            lines[p].extend(run);
            for &k in &kids {
                lines[k].drain(..shared - 1);
            }
        }
    }

    let mut depth = vec![0usize; axes.len()];
    let mut branches = Vec::with_capacity(axes.len());
    for (i, (a, centerline)) in axes.iter().zip(lines).enumerate() {
        let n = centerline.len();
        let mut b = Branch::new(i, a.parent, centerline, vec![a.radius; n], spacing);
        if let Some(p) = a.parent {
            depth[i] = depth[p] + 1;
            let prev: &mut Branch = &mut branches[p];
            prev.children.push(i);
        }
        b.generation = Some(depth[i]);
        b.label = AnatomicalLabel::for_generation(depth[i]);
        branches.push(b);
    }
    let tree = AirwayTree::new(branches, 0, spacing, dims)?;

    let mut points: Vec<Coord> = tree.branches().iter().flat_map(|b| b.centerline.clone()).collect();
    points.sort_unstable();
    points.dedup();
    let centerline = SkeletonPointSet::new(dims, spacing, points)?;
    Ok(GroundTruthBundle {
        mask,
        tree,
        centerline,
        axes: axes.to_vec(),
    })
}

/// What [`ablate_branch`] removes. A voxel belongs to a branch when it is
/// strictly nearer that branch's recorded centreline voxels than those of
/// every other branch; voxels on a shared junction voxel's tie stay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ablation {
    /// Every voxel of the branch.
    Whole,
    /// The branch's voxels whose axial position lies in `[start, start +
    /// len)`; must sit strictly inside the branch.
    InteriorGap { start: f64, len: f64 },
    /// The branch's voxels beyond axial position `length - len`, including
    /// the end cap.
    Tip { len: f64 },
}

/// Copy of the bundle mask with part of one branch removed.
pub fn ablate_branch(bundle: &GroundTruthBundle, branch: usize, mode: Ablation) -> Result<VoxelGrid> {
    let axis = bundle.axes.get(branch).ok_or(Error::BranchNotFound(branch))?;
    let length = axis.length();
    let gap_err = |len: f64| Error::GapTooLarge {
        branch,
        len: len.max(0.0).ceil() as usize,
    };
    let (from, to) = match mode {
        Ablation::Whole => (f64::NEG_INFINITY, f64::INFINITY),
        Ablation::InteriorGap { start, len } => {
            if !(start >= 1.0 && len > 0.0 && start + len <= length - 1.0) {
                return Err(gap_err(len));
            }
            (start, start + len)
        }
        Ablation::Tip { len } => {
            if !(len > 0.0 && len < length) {
                return Err(gap_err(len));
            }
            (length - len, f64::INFINITY)
        }
    };
    let mask = &bundle.mask;
    let dims = mask.dims();
    let branches = bundle.tree.branches();
    let own = distance_to_points(dims, &branches[branch].centerline)?;
    let others: Vec<Coord> = branches
        .iter()
        .filter(|b| b.id != branch)
        .flat_map(|b| b.centerline.iter().copied())
        .collect();
    let others = if others.is_empty() {
        None
    } else {
        Some(distance_to_points(dims, &others)?)
    };
    let values = exec::map_indexed(dims.len(), |i| {
        if !mask.is_set(i) {
            return 0.0f32;
        }
        let mine = others.as_ref().is_none_or(|o| own.values()[i] < o.values()[i]);
        let hit = mine && {
            let p = dims.coord(i).map(|v| v as f64);
            // the arc position is clamped to the axis, so the distal cap
            // projects onto its end
            let s = axis.distance(p).1;
            match mode {
                Ablation::Whole => true,
                Ablation::Tip { .. } => s >= from || distal_cap(axis, p),
                Ablation::InteriorGap { .. } => s >= from && s < to,
            }
        };
        if hit {
            0.0
        } else {
            1.0
        }
    });
    VoxelGrid::new(dims, mask.spacing(), values, VolumeKind::Binary)
}

/// Whether `p` lies beyond the distal end of the axis.
fn distal_cap(axis: &BranchAxis, p: Vec3) -> bool {
    let n = axis.polyline.len();
    let (a, b) = (axis.polyline[n - 2], axis.polyline[n - 1]);
    dot(sub(p, b), sub(b, a)) > 0.0
}

/// Foreground → `p_fg`, background → `p_bg`, then an in-bounds box mean of
/// radius `blur_radius` (side `2r + 1`).
pub fn to_probability(mask: &VoxelGrid, p_fg: f64, p_bg: f64, blur_radius: usize) -> Result<VoxelGrid> {
    if !(0.0 <= p_bg && p_bg < p_fg && p_fg <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "need 0 <= p_bg < p_fg <= 1, got p_bg={p_bg} p_fg={p_fg}"
        )));
    }
    let dims = mask.dims();
    let mut v: Vec<f64> = (0..dims.len())
        .map(|i| if mask.is_set(i) { p_fg } else { p_bg })
        .collect();
    if blur_radius > 0 {
        let strides = [dims.height * dims.width, dims.width, 1];
        for (axis, &n) in dims.to_array().iter().enumerate() {
            v = box_mean(&v, dims, axis, n, strides[axis], blur_radius);
        }
    }
    let values = v.into_iter().map(|x| x.clamp(0.0, 1.0) as f32).collect();
    VoxelGrid::new(dims, mask.spacing(), values, VolumeKind::Probability)
}

fn box_mean(v: &[f64], dims: Dims, axis: usize, n: usize, stride: usize, r: usize) -> Vec<f64> {
    exec::map_indexed(dims.len(), |i| {
        let c = dims.coord(i)[axis];
        let lo = c.saturating_sub(r);
        let hi = (c + r).min(n - 1);
        let base = i - c * stride;
        let sum: f64 = (lo..=hi).map(|k| v[base + k * stride]).sum();
        sum / (hi - lo + 1) as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_counts() {
        let mut s = TreeSpec::default();
        assert_eq!(s.branch_count(), 15);
        s.generations = 0;
        s.branch_length_vox = vec![30.0];
        assert_eq!(s.branch_count(), 1);
        let t = TreeSpec {
            trifurcation_at: Some(1),
            ..TreeSpec::default()
        };
        // node 1 (generation 1) gains a third child with a 3-branch subtree
        assert_eq!(t.branch_count(), 15 + 3);
    }

    #[test]
    fn single_cylinder() {
        let s = TreeSpec {
            generations: 0,
            branch_length_vox: vec![20.0],
            ..TreeSpec::default()
        };
        let b = generate(&s).unwrap();
        assert_eq!(b.tree.len(), 1);
        assert_eq!(b.tree.branches()[0].label, AnatomicalLabel::Trachea);
        assert!(b.centerline.points().iter().all(|&c| b.mask.is_set_at(c)));
    }

    #[test]
    fn default_tree_matches_spec() {
        let s = TreeSpec::default();
        let b = generate(&s).unwrap();
        assert_eq!(b.tree.len(), 15);
        assert_eq!(b.tree.max_generation(), Some(3));
        let again = generate(&s).unwrap();
        assert_eq!(b.mask, again.mask);
        for br in b.tree.branches() {
            if let Some(p) = br.parent {
                assert_eq!(br.centerline.first(), b.tree.branches()[p].centerline.last());
            }
        }
    }

    #[test]
    fn fixed_dims_too_small() {
        let s = TreeSpec {
            dims: Some(Dims::cube(20)),
            ..TreeSpec::default()
        };
        assert!(matches!(generate(&s), Err(Error::SpecDoesNotFit(_))));
    }

    #[test]
    fn probability_levels() {
        let d = Dims::new(1, 1, 3);
        let m = VoxelGrid::from_mask(d, [1.0; 3], &[true, false, false]);
        let p = to_probability(&m, 0.9, 0.05, 0).unwrap();
        assert_eq!(p.values(), &[0.9, 0.05, 0.05]);
        let b = to_probability(&m, 0.9, 0.05, 1).unwrap();
        assert!((f64::from(b.values()[0]) - 0.475).abs() < 1e-6);
        assert!(to_probability(&m, 0.5, 0.5, 0).is_err());
    }
}
