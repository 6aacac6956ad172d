//! Airway tree parsing: skeleton traversal, centreline smoothing, pruning,
//! generation grading and anatomical labelling.

mod parse;
mod refine;

use serde::{Deserialize, Serialize};

pub use parse::parse_skeleton;
pub use refine::{grade_topology, match_anatomy, prune, smooth_centerlines};

use crate::error::{Error, Result};
use crate::morphology::{distance_to_set, DistanceField};
use crate::skeleton::skeletonize;
use crate::volume::{Coord, Dims, VolumeKind, VoxelGrid};

/// Anatomical class of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnatomicalLabel {
    Trachea,
    MainBronchus,
    Lobar,
    Segmental,
    Distal,
    Unlabeled,
}

impl AnatomicalLabel {
    /// Label for an (effective) generation number.
    pub fn for_generation(generation: usize) -> Self {
        match generation {
            0 => AnatomicalLabel::Trachea,
            1 => AnatomicalLabel::MainBronchus,
            2 => AnatomicalLabel::Lobar,
            3 => AnatomicalLabel::Segmental,
            _ => AnatomicalLabel::Distal,
        }
    }

    /// Trachea, main bronchi and lobar bronchi.
    pub fn is_large(self) -> bool {
        matches!(
            self,
            AnatomicalLabel::Trachea | AnatomicalLabel::MainBronchus | AnatomicalLabel::Lobar
        )
    }

    /// Segmental bronchi.
    pub fn is_small(self) -> bool {
        self == AnatomicalLabel::Segmental
    }
}

/// One airway segment between branch points / tips.
///
/// `centerline` holds skeleton voxels, proximal to distal. `points` carries
/// the same path in continuous voxel coordinates (smoothed once
/// [`smooth_centerlines`] has run) and is what lengths are measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub generation: Option<usize>,
    pub label: AnatomicalLabel,
    pub length_mm: f64,
    #[serde(default)]
    pub mean_radius_vox: f64,
    pub centerline: Vec<Coord>,
    #[serde(skip)]
    pub points: Vec<[f64; 3]>,
    #[serde(skip)]
    pub radii: Vec<f64>,
}

impl Branch {
    /// Branch with unsmoothed points and lengths derived from `centerline`.
    pub fn new(
        id: usize,
        parent: Option<usize>,
        centerline: Vec<Coord>,
        radii: Vec<f64>,
        spacing: [f64; 3],
    ) -> Self {
        let points = centerline.iter().map(|c| c.map(|v| v as f64)).collect();
        let mut b = Branch {
            id,
            parent,
            children: Vec::new(),
            generation: None,
            label: AnatomicalLabel::Unlabeled,
            length_mm: 0.0,
            mean_radius_vox: 0.0,
            centerline,
            points,
            radii,
        };
        b.refresh(spacing);
        b
    }

    /// Recomputes `length_mm` and `mean_radius_vox` from points and radii.
    pub fn refresh(&mut self, spacing: [f64; 3]) {
        self.length_mm = path_length(&self.points, spacing);
        if !self.radii.is_empty() {
            self.mean_radius_vox = self.radii.iter().sum::<f64>() / self.radii.len() as f64;
        }
    }

    /// Path length in voxel units.
    pub fn length_vox(&self) -> f64 {
        path_length(&self.points, [1.0; 3])
    }

    /// Unit vector from first to last point, `None` for zero-length branches.
    pub fn direction(&self) -> Option<[f64; 3]> {
        let (a, b) = (self.points.first()?, self.points.last()?);
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (n > 0.0).then(|| d.map(|v| v / n))
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Length of a polyline in mm.
pub fn step_length(a: [f64; 3], b: [f64; 3], spacing: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = (b[k] - a[k]) * spacing[k];
        s += d * d;
    }
    s.sqrt()
}

pub(crate) fn path_length(points: &[[f64; 3]], spacing: [f64; 3]) -> f64 {
    points
        .windows(2)
        .map(|w| step_length(w[0], w[1], spacing))
        .sum()
}

/// Rooted airway tree; `branches[i].id == i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeJson", into = "TreeJson")]
pub struct AirwayTree {
    branches: Vec<Branch>,
    root: usize,
    spacing: [f64; 3],
    dims: Dims,
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    root: usize,
    spacing: [f64; 3],
    dims: [usize; 3],
    branches: Vec<Branch>,
}

impl TryFrom<TreeJson> for AirwayTree {
    type Error = Error;

    fn try_from(j: TreeJson) -> Result<Self> {
        let mut branches = j.branches;
        for b in &mut branches {
            if b.points.len() != b.centerline.len() {
                b.points = b.centerline.iter().map(|c| c.map(|v| v as f64)).collect();
            }
            if b.radii.len() != b.centerline.len() {
                b.radii = vec![b.mean_radius_vox; b.centerline.len()];
            }
        }
        AirwayTree::new(branches, j.root, j.spacing, j.dims.into())
    }
}

impl From<AirwayTree> for TreeJson {
    fn from(t: AirwayTree) -> Self {
        TreeJson {
            root: t.root,
            spacing: t.spacing,
            dims: t.dims.to_array(),
            branches: t.branches,
        }
    }
}

impl AirwayTree {
    /// Validates ids, parent/child symmetry, a single root and acyclicity.
    pub fn new(branches: Vec<Branch>, root: usize, spacing: [f64; 3], dims: Dims) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParams(format!("invalid tree: {m}")));
        if branches.is_empty() {
            return bad("no branches".into());
        }
        if root >= branches.len() {
            return bad(format!("root {root} out of range"));
        }
        for (i, b) in branches.iter().enumerate() {
            if b.id != i {
                return bad(format!("branch at index {i} has id {}", b.id));
            }
            if b.centerline.is_empty() {
                return bad(format!("branch {i} has an empty centerline"));
            }
            if let Some(&c) = b.centerline.iter().find(|&&c| !dims.contains(c)) {
                return bad(format!("branch {i} point {c:?} outside dims"));
            }
            match b.parent {
                None if i != root => return bad(format!("branch {i} has no parent")),
                Some(_) if i == root => return bad("root has a parent".into()),
                Some(p) if p >= branches.len() || !branches[p].children.contains(&i) => {
                    return bad(format!("branch {i} parent link {p} not mirrored"));
                }
                _ => {}
            }
            for &c in &b.children {
                if c >= branches.len() || branches[c].parent != Some(i) {
                    return bad(format!("branch {i} child link {c} not mirrored"));
                }
            }
        }
        let tree = AirwayTree {
            branches,
            root,
            spacing,
            dims,
        };
        if tree.bfs_order().len() != tree.branches.len() {
            return bad("branches unreachable from root".into());
        }
        Ok(tree)
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, id: usize) -> Option<&Branch> {
        self.branches.get(id)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Branch ids in breadth-first order from the root, children in stored order.
    pub fn bfs_order(&self) -> Vec<usize> {
        let mut order = vec![self.root];
        let mut seen = vec![false; self.branches.len()];
        seen[self.root] = true;
        let mut k = 0;
        while k < order.len() {
            for &c in &self.branches[order[k]].children {
                if c < seen.len() && !seen[c] {
                    seen[c] = true;
                    order.push(c);
                }
            }
            k += 1;
        }
        order
    }

    /// Hop distance of each branch from the root.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.branches.len()];
        for id in self.bfs_order() {
            if let Some(p) = self.branches[id].parent {
                depth[id] = depth[p] + 1;
            }
        }
        depth
    }

    pub fn total_length_mm(&self) -> f64 {
        self.branches.iter().map(|b| b.length_mm).sum()
    }

    pub fn max_generation(&self) -> Option<usize> {
        self.branches.iter().filter_map(|b| b.generation).max()
    }

    /// Sorted generation numbers of all branches (requires grading).
    pub fn generation_multiset(&self) -> Option<Vec<usize>> {
        let mut g: Vec<usize> = self.branches.iter().map(|b| b.generation).collect::<Option<_>>()?;
        g.sort_unstable();
        Some(g)
    }

    pub fn is_graded(&self) -> bool {
        self.branches.iter().all(|b| b.generation.is_some())
    }

    pub fn is_labeled(&self) -> bool {
        self.branches
            .iter()
            .all(|b| b.label != AnatomicalLabel::Unlabeled)
    }

    pub(crate) fn from_parts_unchecked(
        branches: Vec<Branch>,
        root: usize,
        spacing: [f64; 3],
        dims: Dims,
    ) -> Self {
        AirwayTree {
            branches,
            root,
            spacing,
            dims,
        }
    }

    pub(crate) fn into_parts(self) -> (Vec<Branch>, usize, [f64; 3], Dims) {
        (self.branches, self.root, self.spacing, self.dims)
    }
}

/// Parameters of the parsing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParseParams {
    /// Odd moving-average window for centreline smoothing.
    pub smooth_window: usize,
    /// Leaves shorter than this (voxel units) are pruned.
    pub prune_min_len_vox: f64,
    /// Leaves at this hop depth from the root or shallower are never pruned.
    pub prune_max_generation_protect: usize,
    pub anatomy: AnatomyParams,
}

impl Default for ParseParams {
    fn default() -> Self {
        ParseParams {
            smooth_window: 5,
            prune_min_len_vox: 3.0,
            prune_max_generation_protect: 0,
            anatomy: AnatomyParams::default(),
        }
    }
}

impl ParseParams {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "smooth_window must be odd and >= 1, got {}",
                self.smooth_window
            )));
        }
        if !(self.prune_min_len_vox >= 0.0) {
            return Err(Error::InvalidParams("prune_min_len_vox must be >= 0".into()));
        }
        self.anatomy.validate()
    }
}

/// Thresholds of the collinear-continuation correction in [`match_anatomy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnatomyParams {
    pub max_angle_deg: f64,
    pub min_radius_ratio: f64,
}

impl Default for AnatomyParams {
    fn default() -> Self {
        AnatomyParams {
            max_angle_deg: 15.0,
            min_radius_ratio: 0.8,
        }
    }
}

impl AnatomyParams {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=180.0).contains(&self.max_angle_deg) && self.min_radius_ratio >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("bad anatomy params {self:?}")))
        }
    }
}

/// Distance from each mask voxel to the nearest background voxel, used as
/// the local airway radius.
pub fn radius_field(mask: &VoxelGrid) -> Option<DistanceField> {
    let bg: Vec<bool> = mask.values().iter().map(|&v| v == 0.0).collect();
    distance_to_set(mask.dims(), &bg).ok()
}

/// Skeleton of `mask` plus everything needed to turn it into a tree.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub skeleton: crate::skeleton::SkeletonPointSet,
    pub tree: AirwayTree,
}

/// skeletonize → parse → smooth → prune → grade → label.
pub fn parse_pipeline(mask: &VoxelGrid, params: &ParseParams) -> Result<AirwayTree> {
    parse_pipeline_with_skeleton(mask, params).map(|p| p.tree)
}

/// [`parse_pipeline`], also returning the intermediate skeleton.
pub fn parse_pipeline_with_skeleton(mask: &VoxelGrid, params: &ParseParams) -> Result<Parsed> {
    params.validate()?;
    if mask.kind() != VolumeKind::Binary {
        return Err(Error::InvalidVolume(format!(
            "parsing needs a Binary mask, got {:?}",
            mask.kind()
        )));
    }
    let skeleton = skeletonize(mask)?;
    let radius = radius_field(mask);
    let tree = parse_skeleton(&skeleton, radius.as_ref())?;
    let tree = smooth_centerlines(&tree, params.smooth_window)?;
    let tree = prune(&tree, params);
    let tree = grade_topology(&tree);
    let tree = match_anatomy(&tree, &params.anatomy)?;
    Ok(Parsed { skeleton, tree })
}
