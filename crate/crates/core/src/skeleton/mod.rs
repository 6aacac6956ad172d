//! Curve skeletons, neighbour counting and breakage detection.

mod thinning;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{check_dims, Coord, Dims, VoxelGrid, OFFSETS_26};

/// Ordered set of skeleton voxels with a coordinate lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonJson", into = "SkeletonJson")]
pub struct SkeletonPointSet {
    dims: Dims,
    spacing: [f64; 3],
    points: Vec<Coord>,
    index: HashMap<Coord, usize>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonJson {
    dims: [usize; 3],
    spacing: [f64; 3],
    points: Vec<Coord>,
}

impl TryFrom<SkeletonJson> for SkeletonPointSet {
    type Error = Error;

    fn try_from(j: SkeletonJson) -> Result<Self> {
        SkeletonPointSet::new(j.dims.into(), j.spacing, j.points)
    }
}

impl From<SkeletonPointSet> for SkeletonJson {
    fn from(s: SkeletonPointSet) -> Self {
        SkeletonJson {
            dims: s.dims.to_array(),
            spacing: s.spacing,
            points: s.points,
        }
    }
}

impl SkeletonPointSet {
    /// Rejects duplicates and out-of-range points.
    pub fn new(dims: Dims, spacing: [f64; 3], points: Vec<Coord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(points.len());
        for (i, &p) in points.iter().enumerate() {
            if !dims.contains(p) {
                return Err(Error::InvalidParams(format!(
                    "skeleton point {p:?} outside dims {:?}",
                    dims.to_array()
                )));
            }
            if index.insert(p, i).is_some() {
                return Err(Error::InvalidParams(format!("duplicate skeleton point {p:?}")));
            }
        }
        Ok(SkeletonPointSet {
            dims,
            spacing,
            points,
            index,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn points(&self) -> &[Coord] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, c: Coord) -> bool {
        self.index.contains_key(&c)
    }

    pub fn position(&self, c: Coord) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Positions of the skeleton 26-neighbours of point `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let [z, y, x] = self.points[i];
        OFFSETS_26.iter().filter_map(move |&[dz, dy, dx]| {
            let c = [
                z.checked_add_signed(dz)?,
                y.checked_add_signed(dy)?,
                x.checked_add_signed(dx)?,
            ];
            self.position(c)
        })
    }

    /// Binary mask with the skeleton voxels set.
    pub fn to_mask(&self) -> VoxelGrid {
        let mut fg = vec![false; self.dims.len()];
        for &p in &self.points {
            fg[self.dims.index(p)] = true;
        }
        VoxelGrid::from_mask(self.dims, self.spacing, &fg)
    }

    /// 26-connected groups of points, each in point order, groups ordered by
    /// their first point.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for s in 0..self.len() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            queue.push_back(s);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                for j in self.neighbors(i) {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    fn subset(&self, keep: impl Fn(Coord) -> bool) -> SkeletonPointSet {
        let points: Vec<Coord> = self.points.iter().copied().filter(|&c| keep(c)).collect();
        let index = points.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        SkeletonPointSet {
            dims: self.dims,
            spacing: self.spacing,
            points,
            index,
        }
    }
}

/// Thins a binary mask to a one-voxel-wide 26-connected curve skeleton that
/// keeps the mask's component count.
pub fn skeletonize(mask: &VoxelGrid) -> Result<SkeletonPointSet> {
    if mask.foreground_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let points = thinning::thin(mask);
    SkeletonPointSet::new(mask.dims(), mask.spacing(), points)
}

/// Number of other skeleton points in each point's 3×3×3 neighbourhood,
/// aligned with [`SkeletonPointSet::points`].
pub fn neighbor_counts(sk: &SkeletonPointSet) -> Vec<u8> {
    (0..sk.len()).map(|i| sk.neighbors(i).count() as u8).collect()
}

/// Splits skeleton points into those inside `pred` and those it missed.
pub fn classify_skeleton_vs_prediction(
    gt_skeleton: &SkeletonPointSet,
    pred: &VoxelGrid,
) -> Result<(SkeletonPointSet, SkeletonPointSet)> {
    check_dims(gt_skeleton.dims(), pred.dims())?;
    let detected = gt_skeleton.subset(|c| pred.is_set_at(c));
    let missed = gt_skeleton.subset(|c| !pred.is_set_at(c));
    Ok((detected, missed))
}

/// One 26-connected run of missed skeleton points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakageGroup {
    pub points: Vec<Coord>,
    pub is_breakage: bool,
}

/// Missed skeleton segments and the points of those that break the tree.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BreakageSet {
    pub groups: Vec<BreakageGroup>,
    pub breakage_points: Vec<Coord>,
}

impl BreakageSet {
    /// Number of groups flagged as breakages.
    pub fn breakage_count(&self) -> usize {
        self.groups.iter().filter(|g| g.is_breakage).count()
    }
}

/// Groups the skeleton points `pred` missed and flags each group as a
/// breakage when none of its points is a tip (neighbour count ≤ 1) of the
/// full ground-truth skeleton.
pub fn detect_breakages(gt_skeleton: &SkeletonPointSet, pred: &VoxelGrid) -> Result<BreakageSet> {
    let (_, missed) = classify_skeleton_vs_prediction(gt_skeleton, pred)?;
    let counts = neighbor_counts(gt_skeleton);
    let mut out = BreakageSet::default();
    for comp in missed.components() {
        let points: Vec<Coord> = comp.iter().map(|&i| missed.points()[i]).collect();
        let is_breakage = points.iter().all(|&c| {
            let at = gt_skeleton.position(c).expect("missed point is a skeleton point");
            counts[at] > 1
        });
        if is_breakage {
            out.breakage_points.extend_from_slice(&points);
        }
        out.groups.push(BreakageGroup {
            points,
            is_breakage,
        });
    }
    out.breakage_points.sort_unstable();
    Ok(out)
}
