//! Curriculum patch sampling and the stage scheduler.
//!
//! Every draw is a pure function of its inputs and a `u64` seed (ChaCha8).
//! Patches are cubes shifted to lie inside the volume, never padded.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{BreakageSet, SkeletonPointSet};
use crate::volume::{Coord, Dims, VoxelGrid};

pub const DEFAULT_PATCH_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Random,
    HardMining,
    Breakage,
}

/// A cubic patch: `origin` is its lowest corner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub origin: Coord,
    pub size: usize,
    pub strategy: Strategy,
    pub anchor: Option<Coord>,
}

impl PatchSpec {
    pub fn fits(&self, dims: Dims) -> bool {
        let d = dims.to_array();
        self.size > 0 && (0..3).all(|k| self.origin[k] + self.size <= d[k])
    }

    pub fn contains(&self, c: Coord) -> bool {
        (0..3).all(|k| c[k] >= self.origin[k] && c[k] < self.origin[k] + self.size)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_size(size: usize, dims: Dims) -> Result<()> {
    if size == 0 || dims.to_array().iter().any(|&d| d < size) {
        return Err(Error::PatchExceedsVolume {
            size,
            dims: dims.to_array(),
        });
    }
    Ok(())
}

/// Origin of the size-`size` cube centred on `center` (rounded down),
/// shifted into the volume.
fn centered_origin(center: Coord, size: usize, dims: Dims) -> Coord {
    let d = dims.to_array();
    [0, 1, 2].map(|k| center[k].saturating_sub(size / 2).min(d[k] - size))
}

/// Centre drawn uniformly from the foreground bounding box grown by half a
/// patch on each side (clamped to the volume).
pub fn random_crop(gt: &VoxelGrid, size: usize, seed: u64) -> Result<PatchSpec> {
    let dims = gt.dims();
    check_size(size, dims)?;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for i in 0..dims.len() {
        if gt.is_set(i) {
            any = true;
            let c = dims.coord(i);
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    let d = dims.to_array();
    let mut r = rng(seed);
    let center = [0, 1, 2].map(|k| {
        let a = lo[k].saturating_sub(size / 2);
        let b = (hi[k] + size / 2).min(d[k] - 1);
        r.random_range(a..=b)
    });
    Ok(PatchSpec {
        origin: centered_origin(center, size, dims),
        size,
        strategy: Strategy::Random,
        anchor: None,
    })
}

fn anchored(
    points: &[Coord],
    dims: Dims,
    size: usize,
    seed: u64,
    strategy: Strategy,
    what: &'static str,
) -> Result<PatchSpec> {
    if points.is_empty() {
        return Err(Error::EmptySet(what));
    }
    check_size(size, dims)?;
    let anchor = points[rng(seed).random_range(0..points.len())];
    Ok(PatchSpec {
        origin: centered_origin(anchor, size, dims),
        size,
        strategy,
        anchor: Some(anchor),
    })
}

/// Patch centred on a uniformly drawn missed skeleton point.
pub fn hard_mining_crop(missed: &SkeletonPointSet, size: usize, seed: u64) -> Result<PatchSpec> {
    anchored(
        missed.points(),
        missed.dims(),
        size,
        seed,
        Strategy::HardMining,
        "missed-skeleton",
    )
}

/// Patch centred on a uniformly drawn breakage point. Fails with
/// [`Error::EmptySet`] when the prediction has no breakages.
pub fn breakage_crop(
    breakages: &BreakageSet,
    dims: Dims,
    size: usize,
    seed: u64,
) -> Result<PatchSpec> {
    anchored(
        &breakages.breakage_points,
        dims,
        size,
        seed,
        Strategy::Breakage,
        "breakage",
    )
}

/// Ratio rule constants of the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    pub boost: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub breakage_min: f64,
    pub breakage_max: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        SchedulerParams {
            boost: 4.0,
            r_min: 0.2,
            r_max: 0.6,
            breakage_min: 0.1,
            breakage_max: 0.4,
        }
    }
}

impl SchedulerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.boost >= 0.0
            && 0.0 <= self.r_min
            && self.r_min <= self.r_max
            && self.r_max <= 1.0
            && 0.0 <= self.breakage_min
            && self.breakage_min <= self.breakage_max
            && self.breakage_max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("bad scheduler params {self:?}")))
        }
    }
}

/// Sampling mix for one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub stage: u8,
    pub n_missed: usize,
    pub n_breakage: usize,
    /// (random, hard mining, breakage), summing to 1.
    pub ratios: [f64; 3],
}

impl SchedulerState {
    /// All-random state of a stage before any counts are known.
    pub fn new(stage: u8) -> Result<Self> {
        if !(1..=3).contains(&stage) {
            return Err(Error::InvalidParams(format!("stage must be 1, 2 or 3, got {stage}")));
        }
        Ok(SchedulerState {
            stage,
            n_missed: 0,
            n_breakage: 0,
            ratios: [1.0, 0.0, 0.0],
        })
    }
}

/// Recomputes the mix from skeleton-point counts of the latest prediction.
///
/// Stage 1 is always all-random. Stage 2 uses
/// `r_hard = clamp(boost · missed/total, r_min, r_max)`. Stage 3 first sets
/// `r_b = clamp(boost · breakage/max(missed, 1), breakage_min, breakage_max)`,
/// then scales the stage-2 `r_hard` into the remaining `1 - r_b`.
pub fn scheduler_update(
    state: &SchedulerState,
    n_missed: usize,
    n_breakage: usize,
    n_total_skeleton: usize,
    params: &SchedulerParams,
) -> Result<SchedulerState> {
    params.validate()?;
    if n_missed > n_total_skeleton {
        return Err(Error::InconsistentCounts(format!(
            "{n_missed} missed of {n_total_skeleton} skeleton points"
        )));
    }
    if n_breakage > n_missed {
        return Err(Error::InconsistentCounts(format!(
            "{n_breakage} breakage points but only {n_missed} missed points"
        )));
    }
    let missed_frac = if n_total_skeleton == 0 {
        0.0
    } else {
        n_missed as f64 / n_total_skeleton as f64
    };
    let r_hard = (params.boost * missed_frac).clamp(params.r_min, params.r_max);
    let ratios = match state.stage {
        1 => [1.0, 0.0, 0.0],
        2 => [1.0 - r_hard, r_hard, 0.0],
        3 => {
            let r_b = (params.boost * n_breakage as f64 / n_missed.max(1) as f64)
                .clamp(params.breakage_min, params.breakage_max);
            let r_h = r_hard * (1.0 - r_b);
            [1.0 - r_b - r_h, r_h, r_b]
        }
        s => return Err(Error::InvalidParams(format!("stage must be 1, 2 or 3, got {s}"))),
    };
    Ok(SchedulerState {
        stage: state.stage,
        n_missed,
        n_breakage,
        ratios,
    })
}

/// `count` strategy tags drawn independently with the state's ratios.
pub fn make_batch_plan(state: &SchedulerState, count: usize, seed: u64) -> Result<Vec<Strategy>> {
    let r = state.ratios;
    if r.iter().any(|&x| !(x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!("ratios {r:?} are not a probability vector")));
    }
    let tags = [Strategy::Random, Strategy::HardMining, Strategy::Breakage];
    let dist = WeightedIndex::new(r).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut rng = rng(seed);
    Ok((0..count).map(|_| tags[dist.sample(&mut rng)]).collect())
}
