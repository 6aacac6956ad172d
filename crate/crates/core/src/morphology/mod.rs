//! Binary and probabilistic volume morphology.
//!
//! Foreground connectivity is 26 and background (hole) connectivity is 6
//! throughout, the complementary pair that keeps digital topology sound.

mod components;
mod edt;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use components::{connected_components, fill_holes, Connectivity, LabelGrid};
pub use edt::{
    distance_to_points, distance_to_set, feature_transform, DistanceField, FeatureTransform,
};

use crate::error::{Error, Result};
use crate::volume::{VolumeKind, VoxelGrid};

/// Non-fatal conditions reported alongside a result mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Warning {
    EmptyMask,
}

/// A mask plus any warning raised while producing it.
#[derive(Debug, Clone, PartialEq)]
#[must_use]
pub struct Outcome {
    pub mask: VoxelGrid,
    pub warning: Option<Warning>,
}

/// Keeps the largest 26-connected component; ties go to the component whose
/// smallest linear index is lower. An empty input comes back empty with
/// [`Warning::EmptyMask`].
pub fn largest_component(mask: &VoxelGrid) -> Outcome {
    let labels = connected_components(mask, Connectivity::TwentySix);
    if labels.count() == 0 {
        return Outcome {
            mask: VoxelGrid::zeros(mask.dims(), mask.spacing(), VolumeKind::Binary),
            warning: Some(Warning::EmptyMask),
        };
    }
    Outcome {
        mask: labels.mask_of(1),
        warning: None,
    }
}

/// Hysteresis thresholds for [`dual_threshold_iteration`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtiParams {
    pub t_high: f64,
    pub t_low: f64,
}

impl Default for DtiParams {
    fn default() -> Self {
        DtiParams {
            t_high: 0.5,
            t_low: 0.35,
        }
    }
}

impl DtiParams {
    pub fn new(t_high: f64, t_low: f64) -> Result<Self> {
        let p = DtiParams { t_high, t_low };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 <= self.t_low && self.t_low <= self.t_high && self.t_high <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "DTI thresholds need 0 <= t_low <= t_high <= 1, got t_low={} t_high={}",
                self.t_low, self.t_high
            )))
        }
    }
}

/// Voxels `>= t_low` that are 26-connected through `>= t_low` voxels to a
/// seed `>= t_high`, grown from the seeds with a work queue.
pub fn dual_threshold_iteration(prob: &VoxelGrid, params: DtiParams) -> Result<VoxelGrid> {
    prob.expect_kind(VolumeKind::Probability)?;
    params.validate()?;
    let dims = prob.dims();
    let v = prob.values();
    let (hi, lo) = (params.t_high, params.t_low);
    let mut keep = vec![false; dims.len()];
    let mut queue = VecDeque::new();
    for (i, &p) in v.iter().enumerate() {
        if f64::from(p) >= hi {
            keep[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in dims.neighbors26(i) {
            if !keep[j] && f64::from(v[j]) >= lo {
                keep[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(VoxelGrid::from_mask(dims, prob.spacing(), &keep))
}

/// DTI, then hole filling, then largest component, in that order.
pub fn postprocess(prob: &VoxelGrid, params: DtiParams) -> Result<Outcome> {
    let grown = dual_threshold_iteration(prob, params)?;
    let filled = fill_holes(&grown);
    Ok(largest_component(&filled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    fn prob(dims: Dims, v: Vec<f32>) -> VoxelGrid {
        VoxelGrid::new(dims, [1.0; 3], v, VolumeKind::Probability).unwrap()
    }

    #[test]
    fn hysteresis_bridge_keeps_path() {
        let p = prob(Dims::new(1, 1, 4), vec![0.6, 0.4, 0.4, 0.6]);
        let out = dual_threshold_iteration(&p, DtiParams::default()).unwrap();
        assert_eq!(out.foreground_count(), 4);
    }

    #[test]
    fn blob_without_seed_dropped() {
        let mut v = vec![0.0; 125];
        for i in [31, 32, 36, 37] {
            v[i] = 0.4;
        }
        let out = dual_threshold_iteration(&prob(Dims::cube(5), v), DtiParams::default()).unwrap();
        assert_eq!(out.foreground_count(), 0);
    }

    #[test]
    fn uniform_high_volume_kept() {
        let out =
            dual_threshold_iteration(&prob(Dims::cube(4), vec![0.9; 64]), DtiParams::default())
                .unwrap();
        assert_eq!(out.foreground_count(), 64);
    }

    #[test]
    fn rejects_bad_params_and_kind() {
        assert!(DtiParams::new(0.3, 0.5).is_err());
        let b = VoxelGrid::zeros(Dims::cube(2), [1.0; 3], VolumeKind::Binary);
        assert!(dual_threshold_iteration(&b, DtiParams::default()).is_err());
    }

    #[test]
    fn largest_component_tie_goes_to_lower_index() {
        let d = Dims::new(1, 1, 11);
        let mut fg = vec![false; 11];
        for i in [0, 1, 2, 3, 4, 6, 7, 8, 9, 10] {
            fg[i] = true;
        }
        let out = largest_component(&VoxelGrid::from_mask(d, [1.0; 3], &fg));
        assert_eq!(out.warning, None);
        assert!(out.mask.is_set(0) && !out.mask.is_set(6));
    }

    #[test]
    fn largest_component_of_empty_warns() {
        let out = largest_component(&VoxelGrid::zeros(Dims::cube(3), [1.0; 3], VolumeKind::Binary));
        assert_eq!(out.warning, Some(Warning::EmptyMask));
        assert_eq!(out.mask.foreground_count(), 0);
    }

    #[test]
    fn postprocess_fills_cavity_and_drops_blob() {
        let d = Dims::cube(12);
        let mut v = vec![0.05f32; d.len()];
        // thick block with a zero cavity
        for z in 1..8 {
            for y in 1..8 {
                for x in 1..8 {
                    v[d.index([z, y, x])] = 0.9;
                }
            }
        }
        v[d.index([4, 4, 4])] = 0.0;
        // small detached blob
        v[d.index([10, 10, 10])] = 0.9;
        let out = postprocess(&prob(d, v), DtiParams::default()).unwrap();
        assert_eq!(out.warning, None);
        assert_eq!(out.mask.foreground_count(), 343);
        assert!(out.mask.is_set_at([4, 4, 4]));
        assert!(!out.mask.is_set_at([10, 10, 10]));
    }
}
