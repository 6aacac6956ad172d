//! Non-neural airway segmentation toolkit.
//!
//! Covers probability-map post-processing, topology-preserving 3D thinning,
//! airway tree parsing with anatomical labelling, breakage detection,
//! curriculum patch sampling, region losses with analytic gradients and
//! hierarchical tree-length / branch detection metrics. A synthetic tree
//! generator in [`testkit`] supplies exact ground truth for all of it.
//!
//! Inner loops run on rayon when the `parallel` feature is enabled (the
//! default); see [`exec`] for the sequential fallback.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod morphology;
pub mod netshape;
pub mod sampling;
pub mod skeleton;
pub mod testkit;
pub mod tree;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Coord, Dims, VolumeKind, VoxelGrid};
