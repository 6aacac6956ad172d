//! Dense 3D volumes, intensity preprocessing and file I/O.
//!
//! Axis order is `(z, y, x)` everywhere, row-major with `x` fastest.

mod nifti;
mod raw;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel index triple `[z, y, x]`.
pub type Coord = [usize; 3];

/// Volume extent in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl From<[usize; 3]> for Dims {
    fn from([depth, height, width]: [usize; 3]) -> Self {
        Dims {
            depth,
            height,
            width,
        }
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.to_array()
    }
}

impl Dims {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Dims {
            depth,
            height,
            width,
        }
    }

    pub const fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub const fn to_array(self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub const fn len(self) -> usize {
        self.depth * self.height * self.width
    }

    pub const fn is_empty(self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(self, [z, y, x]: Coord) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub const fn coord(self, index: usize) -> Coord {
        let x = index % self.width;
        let rest = index / self.width;
        [rest / self.height, rest % self.height, x]
    }

    #[inline]
    pub const fn contains(self, [z, y, x]: Coord) -> bool {
        z < self.depth && y < self.height && x < self.width
    }

    /// Signed coordinate to index, `None` when outside the volume.
    #[inline]
    pub fn checked_index(self, [z, y, x]: [isize; 3]) -> Option<usize> {
        if z < 0 || y < 0 || x < 0 {
            return None;
        }
        let c = [z as usize, y as usize, x as usize];
        self.contains(c).then(|| self.index(c))
    }

    /// Indices of the in-bounds 26-neighbours of `index` (centre excluded).
    pub fn neighbors26(self, index: usize) -> impl Iterator<Item = usize> {
        let [z, y, x] = self.coord(index);
        let (z, y, x) = (z as isize, y as isize, x as isize);
        OFFSETS_26
            .iter()
            .filter_map(move |&[dz, dy, dx]| self.checked_index([z + dz, y + dy, x + dx]))
    }

    /// Indices of the in-bounds 6-neighbours of `index`.
    pub fn neighbors6(self, index: usize) -> impl Iterator<Item = usize> {
        let [z, y, x] = self.coord(index);
        let (z, y, x) = (z as isize, y as isize, x as isize);
        OFFSETS_6
            .iter()
            .filter_map(move |&[dz, dy, dx]| self.checked_index([z + dz, y + dy, x + dx]))
    }

    /// Whether `index` lies on the outer face of the volume.
    pub fn on_boundary(self, index: usize) -> bool {
        let [z, y, x] = self.coord(index);
        z == 0
            || y == 0
            || x == 0
            || z + 1 == self.depth
            || y + 1 == self.height
            || x + 1 == self.width
    }
}

/// The 26 unit offsets of a 3×3×3 neighbourhood, lexicographic order.
pub const OFFSETS_26: [[isize; 3]; 26] = {
    let mut out = [[0isize; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dz == 0 && dy == 0 && dx == 0) {
                    out[n] = [dz, dy, dx];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

pub const OFFSETS_6: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Whether two coordinates are distinct 26-neighbours.
pub fn adjacent26(a: Coord, b: Coord) -> bool {
    a != b && (0..3).all(|k| a[k].abs_diff(b[k]) <= 1)
}

/// What the scalars of a [`VoxelGrid`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VolumeKind {
    Intensity,
    Probability,
    Binary,
}

impl VolumeKind {
    fn accepts(self, v: f32) -> bool {
        match self {
            VolumeKind::Intensity => v.is_finite(),
            VolumeKind::Probability => (0.0..=1.0).contains(&v),
            VolumeKind::Binary => v == 0.0 || v == 1.0,
        }
    }
}

/// Dense scalar volume with voxel spacing in mm.
///
/// Immutable once built: operations return new grids.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: Dims,
    spacing: [f64; 3],
    values: Vec<f32>,
    kind: VolumeKind,
}

impl VoxelGrid {
    /// Builds a grid, checking the length, spacing and kind invariants.
    pub fn new(
        dims: Dims,
        spacing: [f64; 3],
        values: Vec<f32>,
        kind: VolumeKind,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidVolume(format!("empty dims {dims:?}")));
        }
        if values.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} values for dims {:?}",
                values.len(),
                dims.to_array()
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidVolume(format!("bad spacing {spacing:?}")));
        }
        if let Some(i) = values.iter().position(|&v| !kind.accepts(v)) {
            return Err(Error::InvalidVolume(format!(
                "value {} at voxel {:?} violates {kind:?} contract",
                values[i],
                dims.coord(i)
            )));
        }
        Ok(VoxelGrid {
            dims,
            spacing,
            values,
            kind,
        })
    }

    /// All-zero grid of the given kind.
    pub fn zeros(dims: Dims, spacing: [f64; 3], kind: VolumeKind) -> Self {
        VoxelGrid {
            dims,
            spacing,
            values: vec![0.0; dims.len()],
            kind,
        }
    }

    /// Binary grid from a per-voxel foreground predicate.
    pub fn from_mask(dims: Dims, spacing: [f64; 3], fg: &[bool]) -> Self {
        assert_eq!(fg.len(), dims.len(), "mask length must match dims");
        VoxelGrid {
            dims,
            spacing,
            values: fg.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            kind: VolumeKind::Binary,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, c: Coord) -> f32 {
        self.values[self.dims.index(c)]
    }

    /// Foreground test used for binary contracts (any nonzero value).
    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.values[index] != 0.0
    }

    #[inline]
    pub fn is_set_at(&self, c: Coord) -> bool {
        self.dims.contains(c) && self.is_set(self.dims.index(c))
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v != 0.0).collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Reinterprets the values under another kind, validating its contract.
    pub fn with_kind(self, kind: VolumeKind) -> Result<Self> {
        VoxelGrid::new(self.dims, self.spacing, self.values, kind)
    }

    /// Binary grid of voxels with value `> threshold`.
    pub fn binarized(&self, threshold: f32) -> Self {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            values: self
                .values
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
            kind: VolumeKind::Binary,
        }
    }

    pub(crate) fn expect_kind(&self, kind: VolumeKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidVolume(format!(
                "expected a {kind:?} volume, got {:?}",
                self.kind
            )))
        }
    }
}

pub(crate) fn check_dims(a: Dims, b: Dims) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimMismatch {
            left: a.to_array(),
            right: b.to_array(),
        })
    }
}

/// Clamps intensities to `[lo, hi]` and maps them linearly onto `[0, 1]`.
pub fn truncate_normalize(grid: &VoxelGrid, lo: f64, hi: f64) -> Result<VoxelGrid> {
    if !(lo < hi) {
        return Err(Error::DegenerateRange { lo, hi });
    }
    let span = hi - lo;
    let values = grid
        .values
        .iter()
        .map(|&v| ((f64::from(v) - lo) / span).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(VoxelGrid {
        dims: grid.dims,
        spacing: grid.spacing,
        values,
        kind: VolumeKind::Probability,
    })
}

/// Reads a NIfTI-1 file (`.nii`, `.nii.gz`) or a raw `.bin` + `.json` pair.
pub fn load_volume(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    if raw::is_raw_path(path) {
        return raw::load(path);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    nifti::decode(&bytes)
}

/// Writes `grid` next to `path`, picking the format from the extension:
/// `.json`/`.bin` for the raw pair, NIfTI-1 otherwise (gzip for `.gz`).
///
/// Files are written to a temporary sibling and renamed into place.
pub fn save_volume(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if raw::is_raw_path(path) {
        return raw::save(grid, path);
    }
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let bytes = nifti::encode(grid, gz).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &bytes)
}

/// Writes bytes via a temporary file in the same directory plus rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
