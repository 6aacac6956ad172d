//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas, carrying the index of the nearest target along.
//!
//! Distances are in voxel units on the isotropic lattice. Squared distances
//! are integers and stored as `f32`, which is exact up to 2^24; that bounds
//! volumes to roughly 2000 voxels per axis.

use crate::error::{Error, Result};
use crate::exec;
use crate::volume::{Coord, Dims};

#[derive(Debug, Clone, Copy)]
struct Cell {
    sq: f32,
    site: u32,
}

const FAR: Cell = Cell {
    sq: f32::INFINITY,
    site: u32::MAX,
};

/// Per-voxel Euclidean distance (voxel units) to the nearest target voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    dims: Dims,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, c: Coord) -> f64 {
        self.values[self.dims.index(c)]
    }
}

/// Nearest-target transform: squared distance and linear index of the
/// nearest target for every voxel.
#[derive(Debug, Clone)]
pub struct FeatureTransform {
    dims: Dims,
    cells: Vec<Cell>,
}

impl FeatureTransform {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn squared(&self, index: usize) -> f64 {
        f64::from(self.cells[index].sq)
    }

    pub fn distance(&self, index: usize) -> f64 {
        self.squared(index).sqrt()
    }

    /// Linear index of a nearest target of voxel `index`.
    pub fn nearest(&self, index: usize) -> usize {
        self.cells[index].site as usize
    }

    pub fn into_distance_field(self) -> DistanceField {
        DistanceField {
            dims: self.dims,
            values: self.cells.iter().map(|c| f64::from(c.sq).sqrt()).collect(),
        }
    }
}

/// Exact distance from every voxel of `dims` to the nearest of `targets`.
pub fn distance_to_points(dims: Dims, targets: &[Coord]) -> Result<DistanceField> {
    if targets.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let mut is_target = vec![false; dims.len()];
    for &t in targets {
        if !dims.contains(t) {
            return Err(Error::InvalidParams(format!(
                "target {t:?} outside dims {:?}",
                dims.to_array()
            )));
        }
        is_target[dims.index(t)] = true;
    }
    Ok(feature_transform(dims, &is_target)?.into_distance_field())
}

/// Exact distance to the voxels flagged in `is_target`.
pub fn distance_to_set(dims: Dims, is_target: &[bool]) -> Result<DistanceField> {
    Ok(feature_transform(dims, is_target)?.into_distance_field())
}

/// Squared distances plus nearest-target indices for the flagged voxels.
pub fn feature_transform(dims: Dims, is_target: &[bool]) -> Result<FeatureTransform> {
    assert_eq!(is_target.len(), dims.len());
    if dims.len() >= u32::MAX as usize {
        return Err(Error::InvalidParams("volume too large for the distance transform".into()));
    }
    if !is_target.iter().any(|&t| t) {
        return Err(Error::EmptyTargetSet);
    }
    let Dims {
        depth,
        height,
        width,
    } = dims;
    let mut cells: Vec<Cell> = is_target
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t {
                Cell {
                    sq: 0.0,
                    site: i as u32,
                }
            } else {
                FAR
            }
        })
        .collect();

    // x: rows are contiguous.
    exec::for_each_chunk_mut(&mut cells, width, |_, row| {
        let mut scratch = Envelope::new(width);
        let input = row.to_vec();
        scratch.transform(&input, row);
    });

    // y: columns stay inside one z-slab.
    let slab = height * width;
    exec::for_each_chunk_mut(&mut cells, slab, |_, s| {
        let mut scratch = Envelope::new(height);
        let mut line = vec![FAR; height];
        let mut out = vec![FAR; height];
        for x in 0..width {
            for y in 0..height {
                line[y] = s[y * width + x];
            }
            scratch.transform(&line, &mut out);
            for y in 0..height {
                s[y * width + x] = out[y];
            }
        }
    });

    // z: columns span slabs; gather a block of rows at a time.
    const BLOCK: usize = 8;
    let mut y0 = 0;
    while y0 < height {
        let rows = BLOCK.min(height - y0);
        let src = &cells;
        let columns = exec::map_indexed(rows * width, |k| {
            let (y, x) = (y0 + k / width, k % width);
            let line: Vec<Cell> = (0..depth).map(|z| src[(z * height + y) * width + x]).collect();
            let mut out = vec![FAR; depth];
            Envelope::new(depth).transform(&line, &mut out);
            out
        });
        for (k, col) in columns.into_iter().enumerate() {
            let (y, x) = (y0 + k / width, k % width);
            for (z, c) in col.into_iter().enumerate() {
                cells[(z * height + y) * width + x] = c;
            }
        }
        y0 += rows;
    }

    Ok(FeatureTransform { dims, cells })
}

/// Scratch space for one 1D lower-envelope pass.
struct Envelope {
    vertex: Vec<usize>,
    bound: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Envelope {
            vertex: Vec::with_capacity(n),
            bound: Vec::with_capacity(n + 1),
        }
    }

    /// `out[q] = min_v (q - v)^2 + input[v].sq`, with the minimiser's site.
    fn transform(&mut self, input: &[Cell], out: &mut [Cell]) {
        let f = |v: usize| f64::from(input[v].sq);
        self.vertex.clear();
        self.bound.clear();
        for q in 0..input.len() {
            if !input[q].sq.is_finite() {
                continue;
            }
            let fq = f(q) + (q * q) as f64;
            loop {
                let Some(&v) = self.vertex.last() else {
                    self.vertex.push(q);
                    self.bound.push(f64::NEG_INFINITY);
                    break;
                };
                let s = (fq - (f(v) + (v * v) as f64)) / (2.0 * (q as f64 - v as f64));
                if s <= *self.bound.last().unwrap() {
                    self.vertex.pop();
                    self.bound.pop();
                } else {
                    self.vertex.push(q);
                    self.bound.push(s);
                    break;
                }
            }
        }
        if self.vertex.is_empty() {
            out.fill(FAR);
            return;
        }
        let mut k = 0;
        for (q, slot) in out.iter_mut().enumerate() {
            while k + 1 < self.vertex.len() && self.bound[k + 1] < q as f64 {
                k += 1;
            }
            let v = self.vertex[k];
            let dq = q as f64 - v as f64;
            *slot = Cell {
                sq: (dq * dq + f(v)) as f32,
                site: input[v].site,
            };
        }
    }
}
