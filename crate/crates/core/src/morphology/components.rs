use std::collections::VecDeque;

use crate::volume::{Dims, VoxelGrid};

/// Neighbourhood used to decide whether two voxels touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

/// Connected-component labelling of a binary mask.
///
/// Label 0 is background; labels `1..=K` are ordered by decreasing component
/// size, ties broken by the smallest linear index in the component.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    dims: Dims,
    spacing: [f64; 3],
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl LabelGrid {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of components `K`.
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Voxel count of `label` (1-based); 0 for background or unknown labels.
    pub fn size_of(&self, label: u32) -> usize {
        match label {
            0 => 0,
            l => self.sizes.get(l as usize - 1).copied().unwrap_or(0),
        }
    }

    /// Component sizes, index `k` holding label `k + 1`.
    pub fn component_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Binary mask of a single label.
    pub fn mask_of(&self, label: u32) -> VoxelGrid {
        let fg: Vec<bool> = self.labels.iter().map(|&l| l == label && l != 0).collect();
        VoxelGrid::from_mask(self.dims, self.spacing, &fg)
    }
}

fn neighbours(dims: Dims, i: usize, conn: Connectivity, out: &mut Vec<usize>) {
    out.clear();
    match conn {
        Connectivity::Six => out.extend(dims.neighbors6(i)),
        Connectivity::TwentySix => out.extend(dims.neighbors26(i)),
    }
}

/// Labels the foreground of `mask` under the given connectivity.
pub fn connected_components(mask: &VoxelGrid, conn: Connectivity) -> LabelGrid {
    let dims = mask.dims();
    let mut provisional = vec![0u32; dims.len()];
    // (size, seed) per provisional label; seeds come out in increasing order.
    let mut found: Vec<(usize, usize)> = Vec::new();
    let mut queue = VecDeque::new();
    let mut nb = Vec::with_capacity(26);
    for seed in 0..dims.len() {
        if !mask.is_set(seed) || provisional[seed] != 0 {
            continue;
        }
        let label = found.len() as u32 + 1;
        provisional[seed] = label;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            neighbours(dims, i, conn, &mut nb);
            for &j in &nb {
                if provisional[j] == 0 && mask.is_set(j) {
                    provisional[j] = label;
                    queue.push_back(j);
                }
            }
        }
        found.push((size, seed));
    }

    let mut order: Vec<usize> = (0..found.len()).collect();
    order.sort_by(|&a, &b| found[b].0.cmp(&found[a].0).then(found[a].1.cmp(&found[b].1)));
    let mut remap = vec![0u32; found.len() + 1];
    for (rank, &old) in order.iter().enumerate() {
        remap[old + 1] = rank as u32 + 1;
    }
    let labels = provisional.into_iter().map(|l| remap[l as usize]).collect();
    let sizes = order.iter().map(|&old| found[old].0).collect();
    LabelGrid {
        dims,
        spacing: mask.spacing(),
        labels,
        sizes,
    }
}

/// Sets to foreground every background voxel that cannot reach the volume
/// boundary through 6-connected background.
pub fn fill_holes(mask: &VoxelGrid) -> VoxelGrid {
    let dims = mask.dims();
    let mut outside = vec![false; dims.len()];
    let mut queue = VecDeque::new();
    for i in 0..dims.len() {
        if !mask.is_set(i) && dims.on_boundary(i) {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in dims.neighbors6(i) {
            if !outside[j] && !mask.is_set(j) {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    let fg: Vec<bool> = outside.iter().map(|&o| !o).collect();
    VoxelGrid::from_mask(dims, mask.spacing(), &fg)
}
