//! Raw little-endian float32 body with a JSON sidecar describing it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_atomic, Dims, VolumeKind, VoxelGrid};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    dims: [usize; 3],
    spacing: [f64; 3],
    kind: VolumeKind,
    dtype: String,
}

pub(super) fn is_raw_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("json" | "bin")
    )
}

fn pair(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

pub(super) fn load(path: &Path) -> Result<VoxelGrid> {
    let (json_path, bin_path) = pair(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Sidecar {
        path: json_path.clone(),
        message: e.to_string(),
    })?;
    if sidecar.dtype != "f32" {
        return Err(Error::Sidecar {
            path: json_path,
            message: format!("dtype {:?} (only \"f32\" is supported)", sidecar.dtype),
        });
    }
    let dims = Dims::from(sidecar.dims);
    if dims.is_empty() {
        return Err(Error::CorruptHeader(format!("sidecar dims {:?}", sidecar.dims)));
    }
    let body = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if body.len() < dims.len() * 4 {
        return Err(Error::CorruptHeader(format!(
            "sidecar promises {} voxels but {} holds {} bytes",
            dims.len(),
            bin_path.display(),
            body.len()
        )));
    }
    let values = body[..dims.len() * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    VoxelGrid::new(dims, sidecar.spacing, values, sidecar.kind).map_err(|e| match e {
        Error::InvalidVolume(m) => Error::CorruptHeader(m),
        other => other,
    })
}

pub(super) fn save(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let (json_path, bin_path) = pair(path);
    let sidecar = Sidecar {
        dims: grid.dims().to_array(),
        spacing: grid.spacing(),
        kind: grid.kind(),
        dtype: "f32".into(),
    };
    let mut body = Vec::with_capacity(grid.len() * 4);
    for v in grid.values() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin_path, &body)?;
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    write_atomic(&json_path, text.as_bytes())
}
