//! Single-file NIfTI-1 subset: little-endian, int16/uint8/float32 voxels.
//!
//! Only the fields needed to recover dims, spacing, scaling and the volume
//! kind are interpreted; qform/sform are written as identity-free zeros.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Dims, VolumeKind, VoxelGrid};
use crate::error::{Error, Result};

const HEADER_LEN: usize = 348;
const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

const INTENT_LABEL: i16 = 1002;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn kind_from_name(name: &[u8]) -> Option<VolumeKind> {
    let end = name.iter().position(|&c| c == 0).unwrap_or(name.len());
    match &name[..end] {
        b"Binary" => Some(VolumeKind::Binary),
        b"Probability" => Some(VolumeKind::Probability),
        b"Intensity" => Some(VolumeKind::Intensity),
        _ => None,
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<VoxelGrid> {
    let inflated;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::CorruptHeader(format!("gzip stream: {e}")))?;
        inflated = out;
        &inflated[..]
    } else {
        bytes
    };

    if bytes.len() < HEADER_LEN {
        return Err(Error::UnsupportedFormat(format!(
            "{} bytes is too short for a NIfTI-1 header",
            bytes.len()
        )));
    }
    if &bytes[344..348] != MAGIC {
        return Err(Error::UnsupportedFormat(
            "missing NIfTI-1 single-file magic \"n+1\"".into(),
        ));
    }
    match i32_at(bytes, 0) {
        348 => {}
        v if v.swap_bytes() == 348 => {
            return Err(Error::UnsupportedFormat("big-endian NIfTI".into()));
        }
        v => return Err(Error::CorruptHeader(format!("sizeof_hdr = {v}"))),
    }

    let ndim = i16_at(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::CorruptHeader(format!("dim[0] = {ndim}")));
    }
    let mut dim = [1i64; 8];
    for (k, d) in dim.iter_mut().enumerate().skip(1).take(ndim as usize) {
        *d = i64::from(i16_at(bytes, 40 + 2 * k));
        if *d <= 0 {
            return Err(Error::CorruptHeader(format!("dim[{k}] = {d}")));
        }
    }
    if dim[4..].iter().any(|&d| d != 1) {
        return Err(Error::UnsupportedFormat(
            "multi-channel or time-series volumes".into(),
        ));
    }
    let dims = Dims::new(dim[3] as usize, dim[2] as usize, dim[1] as usize);

    let datatype = i16_at(bytes, 70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDatatype(other)),
    };

    // Widen through the shortest decimal so a stored 0.7 reads back as 0.7.
    let pixdim = |k: usize| {
        let s = f32_at(bytes, 76 + 4 * k).abs();
        s.to_string().parse::<f64>().unwrap_or(f64::from(s))
    };
    let spacing = [pixdim(3), pixdim(2), pixdim(1)].map(|s| if s > 0.0 { s } else { 1.0 });

    let vox_offset = f32_at(bytes, 108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32) {
        return Err(Error::CorruptHeader(format!("vox_offset = {vox_offset}")));
    }
    let start = vox_offset as usize;
    let need = dims.len() * width;
    if bytes.len() < start + need {
        return Err(Error::CorruptHeader(format!(
            "header promises {} voxels ({need} bytes) but only {} bytes follow the header",
            dims.len(),
            bytes.len().saturating_sub(start)
        )));
    }
    let body = &bytes[start..start + need];
    let mut values: Vec<f32> = match datatype {
        DT_UINT8 => body.iter().map(|&b| f32::from(b)).collect(),
        DT_INT16 => body
            .chunks_exact(2)
            .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        _ => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };

    let slope = f32_at(bytes, 112);
    let inter = f32_at(bytes, 116);
    if slope.is_finite() && slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }

    let kind = kind_from_name(&bytes[328..344]).unwrap_or(if i16_at(bytes, 68) == INTENT_LABEL {
        VolumeKind::Binary
    } else {
        VolumeKind::Intensity
    });
    VoxelGrid::new(dims, spacing, values, kind).map_err(|e| match e {
        Error::InvalidVolume(m) => Error::CorruptHeader(m),
        other => other,
    })
}

fn check_i16(n: usize) -> std::io::Result<i16> {
    i16::try_from(n).map_err(|_| std::io::Error::other(format!("dimension {n} exceeds NIfTI-1 range")))
}

pub(super) fn encode(grid: &VoxelGrid, gzip: bool) -> std::io::Result<Vec<u8>> {
    let dims = grid.dims();
    let binary = grid.kind() == VolumeKind::Binary;
    let mut h = vec![0u8; DATA_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    put_i16(&mut h, 40, 3);
    put_i16(&mut h, 42, check_i16(dims.width)?);
    put_i16(&mut h, 44, check_i16(dims.height)?);
    put_i16(&mut h, 46, check_i16(dims.depth)?);
    for k in 4..8 {
        put_i16(&mut h, 40 + 2 * k, 1);
    }
    put_i16(&mut h, 68, if binary { INTENT_LABEL } else { 0 });
    let (datatype, bitpix) = if binary { (DT_UINT8, 8) } else { (DT_FLOAT32, 32) };
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    let [dz, dy, dx] = grid.spacing();
    put_f32(&mut h, 76, 1.0);
    put_f32(&mut h, 80, dx as f32);
    put_f32(&mut h, 84, dy as f32);
    put_f32(&mut h, 88, dz as f32);
    for k in 4..8 {
        put_f32(&mut h, 76 + 4 * k, 1.0);
    }
    put_f32(&mut h, 108, DATA_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // xyzt_units: mm
    let name = format!("{:?}", grid.kind());
    h[328..328 + name.len()].copy_from_slice(name.as_bytes());
    h[344..348].copy_from_slice(MAGIC);

    let mut out = h;
    out.reserve(grid.len() * if binary { 1 } else { 4 });
    if binary {
        out.extend(grid.values().iter().map(|&v| v as u8));
    } else {
        for v in grid.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&out)?;
        enc.finish()
    } else {
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled 4×4×4 int16 file with unit spacing.
    fn int16_fixture(voxels: usize) -> Vec<u8> {
        let mut b = vec![0u8; DATA_OFFSET];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (k, v) in [3i16, 4, 4, 4, 1, 1, 1, 1].iter().enumerate() {
            b[40 + 2 * k..42 + 2 * k].copy_from_slice(&v.to_le_bytes());
        }
        b[70..72].copy_from_slice(&DT_INT16.to_le_bytes());
        b[72..74].copy_from_slice(&16i16.to_le_bytes());
        for k in 0..4 {
            b[76 + 4 * k..80 + 4 * k].copy_from_slice(&1f32.to_le_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_le_bytes());
        b[344..348].copy_from_slice(MAGIC);
        for i in 0..voxels {
            b.extend_from_slice(&((i as i16) - 1000).to_le_bytes());
        }
        b
    }

    #[test]
    fn reads_hand_written_int16() {
        let g = decode(&int16_fixture(64)).unwrap();
        assert_eq!(g.dims(), Dims::cube(4));
        assert_eq!(g.spacing(), [1.0; 3]);
        assert_eq!(g.kind(), VolumeKind::Intensity);
        assert_eq!(g.len(), 64);
        assert_eq!(g.values()[5], -995.0);
    }

    #[test]
    fn truncated_body_is_corrupt() {
        let err = decode(&int16_fixture(10)).unwrap_err();
        assert!(matches!(err, Error::CorruptHeader(_)), "{err}");
    }

    #[test]
    fn bad_magic_and_datatype() {
        let mut b = int16_fixture(64);
        b[345] = b'x';
        assert!(matches!(decode(&b), Err(Error::UnsupportedFormat(_))));
        let mut b = int16_fixture(64);
        b[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(decode(&b), Err(Error::UnsupportedDatatype(64))));
        let mut b = int16_fixture(64);
        b[42..44].copy_from_slice(&0i16.to_le_bytes());
        assert!(matches!(decode(&b), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn applies_scaling() {
        let mut b = int16_fixture(64);
        b[112..116].copy_from_slice(&2f32.to_le_bytes());
        b[116..120].copy_from_slice(&10f32.to_le_bytes());
        let g = decode(&b).unwrap();
        assert_eq!(g.values()[0], -1000.0 * 2.0 + 10.0);
    }

    #[test]
    fn gzip_roundtrip_keeps_kind() {
        let g = VoxelGrid::new(
            Dims::new(2, 3, 4),
            [2.5, 0.7, 0.7],
            (0..24).map(|i| (i % 2) as f32).collect(),
            VolumeKind::Binary,
        )
        .unwrap();
        let back = decode(&encode(&g, true).unwrap()).unwrap();
        assert_eq!(back.kind(), VolumeKind::Binary);
        assert_eq!(back.dims(), g.dims());
        assert_eq!(back.values(), g.values());
        for k in 0..3 {
            assert_eq!(back.spacing()[k] as f32, g.spacing()[k] as f32);
        }
    }
}
