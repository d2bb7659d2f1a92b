//! VVF volume files: a JSON header next to a little-endian raw payload.
//!
//! ```json
//! {"dims":[dx,dy,dz],"spacing":[sx,sy,sz],"channels":m,"dtype":"i16","raw":"name.raw"}
//! ```
//!
//! The raw file is x-fastest, then y, then z, channels interleaved per voxel.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::{Mask, Volume};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    I16,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::I16 => "i16",
            Dtype::F32 => "f32",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VvfHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub channels: usize,
    pub dtype: Dtype,
    pub raw: String,
}

/// Strips `.vvf.json` (or any extension) from a header file name.
pub fn volume_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    match name.strip_suffix(".vvf.json") {
        Some(stem) => stem.to_string(),
        None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(name),
    }
}

pub fn read_header(path: impl AsRef<Path>) -> Result<VvfHeader> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn raw_path(header_path: &Path, header: &VvfHeader) -> PathBuf {
    header_path.parent().unwrap_or(Path::new(".")).join(&header.raw)
}

fn read_samples(path: &Path) -> Result<(VvfHeader, Vec<f64>)> {
    let header = read_header(path)?;
    if header.dims.iter().any(|&d| d == 0) || header.channels == 0 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: "zero dimension or channel count".into(),
        });
    }
    let raw = raw_path(path, &header);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let n = header.dims.iter().product::<usize>() * header.channels;
    let expected = n * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch { expected, found: bytes.len() });
    }
    let data = match header.dtype {
        Dtype::U8 => bytes.iter().map(|&b| f64::from(b)).collect(),
        Dtype::I16 => bytes
            .chunks_exact(2)
            .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    };
    Ok((header, data))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (header, data) = read_samples(path)?;
    Volume::new(header.dims, header.spacing, header.channels, data)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (header, data) = read_samples(path)?;
    if header.channels != 1 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: "mask must have one channel".into(),
        });
    }
    Mask::new(header.dims, data.into_iter().map(|v| v as u8).collect())
}

fn encode(data: &[f64], dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len() * dtype.size());
    for (index, &value) in data.iter().enumerate() {
        let bad = || Error::NotRepresentable { value, index, dtype: dtype.name() };
        match dtype {
            Dtype::U8 => {
                if value.fract() != 0.0 || !(0.0..=255.0).contains(&value) {
                    return Err(bad());
                }
                out.push(value as u8);
            }
            Dtype::I16 => {
                if value.fract() != 0.0 || !(f64::from(i16::MIN)..=f64::from(i16::MAX)).contains(&value) {
                    return Err(bad());
                }
                out.extend_from_slice(&(value as i16).to_le_bytes());
            }
            Dtype::F32 => {
                let v = value as f32;
                if !v.is_finite() {
                    return Err(bad());
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn write_samples(path: &Path, dims: [usize; 3], spacing: [f64; 3], channels: usize, dtype: Dtype, data: &[f64]) -> Result<()> {
    let stem = volume_stem(path);
    let header = VvfHeader { dims, spacing, channels, dtype, raw: format!("{stem}.raw") };
    let bytes = encode(data, dtype)?;
    write_atomic(&raw_path(path, &header), &bytes)?;
    let json = serde_json::to_vec_pretty(&header).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    write_atomic(path, &json)
}

/// Writes `v` as `path` (header) plus a sibling `.raw` file.
///
/// Integer dtypes require integral in-range values; `f32` rounds.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    write_samples(path.as_ref(), v.dims(), v.spacing(), v.channels(), dtype, v.data())
}

pub fn save_mask(m: &Mask, path: impl AsRef<Path>, spacing: [f64; 3]) -> Result<()> {
    let data: Vec<f64> = m.data().iter().map(|&b| f64::from(b)).collect();
    write_samples(path.as_ref(), m.dims(), spacing, 1, Dtype::U8, &data)
}
