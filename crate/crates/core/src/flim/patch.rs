use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::volcore::{Volume, VoxelCoord};

/// Neighbourhood shape sampled around a voxel.
///
/// `size` holds the odd extents along x, y and z; taps are spaced by
/// `dilation` voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub size: [usize; 3],
    pub dilation: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { size: [3, 3, 3], dilation: 3 }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| s == 0 || s % 2 == 0) {
            return Err(Error::InvalidSpec(format!("patch size {:?} must be odd", self.size)));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidSpec("dilation must be at least 1".into()));
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.size.iter().product()
    }

    /// Tap offsets in flattening order: z outermost, then y, then x.
    pub fn offsets(&self) -> Vec<[isize; 3]> {
        let half = self.size.map(|s| (s / 2) as isize);
        let d = self.dilation as isize;
        let mut out = Vec::with_capacity(self.taps());
        for oz in -half[2]..=half[2] {
            for oy in -half[1]..=half[1] {
                for ox in -half[0]..=half[0] {
                    out.push([ox * d, oy * d, oz * d]);
                }
            }
        }
        out
    }

    /// Extent covered by the dilated taps along each axis.
    pub fn receptive_field(&self) -> [usize; 3] {
        self.size.map(|s| (s - 1) * self.dilation + 1)
    }
}

/// Flattened patches, one row per marker voxel.
///
/// Row layout is `taps x channels` with the channel index innermost.
/// `valid` flags taps that fell inside the grid; out-of-bounds taps hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub dim: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
    pub labels: Vec<Label>,
}

impl PatchMatrix {
    pub fn empty(dim: usize, channels: usize) -> Self {
        Self { dim, channels, data: Vec::new(), valid: Vec::new(), labels: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn append(&mut self, other: &PatchMatrix) {
        assert_eq!(self.dim, other.dim, "patch dimension mismatch");
        self.data.extend_from_slice(&other.data);
        self.valid.extend_from_slice(&other.valid);
        self.labels.extend_from_slice(&other.labels);
    }
}

/// Samples the dilated neighbourhood of each voxel, zero-padding outside.
pub fn extract_patches(map: &Volume, voxels: &[VoxelCoord], spec: &PatchSpec, label: Label) -> Result<PatchMatrix> {
    spec.validate()?;
    let dims = map.dims();
    let m = map.channels();
    let offsets = spec.offsets();
    let dim = offsets.len() * m;
    let mut out = PatchMatrix::empty(dim, m);
    out.data.reserve(voxels.len() * dim);
    out.valid.reserve(voxels.len() * dim);
    for v in voxels {
        if !v.in_bounds(dims) {
            return Err(Error::InvalidCoord { coord: [v.x as i64, v.y as i64, v.z as i64], dims });
        }
        for off in &offsets {
            let p = [v.x as isize + off[0], v.y as isize + off[1], v.z as isize + off[2]];
            let inside = (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < dims[a]);
            for c in 0..m {
                if inside {
                    out.data.push(map.get(p[0] as usize, p[1] as usize, p[2] as usize, c));
                } else {
                    out.data.push(0.0);
                }
                out.valid.push(inside);
            }
        }
        out.labels.push(label);
    }
    Ok(out)
}
