use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer voxel index `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct VoxelCoord {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelCoord {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub fn in_bounds(&self, dims: [usize; 3]) -> bool {
        self.x < dims[0] && self.y < dims[1] && self.z < dims[2]
    }
}

impl From<[usize; 3]> for VoxelCoord {
    fn from(v: [usize; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<VoxelCoord> for [usize; 3] {
    fn from(c: VoxelCoord) -> Self {
        [c.x, c.y, c.z]
    }
}

/// Multi-channel scalar grid with physical voxel spacing.
///
/// Storage is x-fastest, then y, then z, with the channels of one voxel
/// stored contiguously (channel stride 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    channels: usize,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], channels: usize, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("zero extent in dims {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!("non-positive spacing {spacing:?}")));
        }
        if channels == 0 {
            return Err(Error::InvalidVolume("zero channels".into()));
        }
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite value at index {i}")));
        }
        Ok(Self { dims, spacing, channels, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], channels: usize, value: f64) -> Result<Self> {
        let n = dims.iter().product::<usize>() * channels;
        Self::new(dims, spacing, channels, vec![value; n])
    }

    /// Builds a volume by evaluating `f(x, y, z, c)` at every sample.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product::<usize>() * channels);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    for c in 0..channels {
                        data.push(f(x, y, z, c));
                    }
                }
            }
        }
        Self::new(dims, spacing, channels, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        ((z * self.dims[1] + y) * self.dims[0] + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.data[self.index(x, y, z, c)]
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!("non-positive spacing {spacing:?}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    /// Applies `f` to every sample, keeping geometry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Copies one channel out as a single-channel volume.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if c >= self.channels {
            return Err(Error::IndexOutOfRange { index: c, extent: self.channels });
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Self::new(self.dims, self.spacing, 1, data)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Binary segmentation aligned with a [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl Mask {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("zero extent in mask dims {dims:?}")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidVolume(format!(
                "mask length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidVolume(format!("mask value {} at {i} is not 0/1", data[i])));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![1; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(u8::from(f(x, y, z)));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[(z * self.dims[1] + y) * self.dims[0] + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// A 2D plane pulled out of a volume, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Slice2D {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Extracts the plane `axis = index` of one channel without interpolation.
///
/// Axis 2 (z) yields an image of width `dx` and height `dy`; axis 1 yields
/// `dx` by `dz`; axis 0 yields `dy` by `dz`.
pub fn slice_extract(v: &Volume, axis: usize, index: usize, channel: usize) -> Result<Slice2D> {
    if axis > 2 {
        return Err(Error::IndexOutOfRange { index: axis, extent: 3 });
    }
    let [dx, dy, dz] = v.dims();
    if index >= v.dims()[axis] {
        return Err(Error::IndexOutOfRange { index, extent: v.dims()[axis] });
    }
    if channel >= v.channels() {
        return Err(Error::IndexOutOfRange { index: channel, extent: v.channels() });
    }
    let (width, height) = match axis {
        0 => (dy, dz),
        1 => (dx, dz),
        _ => (dx, dy),
    };
    let mut data = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let (x, y, z) = match axis {
                0 => (index, col, row),
                1 => (col, index, row),
                _ => (col, row, index),
            };
            data.push(v.get(x, y, z, channel));
        }
    }
    Ok(Slice2D { width, height, data })
}
