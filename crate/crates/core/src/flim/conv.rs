use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::Kernel;
use super::norm::{normalize_map, NormalizationStats};
use super::patch::PatchSpec;
use crate::error::{Error, Result};
use crate::volcore::{Volume, VoxelCoord};

/// Post-ReLU activations; one channel per kernel.
pub type FeatureMap = Volume;

fn default_epsilon() -> f64 {
    1e-7
}

fn default_kmeans_iters() -> usize {
    100
}

fn default_kmeans_tol() -> f64 {
    1e-6
}

/// Hyperparameters of one convolutional layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub n_kernels: usize,
    pub patch: PatchSpec,
    pub pool_size: usize,
    pub pool_stride: usize,
    /// Clusters per (image, marker) during kernel estimation.
    pub kmeans_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub center_only: bool,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "default_kmeans_tol")]
    pub kmeans_tol: f64,
}

impl Default for ConvLayerSpec {
    /// Two 3x3x3 kernels, dilation 3, max-pool stride 4.
    fn default() -> Self {
        Self {
            n_kernels: 2,
            patch: PatchSpec::default(),
            pool_size: 4,
            pool_stride: 4,
            kmeans_k: 2,
            seed: 0,
            epsilon: default_epsilon(),
            center_only: false,
            kmeans_max_iters: default_kmeans_iters(),
            kmeans_tol: default_kmeans_tol(),
        }
    }
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_kernels == 0 {
            return bad("n_kernels must be at least 1");
        }
        if self.pool_size == 0 || self.pool_stride == 0 {
            return bad("pool size and stride must be at least 1");
        }
        if self.kmeans_k == 0 {
            return bad("kmeans_k must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.kmeans_max_iters == 0 {
            return bad("kmeans_max_iters must be at least 1");
        }
        Ok(())
    }

    pub fn output_dims(&self, input: [usize; 3]) -> [usize; 3] {
        input.map(|d| d.div_ceil(self.pool_stride))
    }
}

/// A trained layer: normalization, kernel bank, biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub spec: ConvLayerSpec,
    pub stats: NormalizationStats,
    pub kernels: Vec<Kernel>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    pub fn new(spec: ConvLayerSpec, stats: NormalizationStats, kernels: Vec<Kernel>) -> Result<Self> {
        let biases = vec![0.0; kernels.len()];
        let layer = Self { spec, stats, kernels, biases };
        layer.validate()?;
        Ok(layer)
    }

    pub fn input_channels(&self) -> usize {
        self.stats.channels()
    }

    pub fn output_channels(&self) -> usize {
        self.kernels.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.kernels.len() != self.spec.n_kernels || self.biases.len() != self.kernels.len() {
            return Err(Error::InvalidSpec(format!(
                "{} kernels and {} biases for n_kernels = {}",
                self.kernels.len(),
                self.biases.len(),
                self.spec.n_kernels
            )));
        }
        let dim = self.spec.patch.taps() * self.input_channels();
        if let Some(k) = self.kernels.iter().find(|k| k.len() != dim) {
            return Err(Error::DimMismatch { expected: dim, found: k.len() });
        }
        if self.stats.std.len() != self.stats.mean.len() {
            return Err(Error::InvalidSpec("stats mean/std length differ".into()));
        }
        Ok(())
    }
}

/// Dilated "same" cross-correlation of a normalized map with every kernel,
/// plus bias, before ReLU. Output has one channel per kernel.
fn correlate(norm: &Volume, layer: &ConvLayer) -> Vec<f64> {
    let [dx, dy, dz] = norm.dims();
    let m = norm.channels();
    let nk = layer.kernels.len();
    let offsets = layer.spec.patch.offsets();
    let src = norm.data();
    let plane = dx * dy * nk;
    let mut out = vec![0.0; dx * dy * dz * nk];

    // weights regrouped per tap: [channel][kernel]
    let tap_weights: Vec<Vec<f64>> = (0..offsets.len())
        .map(|t| {
            let mut w = Vec::with_capacity(m * nk);
            for c in 0..m {
                for k in &layer.kernels {
                    w.push(k.weights[t * m + c]);
                }
            }
            w
        })
        .collect();

    out.par_chunks_mut(plane).enumerate().for_each(|(z, acc)| {
        for (off, w) in offsets.iter().zip(&tap_weights) {
            let sz = z as isize + off[2];
            if sz < 0 || sz >= dz as isize {
                continue;
            }
            let x_lo = (-off[0]).max(0) as usize;
            let x_hi = (dx as isize - off[0]).min(dx as isize);
            if x_hi <= x_lo as isize {
                continue;
            }
            let x_hi = x_hi as usize;
            for y in 0..dy {
                let sy = y as isize + off[1];
                if sy < 0 || sy >= dy as isize {
                    continue;
                }
                let row_src = (sz as usize * dy + sy as usize) * dx;
                for x in x_lo..x_hi {
                    let s = (row_src + (x as isize + off[0]) as usize) * m;
                    let a = &mut acc[(y * dx + x) * nk..(y * dx + x + 1) * nk];
                    for c in 0..m {
                        let v = src[s + c];
                        let wc = &w[c * nk..(c + 1) * nk];
                        for (o, &wk) in a.iter_mut().zip(wc) {
                            *o += wk * v;
                        }
                    }
                }
            }
        }
        for (i, v) in acc.iter_mut().enumerate() {
            *v += layer.biases[i % nk];
        }
    });
    out
}

/// Max-pool with windows `[o*stride, o*stride + size)` truncated at the
/// borders; output extent is `ceil(dim / stride)`.
pub fn max_pool(input: &[f64], dims: [usize; 3], channels: usize, size: usize, stride: usize) -> ([usize; 3], Vec<f64>) {
    let out_dims = dims.map(|d| d.div_ceil(stride));
    let [ox, oy, oz] = out_dims;
    let [dx, dy, dz] = dims;
    let plane = ox * oy * channels;
    let mut out = vec![f64::NEG_INFINITY; ox * oy * oz * channels];
    out.par_chunks_mut(plane).enumerate().for_each(|(pz, dst)| {
        let z0 = pz * stride;
        let z1 = (z0 + size).min(dz);
        for py in 0..oy {
            let y0 = py * stride;
            let y1 = (y0 + size).min(dy);
            for px in 0..ox {
                let x0 = px * stride;
                let x1 = (x0 + size).min(dx);
                let cell = &mut dst[(py * ox + px) * channels..(py * ox + px + 1) * channels];
                for z in z0..z1 {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let s = ((z * dy + y) * dx + x) * channels;
                            for (c, o) in cell.iter_mut().enumerate() {
                                *o = o.max(input[s + c]);
                            }
                        }
                    }
                }
            }
        }
    });
    (out_dims, out)
}

/// Normalize, correlate with every kernel, add bias, ReLU, max-pool.
pub fn conv_forward(map: &Volume, layer: &ConvLayer) -> Result<FeatureMap> {
    if map.channels() != layer.input_channels() {
        return Err(Error::ChannelMismatch { expected: layer.input_channels(), found: map.channels() });
    }
    let norm = normalize_map(map, &layer.stats)?;
    let mut act = correlate(&norm, layer);
    act.iter_mut().for_each(|v| *v = v.max(0.0));
    let nk = layer.kernels.len();
    let spec = &layer.spec;
    let spacing = map.spacing().map(|s| s * spec.pool_stride as f64);
    if spec.pool_size == 1 && spec.pool_stride == 1 {
        return Volume::new(map.dims(), spacing, nk, act);
    }
    let (dims, pooled) = max_pool(&act, map.dims(), nk, spec.pool_size, spec.pool_stride);
    Volume::new(dims, spacing, nk, pooled)
}

/// Carries marker voxels from a layer's input grid to its pooled output.
pub fn map_coords_through_layer(voxels: &[VoxelCoord], spec: &ConvLayerSpec, input_dims: [usize; 3]) -> Vec<VoxelCoord> {
    let out = spec.output_dims(input_dims);
    let s = spec.pool_stride;
    voxels
        .iter()
        .map(|v| VoxelCoord::new((v.x / s).min(out[0] - 1), (v.y / s).min(out[1] - 1), (v.z / s).min(out[2] - 1)))
        .collect()
}
