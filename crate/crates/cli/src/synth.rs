//! Synthetic lung boxes for desk-scale runs of the whole pipeline.
//!
//! Each volume is a cropped "lung box": dark parenchyma inside an ellipsoid
//! that touches every face, bright chest wall in the corners, thin bright
//! vessels, smooth low-frequency shading and Gaussian noise. Abnormal
//! volumes add 1 to 4 blurred mid-intensity ellipsoids (ground-glass
//! analogues). The generator keeps the lesion-free baseline of every volume
//! so lesion ground truth is exact.

use std::path::Path;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use flim_core::dataset::{Manifest, PatientEntry};
use flim_core::flim::{Marker, MarkerSet};
use flim_core::fsutil::write_json;
use flim_core::seed::derive_seed;
use flim_core::volcore::{save_mask, save_volume, Dtype, Mask, Volume, VoxelCoord};
use flim_core::Label;

use crate::config::PipelineConfig;

pub const PARENCHYMA: f64 = 100.0;
pub const WALL: f64 = 900.0;
pub const VESSEL: f64 = 800.0;
pub const LESION: f64 = 450.0;
pub const BLUR_SIGMA: f64 = 2.0;
pub const NOISE_SD: f64 = 15.0;
/// Most voxels kept per auto-placed marker.
pub const MARKER_CAP: usize = 400;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub dims: [usize; 3],
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { n_normal: 24, n_abnormal: 24, dims: [64; 3], seed: 0 }
    }
}

/// One lesion: ellipsoid center and semi-axes in voxels, plus the box
/// `[lo, hi)` outside which it leaves the baseline untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub axes: [f64; 3],
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Blob {
    /// Squared normalized ellipsoid radius of a point; 1 on the surface.
    pub fn rho2(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|i| ((p[i] - self.center[i]) / self.axes[i]).powi(2)).sum()
    }

    pub fn contains_box(&self, p: [usize; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] && p[i] < self.hi[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vessel {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl Vessel {
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        let ab: Vec<f64> = (0..3).map(|i| self.b[i] - self.a[i]).collect();
        let ap: Vec<f64> = (0..3).map(|i| p[i] - self.a[i]).collect();
        let len2: f64 = ab.iter().map(|x| x * x).sum();
        let t = if len2 > 0.0 { (ap.iter().zip(&ab).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0) } else { 0.0 };
        (0..3).map(|i| (ap[i] - t * ab[i]).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SynthCase {
    pub id: String,
    pub label: Label,
    /// The volume without lesions.
    pub baseline: Volume,
    pub volume: Volume,
    pub blobs: Vec<Blob>,
    pub vessels: Vec<Vessel>,
}

fn center(dims: [usize; 3]) -> [f64; 3] {
    dims.map(|d| (d as f64 - 1.0) / 2.0)
}

/// Squared normalized radius of the lung ellipsoid.
fn lung_rho2(dims: [usize; 3], p: [f64; 3]) -> f64 {
    let c = center(dims);
    (0..3).map(|i| ((p[i] - c[i]) / (dims[i] as f64 / 2.0)).powi(2)).sum()
}

fn point(x: usize, y: usize, z: usize) -> [f64; 3] {
    [x as f64, y as f64, z as f64]
}

fn random_lung_point(rng: &mut ChaCha8Rng, dims: [usize; 3], max_rho2: f64) -> [f64; 3] {
    loop {
        let p = dims.map(|d| rng.random_range(0.0..d as f64 - 1.0));
        if lung_rho2(dims, p) <= max_rho2 {
            return p;
        }
    }
}

/// Lesion-free intensities and the vessels drawn into them.
fn clean_background(dims: [usize; 3], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vessel>) {
    let shading: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let f = [0, 1, 2].map(|_| rng.random_range(0..=2) as f64);
            (f, rng.random_range(4.0..8.0), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let n_vessels = rng.random_range(4..=6);
    let vessels: Vec<Vessel> = (0..n_vessels)
        .map(|_| Vessel {
            a: random_lung_point(rng, dims, 0.8),
            b: random_lung_point(rng, dims, 0.8),
            radius: rng.random_range(1.0..1.6),
        })
        .collect();

    let [dx, dy, dz] = dims;
    let mut data = vec![0.0; dx * dy * dz];
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let p = point(x, y, z);
                let i = x + dx * (y + dy * z);
                if lung_rho2(dims, p) > 1.0 {
                    data[i] = WALL;
                    continue;
                }
                let mut v = PARENCHYMA;
                for (f, amp, phase) in &shading {
                    let arg: f64 = (0..3).map(|k| f[k] * p[k] / dims[k] as f64).sum::<f64>() * std::f64::consts::TAU;
                    v += amp * (arg + phase).cos();
                }
                let s = vessels.iter().map(|ves| (ves.radius + 0.5 - ves.distance(p)).clamp(0.0, 1.0)).fold(0.0, f64::max);
                data[i] = v * (1.0 - s) + VESSEL * s;
            }
        }
    }
    (data, vessels)
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Blurred ellipsoid indicator over the blob box, x-fastest.
fn blob_alpha(blob: &Blob, sigma: f64) -> Vec<f64> {
    let n = [0, 1, 2].map(|i| blob.hi[i] - blob.lo[i]);
    let mut a = vec![0.0; n[0] * n[1] * n[2]];
    let idx = |x: usize, y: usize, z: usize| x + n[0] * (y + n[1] * z);
    for z in 0..n[2] {
        for y in 0..n[1] {
            for x in 0..n[0] {
                let p = point(x + blob.lo[0], y + blob.lo[1], z + blob.lo[2]);
                if blob.rho2(p) <= 1.0 {
                    a[idx(x, y, z)] = 1.0;
                }
            }
        }
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    for axis in 0..3 {
        let src = a.clone();
        for z in 0..n[2] {
            for y in 0..n[1] {
                for x in 0..n[0] {
                    let pos = [x, y, z];
                    let mut acc = 0.0;
                    for (t, w) in taps.iter().enumerate() {
                        let q = pos[axis] as isize + t as isize - r;
                        if q < 0 || q >= n[axis] as isize {
                            continue;
                        }
                        let mut p = pos;
                        p[axis] = q as usize;
                        acc += w * src[idx(p[0], p[1], p[2])];
                    }
                    a[idx(x, y, z)] = acc;
                }
            }
        }
    }
    a
}

/// Approximate distance from `p` to the blob surface, in voxels.
fn blob_clearance(blob: &Blob, p: [f64; 3]) -> f64 {
    let min_axis = blob.axes.iter().copied().fold(f64::INFINITY, f64::min);
    (blob.rho2(p).sqrt() - 1.0) * min_axis
}

fn random_blob(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Blob {
    let scale = dims.iter().copied().min().unwrap_or(1) as f64;
    let axes = [0, 1, 2].map(|_| rng.random_range(0.15 * scale..0.25 * scale));
    let center = random_lung_point(rng, dims, 0.36);
    let margin = (3.0 * BLUR_SIGMA).ceil();
    let lo = [0, 1, 2].map(|i| (center[i] - axes[i] - margin).floor().max(0.0) as usize);
    let hi = [0, 1, 2].map(|i| ((center[i] + axes[i] + margin).ceil() as usize + 1).min(dims[i]));
    Blob { center, axes, lo, hi }
}

/// Generates patient `index`; the first `n_normal` indices are normal.
pub fn generate_case(params: &SynthParams, index: usize) -> SynthCase {
    let dims = params.dims;
    let label = if index < params.n_normal { Label::Normal } else { Label::Abnormal };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "synth", index as u64));
    let (clean, vessels) = clean_background(dims, &mut rng);
    let noise_dist = Normal::new(0.0, NOISE_SD).expect("positive noise sd");
    let noise: Vec<f64> = (0..clean.len()).map(|_| noise_dist.sample(&mut rng)).collect();

    let blobs: Vec<Blob> = match label {
        Label::Normal => Vec::new(),
        Label::Abnormal => (0..rng.random_range(1..=4)).map(|_| random_blob(&mut rng, dims)).collect(),
    };
    let mut lesioned = clean.clone();
    let [dx, dy, _] = dims;
    for blob in &blobs {
        let alpha = blob_alpha(blob, BLUR_SIGMA);
        let n = [0, 1, 2].map(|i| blob.hi[i] - blob.lo[i]);
        for z in 0..n[2] {
            for y in 0..n[1] {
                for x in 0..n[0] {
                    let (gx, gy, gz) = (x + blob.lo[0], y + blob.lo[1], z + blob.lo[2]);
                    if lung_rho2(dims, point(gx, gy, gz)) > 1.0 {
                        continue;
                    }
                    let a = alpha[x + n[0] * (y + n[1] * z)];
                    let i = gx + dx * (gy + dy * gz);
                    lesioned[i] = lesioned[i] * (1.0 - a) + LESION * a;
                }
            }
        }
    }

    let finish = |v: &[f64]| -> Volume {
        let data = v.iter().zip(&noise).map(|(a, b)| (a + b).round()).collect();
        Volume::new(dims, [1.0; 3], 1, data).expect("generator produces valid volumes")
    };
    SynthCase {
        id: format!("p{index:03}"),
        label,
        baseline: finish(&clean),
        volume: finish(&lesioned),
        blobs,
        vessels,
    }
}

/// Every `step`-th element, so at most `cap` remain.
fn thin<T: Clone>(items: Vec<T>, cap: usize) -> Vec<T> {
    if items.len() <= cap {
        return items;
    }
    let step = items.len().div_ceil(cap);
    items.into_iter().step_by(step).collect()
}

/// Markers a designer would draw on an abnormal volume: lesion cores and
/// clean parenchyma away from lesions and vessels. `None` for normal cases.
pub fn auto_markers(case: &SynthCase) -> Option<MarkerSet> {
    if case.blobs.is_empty() {
        return None;
    }
    let dims = case.volume.dims();
    let mut lesion = Vec::new();
    let mut tissue = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = point(x, y, z);
                if x % 2 == 0 && y % 2 == 0 && z % 2 == 0 && case.blobs.iter().any(|b| b.rho2(p) <= 0.25) {
                    lesion.push(VoxelCoord::new(x, y, z));
                }
                let clear = lung_rho2(dims, p) <= 0.8
                    && case.blobs.iter().all(|b| blob_clearance(b, p) > 2.0 * BLUR_SIGMA)
                    && case.vessels.iter().all(|v| v.distance(p) > v.radius + 2.0);
                if x % 4 == 0 && y % 4 == 0 && z % 4 == 0 && clear {
                    tissue.push(VoxelCoord::new(x, y, z));
                }
            }
        }
    }
    let mut markers = Vec::new();
    if !lesion.is_empty() {
        markers.push(Marker { label: Label::Abnormal, voxels: thin(lesion, MARKER_CAP) });
    }
    if !tissue.is_empty() {
        markers.push(Marker { label: Label::Normal, voxels: thin(tissue, MARKER_CAP) });
    }
    Some(MarkerSet { volume_id: case.id.clone(), markers })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthEntry {
    pub id: String,
    pub label: Label,
    pub blobs: Vec<Blob>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub params: SynthParams,
    pub patients: Vec<TruthEntry>,
}

/// Writes volumes, full-box masks, lesion ground truth, auto markers, a
/// manifest and a ready-to-use pipeline config under `out`.
///
/// Layout: `manifest.json`, `truth.json`, `pipeline.json`,
/// `volumes/<id>.vvf.json`, `masks/<id>_mask.vvf.json`,
/// `markers/<id>.markers.json`.
pub fn write_dataset(params: &SynthParams, out: &Path) -> anyhow::Result<Manifest> {
    anyhow::ensure!(params.dims.iter().all(|&d| d >= 32), "synthetic dims must be at least 32 per axis, got {:?}", params.dims);
    let n = params.n_normal + params.n_abnormal;
    let entries: Vec<(PatientEntry, TruthEntry)> = (0..n)
        .into_par_iter()
        .map(|i| -> anyhow::Result<_> {
            let case = generate_case(params, i);
            let vol_rel = format!("volumes/{}.vvf.json", case.id);
            let mask_rel = format!("masks/{}_mask.vvf.json", case.id);
            save_volume(&case.volume, out.join(&vol_rel), Dtype::I16)?;
            save_mask(&Mask::full(params.dims)?, out.join(&mask_rel), case.volume.spacing())?;
            if let Some(markers) = auto_markers(&case) {
                markers.save(out.join("markers").join(format!("{}.markers.json", case.id)))?;
            }
            Ok((
                PatientEntry { id: case.id.clone(), label: Some(case.label), volumes: vec![vol_rel], masks: vec![mask_rel] },
                TruthEntry { id: case.id, label: case.label, blobs: case.blobs },
            ))
        })
        .collect::<anyhow::Result<_>>()?;
    let (patients, truth): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
    let manifest = Manifest { patients };
    manifest.save(out.join("manifest.json"))?;
    write_json(&out.join("truth.json"), &Truth { params: params.clone(), patients: truth })?;

    let config = PipelineConfig { resize: params.dims, seed: params.seed, ..PipelineConfig::for_synthetic() };
    config.save(&out.join("pipeline.json")).context("writing pipeline config")?;
    Ok(manifest)
}
