use serde::{Deserialize, Serialize};

use super::patch::PatchMatrix;
use crate::error::{Error, Result};
use crate::volcore::Volume;

/// Per-channel statistics of the marker patches.
///
/// Applied as `(x - mean) / (std + epsilon)`, or `x - mean` when
/// `center_only` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub center_only: bool,
}

impl NormalizationStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Stats that leave a map unchanged: mean 0, `std + epsilon = 1`.
    pub fn identity(channels: usize, epsilon: f64) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0 - epsilon; channels], epsilon, center_only: false }
    }

    #[inline]
    pub fn apply(&self, c: usize, x: f64) -> f64 {
        if self.center_only {
            x - self.mean[c]
        } else {
            (x - self.mean[c]) / (self.std[c] + self.epsilon)
        }
    }
}

/// Mean and population standard deviation per channel over every in-grid
/// tap of every row. Zero-padded taps are excluded.
pub fn compute_norm_stats(patches: &PatchMatrix, epsilon: f64) -> Result<NormalizationStats> {
    if patches.rows() == 0 {
        return Err(Error::EmptyPatchSet);
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidSpec(format!("epsilon must be positive, got {epsilon}")));
    }
    let m = patches.channels;
    let mut sum = vec![0.0; m];
    let mut n = vec![0usize; m];
    for (i, (&x, &ok)) in patches.data.iter().zip(&patches.valid).enumerate() {
        if ok {
            sum[i % m] += x;
            n[i % m] += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&n).map(|(&s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect();
    let mut sq = vec![0.0; m];
    for (i, (&x, &ok)) in patches.data.iter().zip(&patches.valid).enumerate() {
        if ok {
            let d = x - mean[i % m];
            sq[i % m] += d * d;
        }
    }
    let std = sq.iter().zip(&n).map(|(&s, &k)| if k > 0 { (s / k as f64).sqrt() } else { 0.0 }).collect();
    Ok(NormalizationStats { mean, std, epsilon, center_only: false })
}

/// Normalizes each channel of a whole map.
pub fn normalize_map(map: &Volume, stats: &NormalizationStats) -> Result<Volume> {
    let m = map.channels();
    if m != stats.channels() {
        return Err(Error::ChannelMismatch { expected: stats.channels(), found: m });
    }
    let data = map.data().iter().enumerate().map(|(i, &x)| stats.apply(i % m, x)).collect();
    Volume::new(map.dims(), map.spacing(), m, data)
}

/// Normalizes patch rows in place of re-extracting them from a normalized
/// map: in-grid taps are transformed, padded taps stay 0.
pub fn normalize_patches(patches: &PatchMatrix, stats: &NormalizationStats) -> Result<PatchMatrix> {
    let m = patches.channels;
    if m != stats.channels() {
        return Err(Error::ChannelMismatch { expected: stats.channels(), found: m });
    }
    let data = patches
        .data
        .iter()
        .zip(&patches.valid)
        .enumerate()
        .map(|(i, (&x, &ok))| if ok { stats.apply(i % m, x) } else { 0.0 })
        .collect();
    Ok(PatchMatrix { data, ..patches.clone() })
}
