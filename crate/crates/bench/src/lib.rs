//! Seeded inputs shared by the benchmarks.

use flim_core::flim::NormalizationStats;
use flim_core::{ConvLayer, ConvLayerSpec, Kernel, Label, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_volume(dims: [usize; 3], channels: usize, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(dims, [1.0; 3], channels, |_, _, _, _| rng.random_range(0.0..1000.0)).expect("valid dims")
}

/// A layer with random unit kernels over `channels` inputs.
pub fn random_layer(spec: ConvLayerSpec, channels: usize, seed: u64) -> ConvLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = spec.patch.taps() * channels;
    let kernels = (0..spec.n_kernels)
        .map(|_| {
            let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            Kernel { weights: w.into_iter().map(|v| v / n).collect() }
        })
        .collect();
    let stats = NormalizationStats { mean: vec![500.0; channels], std: vec![290.0; channels], epsilon: 1e-3, center_only: false };
    ConvLayer::new(spec, stats, kernels).expect("consistent layer")
}

/// `n` rows of `dim` features drawn from two shifted clouds.
pub fn two_clouds(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
            let shift = if label == Label::Abnormal { 0.3 } else { 0.0 };
            ((0..dim).map(|_| rng.random_range(-1.0..1.0) + shift).collect(), label)
        })
        .unzip()
}

pub fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}
