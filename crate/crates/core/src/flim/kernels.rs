use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a centroid counts as zero.
const ZERO_NORM: f64 = 1e-12;

/// A unit-norm filter, flattened like a patch row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kernel {
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Kernel) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| a * b).sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > ZERO_NORM).then(|| v.iter().map(|x| x / n).collect())
}

/// Each centroid scaled to unit Euclidean norm.
pub fn centroids_to_kernels(centroids: &[Vec<f64>]) -> Result<Vec<Kernel>> {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| unit(c).map(|weights| Kernel { weights }).ok_or(Error::ZeroCentroid(i)))
        .collect()
}

/// Flips `v` so its largest-magnitude component is positive (first index
/// wins ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Replaces a redundant kernel bank by its `k` leading principal directions.
///
/// Candidates are mean-centred, the covariance is eigendecomposed, and the
/// eigenvectors of the `k` largest eigenvalues are returned as unit,
/// mutually orthogonal kernels.
pub fn reduce_kernels_pca(candidates: &[Kernel], k: usize) -> Result<Vec<Kernel>> {
    if k == 0 || candidates.len() < k {
        return Err(Error::InsufficientKernels { available: candidates.len(), requested: k });
    }
    let dim = candidates[0].len();
    if candidates.iter().any(|c| c.len() != dim) {
        return Err(Error::DimMismatch { expected: dim, found: candidates.iter().map(Kernel::len).find(|&l| l != dim).unwrap() });
    }
    let n = candidates.len();
    let mut mean = vec![0.0; dim];
    for c in candidates {
        for (m, w) in mean.iter_mut().zip(&c.weights) {
            *m += w / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, dim, |i, j| candidates[i].weights[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = (top * dim as f64 * 1e-12).max(1e-300);
    let nonzero = order.iter().filter(|&&i| eig.eigenvalues[i] > cutoff).count();
    if nonzero < k {
        return Err(Error::RankDeficient { nonzero, requested: k });
    }
    order[..k]
        .iter()
        .map(|&i| {
            let col: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mut weights = unit(&col).ok_or(Error::RankDeficient { nonzero, requested: k })?;
            fix_sign(&mut weights);
            Ok(Kernel { weights })
        })
        .collect()
}
