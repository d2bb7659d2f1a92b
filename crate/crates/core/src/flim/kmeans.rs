use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::patch::PatchMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties resolve to the lowest index.
fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids = vec![rows[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick].to_vec();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations on raw rows (`data.len() == n * dim`).
pub fn kmeans_rows(data: &[f64], dim: usize, params: &KMeansParams) -> Result<Vec<Vec<f64>>> {
    let n = if dim == 0 { 0 } else { data.len() / dim };
    if params.k == 0 || n < params.k {
        return Err(Error::TooFewPatches { rows: n, k: params.k });
    }
    let rows: Vec<&[f64]> = data.chunks_exact(dim).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(&rows, params.k, &mut rng);
    let mut assign = vec![usize::MAX; n];

    for _ in 0..params.max_iters {
        let mut changed = false;
        for (a, r) in assign.iter_mut().zip(&rows) {
            let (j, _) = nearest(r, &centroids);
            changed |= *a != j;
            *a = j;
        }
        let mut sums = vec![vec![0.0; dim]; params.k];
        let mut counts = vec![0usize; params.k];
        for (&j, r) in assign.iter().zip(&rows) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(r.iter()) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..params.k {
            // empty clusters keep their previous centroid
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            let next: Vec<f64> = sums[j].iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if !changed || shift < params.tol {
            break;
        }
    }
    Ok(centroids)
}

/// K-means++ seeded Lloyd clustering of patch rows. Deterministic for a
/// fixed `(patches, params)`.
pub fn kmeans(patches: &PatchMatrix, params: &KMeansParams) -> Result<Vec<Vec<f64>>> {
    kmeans_rows(&patches.data, patches.dim, params)
}

/// Sum of squared distances from each row to its nearest centroid.
pub fn inertia(data: &[f64], dim: usize, centroids: &[Vec<f64>]) -> f64 {
    data.chunks_exact(dim).map(|r| nearest(r, centroids).1).sum()
}
