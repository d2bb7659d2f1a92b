//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code under test beyond
//! plain data accessors.

#![allow(dead_code)]

use std::collections::BTreeSet;

use flim_core::classify::SplitPlan;
use flim_core::{ConvLayer, Label, Volume};

/// Normalize, correlate, ReLU and max-pool with explicit loops over every
/// output cell, window voxel, tap and channel. Returns `(dims, data)` with
/// the same x-fastest, channel-innermost layout as [`Volume`].
pub fn conv_forward_oracle(map: &Volume, layer: &ConvLayer) -> ([usize; 3], Vec<f64>) {
    let dims = map.dims();
    let m = map.channels();
    let spec = &layer.spec;
    let half = spec.patch.size.map(|s| (s / 2) as i64);
    let d = spec.patch.dilation as i64;
    let norm = |x: f64, c: usize| {
        let s = &layer.stats;
        if s.center_only {
            x - s.mean[c]
        } else {
            (x - s.mean[c]) / (s.std[c] + s.epsilon)
        }
    };
    let act = |x: usize, y: usize, z: usize, k: usize| -> f64 {
        let w = &layer.kernels[k].weights;
        let mut sum = 0.0;
        let mut t = 0;
        for oz in -half[2]..=half[2] {
            for oy in -half[1]..=half[1] {
                for ox in -half[0]..=half[0] {
                    let (sx, sy, sz) = (x as i64 + ox * d, y as i64 + oy * d, z as i64 + oz * d);
                    let inside = sx >= 0 && sy >= 0 && sz >= 0 && (sx as usize) < dims[0] && (sy as usize) < dims[1] && (sz as usize) < dims[2];
                    for c in 0..m {
                        if inside {
                            sum += w[t * m + c] * norm(map.get(sx as usize, sy as usize, sz as usize, c), c);
                        }
                    }
                    t += 1;
                }
            }
        }
        (sum + layer.biases[k]).max(0.0)
    };
    let (size, stride) = (spec.pool_size, spec.pool_stride);
    let out_dims = dims.map(|n| (n + stride - 1) / stride);
    let nk = layer.kernels.len();
    let mut out = Vec::with_capacity(out_dims.iter().product::<usize>() * nk);
    for pz in 0..out_dims[2] {
        for py in 0..out_dims[1] {
            for px in 0..out_dims[0] {
                for k in 0..nk {
                    let mut best = f64::NEG_INFINITY;
                    for z in pz * stride..(pz * stride + size).min(dims[2]) {
                        for y in py * stride..(py * stride + size).min(dims[1]) {
                            for x in px * stride..(px * stride + size).min(dims[0]) {
                                best = best.max(act(x, y, z, k));
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    (out_dims, out)
}

/// Column z-scores with unit scale for (near) constant columns.
pub fn zscore(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut cols = Vec::with_capacity(d);
    for j in 0..d {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        cols.push((mean, if sd <= 1e-12 { 1.0 } else { sd }));
    }
    x.iter().map(|r| r.iter().zip(&cols).map(|(v, (m, s))| (v - m) / s).collect()).collect()
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Optimal value of the box-constrained SVM dual with the bias folded into
/// the kernel (`K = z.z' + 1`), found by enumerating every assignment of
/// each multiplier to {0, free, C} and solving the free block exactly.
/// Meant for a handful of points.
pub fn svm_dual_optimum(z: &[Vec<f64>], y: &[Label], c: f64) -> f64 {
    let n = z.len();
    let ys: Vec<f64> = y.iter().map(|l| if *l == Label::Abnormal { 1.0 } else { -1.0 }).collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| ys[i] * ys[j] * (z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>() + 1.0)).collect())
        .collect();
    let dual = |a: &[f64]| {
        let quad: f64 = (0..n).map(|i| (0..n).map(|j| a[i] * q[i][j] * a[j]).sum::<f64>()).sum();
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut best = 0.0;
    for code in 0..3usize.pow(n as u32) {
        let state: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 2 { c } else { 0.0 }).collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        if !free.is_empty() {
            let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| q[i][j]).collect()).collect();
            let b: Vec<f64> = free.iter().map(|&i| 1.0 - (0..n).filter(|&j| state[j] == 2).map(|j| q[i][j] * c).sum::<f64>()).collect();
            let Some(sol) = solve(a, b) else { continue };
            if sol.iter().any(|&v| v < -1e-12 || v > c + 1e-12) {
                continue;
            }
            for (&i, v) in free.iter().zip(sol) {
                alpha[i] = v.clamp(0.0, c);
            }
        }
        best = f64::max(best, dual(&alpha));
    }
    best
}

/// `1/2 (|w|^2 + b^2) + C sum hinge` on already scaled features.
pub fn svm_primal(z: &[Vec<f64>], y: &[Label], w: &[f64], b: f64, c: f64) -> f64 {
    let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    let hinge: f64 = z
        .iter()
        .zip(y)
        .map(|(zi, l)| {
            let s = if *l == Label::Abnormal { 1.0 } else { -1.0 };
            (1.0 - s * (zi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b)).max(0.0)
        })
        .sum();
    reg + c * hinge
}

/// `[[tn, fp], [fn, tp]]` (rows truth normal/abnormal).
pub fn accuracy_formula(m: [[u64; 2]; 2]) -> f64 {
    let t = (m[0][0] + m[0][1] + m[1][0] + m[1][1]) as f64;
    (m[0][0] + m[1][1]) as f64 / t
}

pub fn kappa_formula(m: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = m.map(|r| r.map(|v| v as f64));
    let t = a + b + c + d;
    let po = (a + d) / t;
    let pe = ((a + b) * (a + c) + (c + d) * (b + d)) / (t * t);
    if pe == 1.0 {
        0.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Checks one plan against the cohort; returns the first violation found.
pub fn check_plan(plan: &SplitPlan, cohort: &[(String, Label)]) -> Result<(), String> {
    let label = |id: &str| cohort.iter().find(|(p, _)| p == id).map(|(_, l)| *l);
    let subsets = [&plan.test, &plan.svm_train, &plan.flim_marker, &plan.flim_validation];
    let mut seen = BTreeSet::new();
    for s in subsets {
        for id in s {
            if label(id).is_none() {
                return Err(format!("unknown id {id}"));
            }
            if !seen.insert(id.clone()) {
                return Err(format!("id {id} appears twice"));
            }
        }
    }
    if seen.len() != cohort.len() {
        return Err(format!("{} of {} ids covered", seen.len(), cohort.len()));
    }
    for class in [Label::Normal, Label::Abnormal] {
        let total = cohort.iter().filter(|(_, l)| *l == class).count() as i64;
        let test = plan.test.iter().filter(|id| label(id) == Some(class)).count() as i64;
        let train = total - test;
        if (train - test).abs() > 1 {
            return Err(format!("{class}: {train} train vs {test} test"));
        }
    }
    if plan.flim_marker.len() != 3 || plan.flim_validation.len() != 3 {
        return Err(format!("flim subsets {} + {}", plan.flim_marker.len(), plan.flim_validation.len()));
    }
    if plan.flim_marker.iter().chain(&plan.flim_validation).any(|id| label(id) != Some(Label::Abnormal)) {
        return Err("flim subset holds a normal patient".into());
    }
    Ok(())
}
