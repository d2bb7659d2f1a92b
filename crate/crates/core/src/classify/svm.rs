//! Linear soft-margin SVM trained by dual coordinate descent.
//!
//! The bias is folded in as an extra constant feature, so the problem is
//!
//! ```text
//! min  1/2 (|w|^2 + b^2) + C sum_i max(0, 1 - y_i (w.x_i + b))
//! ```
//!
//! and its dual has box constraints only, `0 <= alpha_i <= C`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// Standard deviations at or below this are treated as constant features.
const SCALE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, tol: 1e-4, max_iters: 10_000, seed: 0 }
    }
}

/// Per-feature z-score fitted on training descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| (s / n).sqrt()).map(|sd| if sd > SCALE_EPS { sd } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub scaler: Scaler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub margin: f64,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), found: x.len() });
        }
        let z = self.scaler.transform(x);
        let margin = dot(&self.w, &z) + self.b;
        Ok(Prediction { label: Label::from_sign(margin), margin })
    }
}

pub fn predict(model: &SvmModel, x: &[f64]) -> Result<Prediction> {
    model.predict(x)
}

/// Training outcome with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub model: SvmModel,
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub max_kkt_violation: f64,
    pub primal: f64,
    pub dual: f64,
    pub converged: bool,
}

impl SvmFit {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient of the dual at coordinate `i`.
#[inline]
fn projected_gradient(g: f64, alpha: f64, c: f64) -> f64 {
    if alpha <= 0.0 {
        g.min(0.0)
    } else if alpha >= c {
        g.max(0.0)
    } else {
        g
    }
}

fn objectives(z: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, alpha: &[f64], c: f64) -> (f64, f64, f64) {
    let norm2 = dot(w, w) + b * b;
    let mut hinge = 0.0;
    let mut viol: f64 = 0.0;
    for ((zi, &yi), &ai) in z.iter().zip(y).zip(alpha) {
        let m = yi * (dot(w, zi) + b);
        hinge += (1.0 - m).max(0.0);
        viol = viol.max(projected_gradient(m - 1.0, ai, c).abs());
    }
    let primal = 0.5 * norm2 + c * hinge;
    let dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
    (primal, dual, viol)
}

/// Fits the scaler, then runs seeded dual coordinate descent until the
/// largest KKT violation is at most `tol` and the duality gap is at most
/// `tol * (1 + |primal|)`, or `max_iters` epochs elapse.
pub fn train_svm_detailed(x: &[Vec<f64>], y: &[Label], params: &SvmParams) -> Result<SvmFit> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch { expected: x.len(), found: y.len() });
    }
    if !(params.c > 0.0) {
        return Err(Error::InvalidSpec(format!("C must be positive, got {}", params.c)));
    }
    if !y.contains(&Label::Normal) || !y.contains(&Label::Abnormal) {
        return Err(Error::SingleClassData);
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimMismatch { expected: d, found: row.len() });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { sample: i, feature: j });
        }
    }

    let scaler = Scaler::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect();
    let ys: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let c = params.c;
    let n = z.len();
    let qd: Vec<f64> = z.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut epochs = 0;
    let (mut primal, mut dual, mut viol) = objectives(&z, &ys, &w, b, &alpha, c);
    let mut converged = false;
    while epochs < params.max_iters {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = ys[i] * (dot(&w, &z[i]) + b) - 1.0;
            if projected_gradient(g, alpha[i], c) == 0.0 {
                continue;
            }
            let old = alpha[i];
            let new = (old - g / qd[i]).clamp(0.0, c);
            let step = (new - old) * ys[i];
            if step != 0.0 {
                for (wj, zj) in w.iter_mut().zip(&z[i]) {
                    *wj += step * zj;
                }
                b += step;
                alpha[i] = new;
            }
        }
        epochs += 1;
        (primal, dual, viol) = objectives(&z, &ys, &w, b, &alpha, c);
        if viol <= params.tol && primal - dual <= params.tol * (1.0 + primal.abs()) {
            converged = true;
            break;
        }
    }

    Ok(SvmFit {
        model: SvmModel { w, b, c, scaler },
        alpha,
        epochs,
        max_kkt_violation: viol,
        primal,
        dual,
        converged,
    })
}

pub fn train_svm(x: &[Vec<f64>], y: &[Label], params: &SvmParams) -> Result<SvmModel> {
    train_svm_detailed(x, y, params).map(|f| f.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn labels(signs: &[f64]) -> Vec<Label> {
        signs.iter().map(|&s| Label::from_sign(s)).collect()
    }

    #[test]
    fn symmetric_pair_splits_at_zero() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = labels(&[-1.0, 1.0]);
        let fit = train_svm_detailed(&x, &y, &SvmParams { c: 1e3, ..Default::default() }).unwrap();
        assert!(fit.converged);
        let m = &fit.model;
        assert!(m.b.abs() < 1e-9);
        assert!(m.predict(&[0.0]).unwrap().margin.abs() < 1e-9);
        assert_eq!(m.predict(&[-1.0]).unwrap().label, Label::Normal);
        assert_eq!(m.predict(&[1.0]).unwrap().label, Label::Abnormal);
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..10 {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            x.push(vec![s * 2.0 + rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)]);
            y.push(Label::from_sign(s));
        }
        let m = train_svm(&x, &y, &SvmParams { c: 100.0, ..Default::default() }).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(m.predict(xi).unwrap().label, *yi);
        }
    }

    #[test]
    fn zero_margin_predicts_abnormal() {
        let m = SvmModel { w: vec![1.0, -1.0], b: 0.0, c: 1.0, scaler: Scaler { mean: vec![0.0; 2], scale: vec![1.0; 2] } };
        let p = m.predict(&[2.0, 2.0]).unwrap();
        assert_eq!(p.margin, 0.0);
        assert_eq!(p.label, Label::Abnormal);
        assert!(matches!(m.predict(&[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn margin_matches_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let d = rng.random_range(1..20);
            let m = SvmModel {
                w: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                b: rng.random_range(-1.0..1.0),
                c: 1.0,
                scaler: Scaler {
                    mean: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    scale: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
                },
            };
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut expect = m.b;
            for j in 0..d {
                expect += m.w[j] * (x[j] - m.scaler.mean[j]) / m.scaler.scale[j];
            }
            assert!((m.predict(&x).unwrap().margin - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_single_class_and_nan() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train_svm(&x, &labels(&[1.0, 1.0]), &SvmParams::default()), Err(Error::SingleClassData)));
        let bad = vec![vec![1.0], vec![f64::NAN]];
        assert!(matches!(
            train_svm(&bad, &labels(&[1.0, -1.0]), &SvmParams::default()),
            Err(Error::NonFiniteFeature { sample: 1, feature: 0 })
        ));
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Label> = (0..30).map(|i| Label::from_sign(if x[i][0] + 0.3 * x[i][1] > 0.0 { 1.0 } else { -1.0 })).collect();
        let p = SvmParams { seed: 11, ..Default::default() };
        assert_eq!(train_svm(&x, &y, &p).unwrap(), train_svm(&x, &y, &p).unwrap());
    }

    #[test]
    fn constant_feature_gets_zero_weight() {
        let x = vec![vec![0.0, -1.0], vec![0.0, 1.0], vec![0.0, -2.0], vec![0.0, 2.0]];
        let m = train_svm(&x, &labels(&[-1.0, 1.0, -1.0, 1.0]), &SvmParams::default()).unwrap();
        assert_eq!(m.w[0], 0.0);
        assert!(m.predict(&[5.0, 1.0]).unwrap().margin.is_finite());
    }
}
