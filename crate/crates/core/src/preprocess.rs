//! Intensity standardization.
//!
//! The lung histogram has a dark parenchyma summit and a bright
//! vessel/mediastinum summit. Both are located on a smoothed histogram and a
//! two-point affine map sends them onto fixed target intensities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volcore::{Mask, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizerConfig {
    pub bins: usize,
    /// Odd width of the centered moving average.
    pub smoothing_window: usize,
    /// Minimum summit prominence as a fraction of the smoothed maximum.
    pub min_prominence: f64,
    pub targets: [f64; 2],
    pub clamp: [f64; 2],
}

impl Default for StandardizerConfig {
    fn default() -> Self {
        Self { bins: 256, smoothing_window: 5, min_prominence: 0.05, targets: [200.0, 1200.0], clamp: [0.0, 4095.0] }
    }
}

impl StandardizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return bad("smoothing_window must be odd");
        }
        if !(self.min_prominence > 0.0 && self.min_prominence < 1.0) {
            return bad("min_prominence must lie in (0, 1)");
        }
        let [t1, t2] = self.targets;
        let [lo, hi] = self.clamp;
        if !(t1 < t2 && lo <= t1 && t2 <= hi) {
            return bad("require clamp.lo <= t1 < t2 <= clamp.hi");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn tallied_values<'a>(v: &'a Volume, mask: Option<&'a Mask>) -> Result<Vec<f64>> {
    if v.channels() != 1 {
        return Err(Error::ChannelMismatch { expected: 1, found: v.channels() });
    }
    match mask {
        None => Ok(v.data().to_vec()),
        Some(m) => {
            if m.dims() != v.dims() {
                return Err(Error::DimsMismatch { left: v.dims(), right: m.dims() });
            }
            let values: Vec<f64> = v.data().iter().zip(m.data()).filter(|(_, &b)| b != 0).map(|(&x, _)| x).collect();
            if values.is_empty() {
                return Err(Error::EmptyMask);
            }
            Ok(values)
        }
    }
}

/// Equal-width histogram over `[min, max]` of the tallied voxels.
pub fn compute_histogram(v: &Volume, mask: Option<&Mask>, cfg: &StandardizerConfig) -> Result<Histogram> {
    cfg.validate()?;
    let values = tallied_values(v, mask)?;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if lo == hi {
        return Err(Error::DegenerateRange(lo));
    }
    let bins = cfg.bins;
    let mut counts = vec![0u64; bins];
    let scale = bins as f64 / (hi - lo);
    for x in values {
        let i = (((x - lo) * scale).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}

/// Centered moving average; the window is truncated at the edges.
pub fn smooth_counts(counts: &[u64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = counts.len();
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half).min(n - 1);
            counts[a..=b].iter().map(|&c| c as f64).sum::<f64>() / (b - a + 1) as f64
        })
        .collect()
}

/// Topographic prominence of the interior peak at `i`.
fn prominence(s: &[f64], i: usize) -> f64 {
    let peak = s[i];
    let mut left_min = peak;
    for j in (0..i).rev() {
        if s[j] > peak {
            break;
        }
        left_min = left_min.min(s[j]);
    }
    let mut right_min = peak;
    for &v in &s[i + 1..] {
        if v > peak {
            break;
        }
        right_min = right_min.min(v);
    }
    peak - left_min.max(right_min)
}

/// Indices of interior local maxima whose prominence passes the threshold.
/// Plateaus report their leftmost bin.
fn qualifying_peaks(s: &[f64], min_prominence: f64) -> Vec<usize> {
    let max = s.iter().copied().fold(0.0, f64::max);
    let threshold = min_prominence * max;
    let mut peaks = Vec::new();
    let n = s.len();
    let mut i = 1;
    while i + 1 < n {
        if s[i] > s[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] < s[i] && prominence(s, i) >= threshold {
                peaks.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Locates the low summit (first qualifying peak from the dark edge) and the
/// high summit (first from the bright edge), as bin centers.
pub fn find_summits(h: &Histogram, cfg: &StandardizerConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let smoothed = smooth_counts(&h.counts, cfg.smoothing_window);
    let peaks = qualifying_peaks(&smoothed, cfg.min_prominence);
    let (&first, &last) = match (peaks.first(), peaks.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::TwoSummitsNotFound),
    };
    if first >= last {
        return Err(Error::TwoSummitsNotFound);
    }
    Ok((h.bin_center(first), h.bin_center(last)))
}

/// The increasing affine map `s1 -> t1`, `s2 -> t2`, followed by clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummitMap {
    pub summits: (f64, f64),
    pub targets: [f64; 2],
    pub clamp: [f64; 2],
}

impl SummitMap {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let (s1, s2) = self.summits;
        let [t1, t2] = self.targets;
        let y = t1 + (x - s1) * (t2 - t1) / (s2 - s1);
        y.clamp(self.clamp[0], self.clamp[1])
    }
}

pub fn fit_summit_map(v: &Volume, mask: Option<&Mask>, cfg: &StandardizerConfig) -> Result<SummitMap> {
    let h = compute_histogram(v, mask, cfg)?;
    let summits = find_summits(&h, cfg)?;
    Ok(SummitMap { summits, targets: cfg.targets, clamp: cfg.clamp })
}

/// Maps every voxel so the histogram summits land on `cfg.targets`.
pub fn standardize(v: &Volume, mask: Option<&Mask>, cfg: &StandardizerConfig) -> Result<Volume> {
    let map = fit_summit_map(v, mask, cfg)?;
    v.map(|x| map.apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn hist(counts: Vec<u64>) -> Histogram {
        Histogram { lo: 0.0, hi: counts.len() as f64, counts }
    }

    fn bimodal(seed: u64, modes: (f64, f64), n: [usize; 3]) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(modes.0, 40.0).unwrap();
        let b = Normal::new(modes.1, 60.0).unwrap();
        let mut k = 0usize;
        Volume::from_fn(n, [1.0; 3], 1, |_, _, _, _| {
            k += 1;
            if k % 4 == 0 { b.sample(&mut rng) } else { a.sample(&mut rng) }
        })
        .unwrap()
    }

    /// Exhaustive oracle: argmax of the smoothed histogram within each half
    /// of the intensity axis split at the midpoint of the two generating modes.
    fn split_argmax(h: &Histogram, window: usize, split: f64) -> (f64, f64) {
        let s = smooth_counts(&h.counts, window);
        let mut best = [(f64::MIN, 0usize); 2];
        for (i, &v) in s.iter().enumerate() {
            let side = usize::from(h.bin_center(i) > split);
            if v > best[side].0 {
                best[side] = (v, i);
            }
        }
        (h.bin_center(best[0].1), h.bin_center(best[1].1))
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let v = Volume::filled([3, 3, 3], [1.0; 3], 1, 5.0).unwrap();
        assert!(matches!(compute_histogram(&v, None, &StandardizerConfig::default()), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn two_bin_tally() {
        let v = Volume::new([2, 2, 2], [1.0; 3], 1, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let cfg = StandardizerConfig { bins: 2, ..Default::default() };
        assert_eq!(compute_histogram(&v, None, &cfg).unwrap().counts, vec![4, 4]);
    }

    #[test]
    fn random_tally_matches_binning_oracle() {
        let v = bimodal(5, (100.0, 800.0), [10, 10, 10]);
        let cfg = StandardizerConfig { bins: 64, ..Default::default() };
        let h = compute_histogram(&v, None, &cfg).unwrap();
        let (lo, hi) = v.min_max();
        let w = (hi - lo) / 64.0;
        let mut oracle = vec![0u64; 64];
        for &x in v.data() {
            let bin = (0..64).find(|&i| x < lo + (i + 1) as f64 * w).unwrap_or(63);
            oracle[bin] += 1;
        }
        assert_eq!(h.counts, oracle);
        assert_eq!(h.total(), 1000);
    }

    #[test]
    fn masked_tally_counts_mask_only() {
        let v = bimodal(1, (100.0, 800.0), [6, 6, 6]);
        let m = Mask::from_fn([6, 6, 6], |x, _, _| x < 3).unwrap();
        let h = compute_histogram(&v, Some(&m), &StandardizerConfig::default()).unwrap();
        assert_eq!(h.total(), 108);
        let empty = Mask::new([6, 6, 6], vec![0; 216]).unwrap();
        assert!(matches!(compute_histogram(&v, Some(&empty), &StandardizerConfig::default()), Err(Error::EmptyMask)));
    }

    #[test]
    fn bimodal_summits_near_modes() {
        let v = bimodal(7, (100.0, 800.0), [40, 40, 40]);
        let cfg = StandardizerConfig::default();
        let h = compute_histogram(&v, None, &cfg).unwrap();
        let (s1, s2) = find_summits(&h, &cfg).unwrap();
        let (o1, o2) = split_argmax(&h, cfg.smoothing_window, 450.0);
        let w = h.bin_width();
        assert!((s1 - o1).abs() <= 2.0 * w, "{s1} vs oracle {o1}");
        assert!((s2 - o2).abs() <= 2.0 * w, "{s2} vs oracle {o2}");
        assert!((s1 - 100.0).abs() <= 2.0 * w);
        assert!((s2 - 800.0).abs() <= 2.0 * w);
    }

    #[test]
    fn decreasing_histogram_has_no_summits() {
        let h = hist((0..32).rev().map(|c| c * 10).collect());
        assert!(matches!(find_summits(&h, &StandardizerConfig::default()), Err(Error::TwoSummitsNotFound)));
    }

    #[test]
    fn single_spike_rejected() {
        let mut counts = vec![0u64; 32];
        counts[16] = 1000;
        assert!(matches!(find_summits(&hist(counts), &StandardizerConfig::default()), Err(Error::TwoSummitsNotFound)));
    }

    #[test]
    fn small_bumps_below_prominence_ignored() {
        let mut counts = vec![0u64; 64];
        for i in 0..64 {
            let a = 1000.0 * (-((i as f64 - 12.0) / 3.0).powi(2)).exp();
            let b = 400.0 * (-((i as f64 - 50.0) / 4.0).powi(2)).exp();
            counts[i] = (a + b) as u64;
        }
        // narrow noise bump between the modes, 1% of the maximum
        counts[30] += 10;
        let cfg = StandardizerConfig { smoothing_window: 1, ..Default::default() };
        let (s1, s2) = find_summits(&hist(counts), &cfg).unwrap();
        assert_eq!((s1, s2), (12.5, 50.5));
    }

    #[test]
    fn standardize_moves_summits_to_targets() {
        let v = bimodal(3, (100.0, 800.0), [40, 40, 40]);
        let cfg = StandardizerConfig::default();
        let out = standardize(&v, None, &cfg).unwrap();
        let h = compute_histogram(&out, None, &cfg).unwrap();
        let (s1, s2) = find_summits(&h, &cfg).unwrap();
        assert!((s1 - 200.0).abs() <= 2.0 * h.bin_width());
        assert!((s2 - 1200.0).abs() <= 2.0 * h.bin_width());
        let (lo, hi) = out.min_max();
        assert!(lo >= cfg.clamp[0] && hi <= cfg.clamp[1]);
    }

    #[test]
    fn already_standard_volume_is_near_identity() {
        let v = bimodal(8, (200.0, 1200.0), [40, 40, 40]);
        let cfg = StandardizerConfig::default();
        let h = compute_histogram(&v, None, &cfg).unwrap();
        let out = standardize(&v, None, &cfg).unwrap();
        for (a, b) in v.data().iter().zip(out.data()) {
            let expect = a.clamp(cfg.clamp[0], cfg.clamp[1]);
            // summits within a bin of the targets: the map stays close to identity
            assert!((expect - b).abs() <= 4.0 * h.bin_width(), "{a} -> {b}");
        }
    }

    #[test]
    fn summit_maps_exactly_to_target() {
        let map = SummitMap { summits: (103.25, 797.5), targets: [200.0, 1200.0], clamp: [0.0, 4095.0] };
        assert_eq!(map.apply(103.25), 200.0);
        assert_eq!(map.apply(797.5), 1200.0);
        assert!(map.apply(300.0) < map.apply(300.5));
    }

    #[test]
    fn config_validation() {
        assert!(StandardizerConfig::default().validate().is_ok());
        assert!(StandardizerConfig { smoothing_window: 4, ..Default::default() }.validate().is_err());
        assert!(StandardizerConfig { targets: [5.0, 1.0], ..Default::default() }.validate().is_err());
        assert!(StandardizerConfig { min_prominence: 1.0, ..Default::default() }.validate().is_err());
        let json = serde_json::to_string(&StandardizerConfig::default()).unwrap();
        assert_eq!(json, r#"{"bins":256,"smoothing_window":5,"min_prominence":0.05,"targets":[200.0,1200.0],"clamp":[0.0,4095.0]}"#);
    }
}
