use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use flim_core::fsutil::{read_json, write_json};
use flim_core::{ConvLayerSpec, StandardizerConfig, SvmParams};

fn default_layers() -> Vec<ConvLayerSpec> {
    vec![ConvLayerSpec::default(), ConvLayerSpec::default()]
}

fn default_resize() -> [usize; 3] {
    [200; 3]
}

fn default_resample_mm() -> f64 {
    1.0
}

fn default_n_splits() -> usize {
    5
}

/// Everything a pipeline run needs. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Manifest of unprocessed volumes and their lung masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<PathBuf>,
    /// Manifest of preprocessed volumes.
    pub data: PathBuf,
    /// Directory of `<volume id>.markers.json` files.
    pub markers: PathBuf,
    pub splits: PathBuf,
    /// Directory receiving one `split_<k>` folder of model files per split.
    pub models: PathBuf,
    #[serde(default)]
    pub standardizer: StandardizerConfig,
    #[serde(default = "default_layers")]
    pub layers: Vec<ConvLayerSpec>,
    #[serde(default)]
    pub svm: SvmParams,
    #[serde(default = "default_resize")]
    pub resize: [usize; 3],
    #[serde(default = "default_resample_mm")]
    pub resample_mm: f64,
    #[serde(default)]
    pub crop_margin: usize,
    /// Threshold for the fallback lung mask; `None` makes a missing mask an
    /// error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive_mask_threshold: Option<f64>,
    #[serde(default = "default_n_splits")]
    pub n_splits: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    /// Layout written next to a synthetic dataset: raw volumes in place,
    /// preprocessed ones under `prep/`, models under `models/`.
    pub fn for_synthetic() -> Self {
        Self {
            raw: Some("manifest.json".into()),
            data: "prep/manifest.json".into(),
            markers: "markers".into(),
            splits: "splits.json".into(),
            models: "models".into(),
            standardizer: StandardizerConfig::default(),
            layers: default_layers(),
            svm: SvmParams::default(),
            resize: default_resize(),
            resample_mm: default_resample_mm(),
            crop_margin: 0,
            naive_mask_threshold: None,
            n_splits: default_n_splits(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut cfg: Self = read_json(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        Ok(write_json(path, self)?)
    }

    /// Makes every relative path relative to `base` instead.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(raw) = self.raw.as_mut() {
            fix(raw);
        }
        for p in [&mut self.data, &mut self.markers, &mut self.splits, &mut self.models] {
            fix(p);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.standardizer.validate()?;
        anyhow::ensure!(!self.layers.is_empty(), "config lists no layers");
        for spec in &self.layers {
            spec.validate()?;
        }
        anyhow::ensure!(self.svm.c > 0.0 && self.svm.tol > 0.0, "svm c and tol must be positive");
        anyhow::ensure!(self.resize.iter().all(|&d| d >= 1), "resize dims must be at least 1");
        let field = self.layers.iter().fold([1usize; 3], |acc, l| {
            let rf = l.patch.receptive_field();
            [0, 1, 2].map(|i| acc[i].max(rf[i]))
        });
        anyhow::ensure!(
            (0..3).all(|i| self.resize[i] >= field[i]),
            "resize dims {:?} are smaller than the patch receptive field {:?}",
            self.resize,
            field
        );
        anyhow::ensure!(self.resample_mm > 0.0, "resample_mm must be positive");
        anyhow::ensure!(self.n_splits >= 1, "n_splits must be at least 1");
        Ok(())
    }

    pub fn split_dir(&self, split: usize) -> PathBuf {
        self.models.join(format!("split_{split}"))
    }

    pub fn marker_path(&self, volume_id: &str) -> PathBuf {
        self.markers.join(format!("{volume_id}.markers.json"))
    }
}
