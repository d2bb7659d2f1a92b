//! The batch subcommands, callable as library functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use flim_core::archlab::EvalReport;
use flim_core::classify::{make_splits, ConfusionMatrix, SplitPlan, SvmModel, SvmParams};
use flim_core::dataset::{Dataset, Manifest, PatientEntry};
use flim_core::flim::{load_model, save_model, train_model, FlimModel, MarkerSet};
use flim_core::fsutil::{read_json, write_json};
use flim_core::pipeline::{descriptors, fit_svm, marker_samples, score};
use flim_core::preprocess::fit_summit_map;
use flim_core::seed::derive_seed;
use flim_core::volcore::{
    crop, crop_box, crop_mask, load_mask, load_volume, naive_lung_mask, resample_isotropic, resize_mask_nearest,
    resize_trilinear, save_volume, volume_stem, Dtype, Mask, Volume,
};
use flim_core::{ConvLayerSpec, Label};

use crate::config::PipelineConfig;

pub const MODEL_FILE: &str = "flim_model.json";
pub const SVM_FILE: &str = "svm.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";

/// What preprocessing did to one volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub mask: Option<PathBuf>,
    pub naive_mask_threshold: Option<f64>,
    pub resample_mm: f64,
    pub resampled_dims: [usize; 3],
    pub crop_lo: [usize; 3],
    pub crop_hi: [usize; 3],
    pub resize: [usize; 3],
    pub summits: [f64; 2],
    pub targets: [f64; 2],
    pub clamp: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub written: Vec<String>,
    /// `(volume id, error message)` for every volume that failed.
    pub failed: Vec<(String, String)>,
}

/// Resample, crop to the lung mask, resize and standardize one volume.
pub fn preprocess_volume(volume: &Path, mask: Option<&Path>, cfg: &PipelineConfig) -> anyhow::Result<(Volume, Provenance)> {
    let v = load_volume(volume)?;
    let m = match (mask, cfg.naive_mask_threshold) {
        (Some(p), _) => load_mask(p)?,
        (None, Some(t)) => naive_lung_mask(&v, t)?,
        (None, None) => bail!("no mask for {} and the naive mask fallback is disabled", volume.display()),
    };
    if m.dims() != v.dims() {
        return Err(flim_core::Error::DimsMismatch { left: v.dims(), right: m.dims() }.into());
    }
    let v = resample_isotropic(&v, cfg.resample_mm)?;
    let resampled_dims = v.dims();
    let m = resize_mask_nearest(&m, v.dims())?;
    let (lo, hi) = crop_box(&m, cfg.crop_margin)?;
    let v = resize_trilinear(&crop(&v, lo, hi)?, cfg.resize)?;
    let m = resize_mask_nearest(&crop_mask(&m, lo, hi)?, cfg.resize)?;
    let map = fit_summit_map(&v, non_empty(&m), &cfg.standardizer)?;
    let out = v.map(|x| map.apply(x))?;
    let prov = Provenance {
        source: volume.to_path_buf(),
        mask: mask.map(Path::to_path_buf),
        naive_mask_threshold: if mask.is_none() { cfg.naive_mask_threshold } else { None },
        resample_mm: cfg.resample_mm,
        resampled_dims,
        crop_lo: lo,
        crop_hi: hi,
        resize: cfg.resize,
        summits: [map.summits.0, map.summits.1],
        targets: map.targets,
        clamp: map.clamp,
    };
    Ok((out, prov))
}

/// Nearest-neighbour resizing can erase a tiny mask; fall back to the
/// whole box then.
fn non_empty(m: &Mask) -> Option<&Mask> {
    (m.count() > 0).then_some(m)
}

/// Preprocesses every volume of the raw manifest into `out`. Failures are
/// collected per volume; patients with any failed volume are left out of
/// the written manifest.
pub fn preprocess(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<PreprocessReport> {
    let raw = cfg.raw.as_ref().context("config has no raw manifest to preprocess")?;
    let manifest = Manifest::load(raw)?;
    let root = raw.parent().unwrap_or(Path::new("."));
    let mut jobs = Vec::new();
    for p in &manifest.patients {
        for (i, rel) in p.volumes.iter().enumerate() {
            jobs.push((p.id.clone(), root.join(rel), p.masks.get(i).map(|m| root.join(m))));
        }
    }
    let results: Vec<(String, String, anyhow::Result<()>)> = jobs
        .par_iter()
        .map(|(patient, vol, mask)| {
            let id = volume_stem(vol);
            let res = preprocess_volume(vol, mask.as_deref(), cfg).and_then(|(v, prov)| {
                save_volume(&v, out.join("volumes").join(format!("{id}.vvf.json")), Dtype::F32)?;
                write_json(&out.join("provenance").join(format!("{id}.json")), &prov)?;
                Ok(())
            });
            (patient.clone(), id, res)
        })
        .collect();

    let mut report = PreprocessReport::default();
    let mut bad_patients = std::collections::BTreeSet::new();
    for (patient, id, res) in results {
        match res {
            Ok(()) => report.written.push(id),
            Err(e) => {
                bad_patients.insert(patient);
                report.failed.push((id, format!("{e:#}")));
            }
        }
    }
    let patients = manifest
        .patients
        .iter()
        .filter(|p| !bad_patients.contains(&p.id))
        .map(|p| PatientEntry {
            id: p.id.clone(),
            label: p.label,
            volumes: p.volumes.iter().map(|v| format!("volumes/{}.vvf.json", volume_stem(Path::new(v)))).collect(),
            masks: Vec::new(),
        })
        .collect();
    Manifest { patients }.save(out.join("manifest.json"))?;
    Ok(report)
}

pub fn labelled_patients(data: &Dataset) -> Vec<(String, Label)> {
    data.patients().iter().filter_map(|p| p.label.map(|l| (p.id.clone(), l))).collect()
}

/// Stratified patient-wise splits of the preprocessed dataset.
pub fn splits(cfg: &PipelineConfig) -> anyhow::Result<Vec<SplitPlan>> {
    let data = Dataset::open(&cfg.data)?;
    Ok(make_splits(&labelled_patients(&data), cfg.n_splits, cfg.seed)?)
}

pub fn load_splits(path: &Path) -> anyhow::Result<Vec<SplitPlan>> {
    read_json(path).with_context(|| format!("reading splits {}", path.display()))
}

/// Layer specs with seeds expanded from the root seed.
pub fn seeded_layers(cfg: &PipelineConfig) -> Vec<ConvLayerSpec> {
    cfg.layers
        .iter()
        .enumerate()
        .map(|(l, spec)| ConvLayerSpec { seed: derive_seed(cfg.seed, "flim", l as u64), ..spec.clone() })
        .collect()
}

pub fn svm_params(cfg: &PipelineConfig, split: usize) -> SvmParams {
    SvmParams { seed: derive_seed(cfg.seed, "svm", split as u64), ..cfg.svm }
}

/// Marker sets for `volume_ids`, read from the config's marker directory.
pub fn load_markers(cfg: &PipelineConfig, volume_ids: &[String]) -> anyhow::Result<BTreeMap<String, MarkerSet>> {
    let mut out = BTreeMap::new();
    for id in volume_ids {
        let path = cfg.marker_path(id);
        if !path.exists() {
            bail!("no markers for volume {id}: expected {}", path.display());
        }
        let set = MarkerSet::load(&path).with_context(|| format!("reading markers of volume {id}"))?;
        out.insert(id.clone(), set);
    }
    Ok(out)
}

fn volumes_of(data: &Dataset, patients: &[String]) -> anyhow::Result<Vec<String>> {
    let mut ids = Vec::new();
    for p in patients {
        ids.extend(data.patient(p)?.volume_ids.iter().cloned());
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub split: usize,
    pub kernels_per_layer: Vec<usize>,
    pub descriptor_len: usize,
    pub svm_train_patients: usize,
    pub svm_epochs: usize,
    pub svm_converged: bool,
    pub svm_duality_gap: f64,
    pub svm_max_kkt_violation: f64,
    pub train: EvalReport,
    pub validation: EvalReport,
}

/// Trains the kernels on the split's marker images and the SVM on the whole
/// train side, then writes the model files into `out`.
pub fn train_split(cfg: &PipelineConfig, data: &Dataset, plan: &SplitPlan, out: &Path) -> anyhow::Result<TrainReport> {
    let marker_volumes = volumes_of(data, &plan.flim_marker)?;
    let markers = load_markers(cfg, &marker_volumes)?;
    let samples = marker_samples(data, &markers, &marker_volumes)?;
    let refs: Vec<_> = samples.iter().map(|(v, m)| (v.as_ref(), m)).collect();
    let mut model = train_model(&refs, &seeded_layers(cfg)).with_context(|| format!("training kernels for split {}", plan.split))?;
    model.standardizer = Some(cfg.standardizer.clone());

    let mut train_ids: Vec<String> = plan.train_side().cloned().collect();
    train_ids.sort();
    let fit = fit_svm(&model, data, &train_ids, &svm_params(cfg, plan.split))?;
    let (train_cm, _) = score(&model, &fit.model, data, &train_ids)?;
    let (val_cm, _) = score(&model, &fit.model, data, &plan.flim_validation)?;

    save_model(&model, out.join(MODEL_FILE))?;
    write_json(&out.join(SVM_FILE), &fit.model)?;
    let report = TrainReport {
        split: plan.split,
        kernels_per_layer: model.layers.iter().map(|l| l.kernels.len()).collect(),
        descriptor_len: fit.model.dim(),
        svm_train_patients: train_ids.len(),
        svm_epochs: fit.epochs,
        svm_converged: fit.converged,
        svm_duality_gap: fit.gap(),
        svm_max_kkt_violation: fit.max_kkt_violation,
        train: EvalReport::from_confusion(train_cm)?,
        validation: EvalReport::from_confusion(val_cm)?,
    };
    write_json(&out.join(TRAIN_REPORT_FILE), &report)?;
    Ok(report)
}

/// Trains the listed splits (all when `only` is `None`) into
/// `<models>/split_<k>`.
pub fn train(cfg: &PipelineConfig, plans: &[SplitPlan], only: Option<usize>) -> anyhow::Result<Vec<TrainReport>> {
    let data = Dataset::open(&cfg.data)?;
    let chosen: Vec<&SplitPlan> = plans.iter().filter(|p| only.is_none_or(|s| p.split == s)).collect();
    if chosen.is_empty() {
        bail!("no split matches {only:?}");
    }
    chosen.iter().map(|p| train_split(cfg, &data, p, &cfg.split_dir(p.split))).collect()
}

pub fn load_split_models(dir: &Path) -> anyhow::Result<(FlimModel, SvmModel)> {
    let model = load_model(dir.join(MODEL_FILE)).with_context(|| format!("loading {}", dir.join(MODEL_FILE).display()))?;
    let svm: SvmModel = read_json(&dir.join(SVM_FILE))?;
    if svm.scaler.mean.len() != svm.w.len() || svm.scaler.scale.len() != svm.w.len() {
        return Err(flim_core::Error::MalformedModelFile(format!("{}: scaler and weights differ in length", dir.display())).into());
    }
    Ok((model, svm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: usize,
    pub accuracy: f64,
    pub kappa: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub accuracy: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub splits: Vec<SplitMetrics>,
    pub mean: Score,
    /// Sample standard deviation across splits (0 for a single split).
    pub stdev: Score,
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalSummary {
    pub fn from_splits(splits: Vec<SplitMetrics>) -> anyhow::Result<Self> {
        anyhow::ensure!(!splits.is_empty(), "no splits to summarize");
        let (ma, sa) = mean_stdev(&splits.iter().map(|s| s.accuracy).collect::<Vec<_>>());
        let (mk, sk) = mean_stdev(&splits.iter().map(|s| s.kappa).collect::<Vec<_>>());
        Ok(Self { splits, mean: Score { accuracy: ma, kappa: mk }, stdev: Score { accuracy: sa, kappa: sk } })
    }

    /// One row per split plus a mean ± stdev row.
    pub fn table(&self) -> String {
        let mut s = String::from("split  accuracy         kappa\n");
        for m in &self.splits {
            let _ = writeln!(s, "{:<5}  {:<15.4}  {:.4}", m.split, m.accuracy, m.kappa);
        }
        let acc = format!("{:.2} ± {:.2}", self.mean.accuracy, self.stdev.accuracy);
        let _ = writeln!(s, "{:<5}  {:<15}  {:.2} ± {:.2}", "mean", acc, self.mean.kappa, self.stdev.kappa);
        s
    }
}

/// Scores each split's test patients with the models in `models`.
pub fn eval(cfg: &PipelineConfig, plans: &[SplitPlan], models: &Path) -> anyhow::Result<EvalSummary> {
    let data = Dataset::open(&cfg.data)?;
    let mut rows = Vec::with_capacity(plans.len());
    for plan in plans {
        let dir = models.join(format!("split_{}", plan.split));
        let (model, svm) = load_split_models(&dir)?;
        let (cm, _) = score(&model, &svm, &data, &plan.test)?;
        let r = EvalReport::from_confusion(cm)?;
        rows.push(SplitMetrics { split: plan.split, accuracy: r.accuracy, kappa: r.kappa, confusion: r.confusion });
    }
    EvalSummary::from_splits(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorRow {
    pub id: String,
    pub label: Option<Label>,
    pub descriptor: Vec<f64>,
}

/// Descriptors of every patient in the dataset under one split's model.
pub fn extract(cfg: &PipelineConfig, split: usize) -> anyhow::Result<Vec<DescriptorRow>> {
    let data = Dataset::open(&cfg.data)?;
    let (model, _) = load_split_models(&cfg.split_dir(split))?;
    let ids: Vec<String> = data.patients().iter().map(|p| p.id.clone()).collect();
    let desc = descriptors(&model, &data, &ids)?;
    Ok(data
        .patients()
        .iter()
        .zip(desc)
        .map(|(p, descriptor)| DescriptorRow { id: p.id.clone(), label: p.label, descriptor })
        .collect())
}
