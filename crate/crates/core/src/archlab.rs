//! Layer-by-layer architecture construction.
//!
//! The designer proposes a layer spec, the session trains it on the marker
//! images atop the accepted layers and reports validation accuracy and
//! kappa. Accepting a spec appends the layer; the designer decides when to
//! stop.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{ConfusionMatrix, SvmParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flim::{train_layer, ConvLayer, ConvLayerSpec, FlimModel, MarkerSet};
use crate::fsutil::{read_json, write_json};
use crate::pipeline::{fit_svm, marker_samples, score};
use crate::volcore::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub kappa: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        Ok(Self { accuracy: confusion.accuracy()?, kappa: confusion.kappa()?, confusion })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Number of accepted layers beneath the candidate.
    pub depth: usize,
    pub spec: ConvLayerSpec,
    pub report: EvalReport,
}

/// Persistent state of one interactive session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSession {
    /// Volume ids carrying markers.
    pub marker_images: Vec<String>,
    /// Patient ids scored after each candidate.
    pub validation_images: Vec<String>,
    /// Patient ids the decision layer is trained on.
    pub train_pool: Vec<String>,
    pub svm: SvmParams,
    pub accepted: Vec<ConvLayerSpec>,
    pub history: Vec<HistoryEntry>,
    #[serde(skip)]
    layers: Vec<ConvLayer>,
}

impl PartialEq for ArchSession {
    fn eq(&self, other: &Self) -> bool {
        self.marker_images == other.marker_images
            && self.validation_images == other.validation_images
            && self.train_pool == other.train_pool
            && self.svm == other.svm
            && self.accepted == other.accepted
            && self.history == other.history
    }
}

impl ArchSession {
    pub fn new(
        data: &Dataset,
        marker_images: Vec<String>,
        validation_images: Vec<String>,
        train_pool: Vec<String>,
        svm: SvmParams,
    ) -> Result<Self> {
        let session = Self { marker_images, validation_images, train_pool, svm, accepted: Vec::new(), history: Vec::new(), layers: Vec::new() };
        session.check(data)?;
        Ok(session)
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if self.marker_images.is_empty() {
            return Err(Error::InvalidSession("no marker images".into()));
        }
        for id in &self.marker_images {
            let owner = data.owner(id).ok_or_else(|| Error::UnknownVolume(id.clone()))?;
            if self.validation_images.contains(&owner.id) {
                return Err(Error::InvalidSession(format!("marker image {id} is also a validation image")));
            }
        }
        for id in self.validation_images.iter().chain(&self.train_pool) {
            data.label(id)?;
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.accepted.len()
    }

    /// The accepted layers as a model. Empty until [`ArchSession::rebuild`]
    /// runs on a freshly loaded session.
    pub fn model(&self) -> FlimModel {
        let channels = self.layers.first().map_or(1, ConvLayer::input_channels);
        FlimModel { input_channels: channels, layers: self.layers.clone(), standardizer: None }
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    fn train_candidate(&self, data: &Dataset, markers: &BTreeMap<String, MarkerSet>, spec: &ConvLayerSpec) -> Result<ConvLayer> {
        let samples = marker_samples(data, markers, &self.marker_images)?;
        let refs: Vec<(&Volume, &MarkerSet)> = samples.iter().map(|(v, m)| (v.as_ref(), m)).collect();
        train_layer(&refs, spec, &self.layers)
    }

    /// Trains `spec` atop the accepted layers and scores the validation
    /// images. The accepted model is left untouched; the report is appended
    /// to the history.
    pub fn evaluate_candidate(
        &mut self,
        data: &Dataset,
        markers: &BTreeMap<String, MarkerSet>,
        spec: &ConvLayerSpec,
    ) -> Result<EvalReport> {
        if self.layers.len() != self.accepted.len() {
            return Err(Error::InvalidSession("session must be rebuilt before evaluating".into()));
        }
        let layer = self.train_candidate(data, markers, spec)?;
        let mut model = self.model();
        model.input_channels = self.layers.first().map_or_else(|| layer.input_channels(), ConvLayer::input_channels);
        model.push(layer)?;
        let fit = fit_svm(&model, data, &self.train_pool, &self.svm)?;
        let (cm, _) = score(&model, &fit.model, data, &self.validation_images)?;
        let report = EvalReport::from_confusion(cm)?;
        self.history.push(HistoryEntry { depth: self.depth(), spec: spec.clone(), report: report.clone() });
        Ok(report)
    }

    /// Appends a previously evaluated spec as the next layer.
    pub fn accept_layer(&mut self, data: &Dataset, markers: &BTreeMap<String, MarkerSet>, spec: &ConvLayerSpec) -> Result<()> {
        let depth = self.depth();
        if !self.history.iter().any(|h| h.depth == depth && &h.spec == spec) {
            return Err(Error::SpecNotEvaluated);
        }
        let layer = self.train_candidate(data, markers, spec)?;
        self.layers.push(layer);
        self.accepted.push(spec.clone());
        Ok(())
    }

    /// Retrains the accepted layers from their specs.
    pub fn rebuild(&mut self, data: &Dataset, markers: &BTreeMap<String, MarkerSet>) -> Result<()> {
        self.check(data)?;
        self.layers.clear();
        for spec in self.accepted.clone() {
            let layer = self.train_candidate(data, markers, &spec)?;
            self.layers.push(layer);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// Loads session state; call [`ArchSession::rebuild`] before use.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

/// Mean accuracy and kappa over several reports.
pub fn mean_scores(reports: &[EvalReport]) -> Option<(f64, f64)> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some((reports.iter().map(|r| r.accuracy).sum::<f64>() / n, reports.iter().map(|r| r.kappa).sum::<f64>() / n))
}

/// Index of the candidate marker set with the highest
/// `(mean accuracy + mean kappa) / 2`; the lowest index wins ties.
pub fn select_marker_set(candidates: &[(f64, f64)]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &(acc, kappa)) in candidates.iter().enumerate() {
        let s = (acc + kappa) / 2.0;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_rules() {
        assert_eq!(select_marker_set(&[(0.5, 0.1)]).unwrap(), 0);
        assert_eq!(select_marker_set(&[(0.9, 0.8), (0.95, 0.9)]).unwrap(), 1);
        assert_eq!(select_marker_set(&[(0.9, 0.8), (0.8, 0.9), (0.85, 0.85)]).unwrap(), 0);
        assert!(matches!(select_marker_set(&[]), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn report_from_confusion() {
        let perfect = EvalReport::from_confusion(ConfusionMatrix::new([[3, 0], [0, 3]])).unwrap();
        assert_eq!((perfect.accuracy, perfect.kappa), (1.0, 1.0));
        let constant = EvalReport::from_confusion(ConfusionMatrix::new([[0, 3], [0, 3]])).unwrap();
        assert_eq!(constant.kappa, 0.0);
    }

    #[test]
    fn means() {
        let r = |a, k| EvalReport { accuracy: a, kappa: k, confusion: ConfusionMatrix::default() };
        assert_eq!(mean_scores(&[r(1.0, 0.5), r(0.5, 0.0)]), Some((0.75, 0.25)));
        assert_eq!(mean_scores(&[]), None);
    }
}
