//! Glue shared by architecture sessions and the command line: descriptors
//! for a set of patients, SVM fitting, and scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{train_svm_detailed, ConfusionMatrix, SvmFit, SvmModel, SvmParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flim::{extract_descriptor, FlimModel, MarkerSet};
use crate::label::Label;
use crate::volcore::Volume;

/// Descriptors for `patient_ids`, computed in parallel, returned in order.
pub fn descriptors(model: &FlimModel, data: &Dataset, patient_ids: &[String]) -> Result<Vec<Vec<f64>>> {
    patient_ids
        .par_iter()
        .map(|id| {
            let vols = data.patient_volumes(id)?;
            let refs: Vec<&Volume> = vols.iter().map(|v| v.as_ref()).collect();
            extract_descriptor(model, &refs)
        })
        .collect()
}

pub fn labels(data: &Dataset, patient_ids: &[String]) -> Result<Vec<Label>> {
    patient_ids.iter().map(|id| data.label(id)).collect()
}

/// Trains the decision layer on the descriptors of `train_ids`.
pub fn fit_svm(model: &FlimModel, data: &Dataset, train_ids: &[String], params: &SvmParams) -> Result<SvmFit> {
    let x = descriptors(model, data, train_ids)?;
    let y = labels(data, train_ids)?;
    train_svm_detailed(&x, &y, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub id: String,
    pub truth: Label,
    pub predicted: Label,
    pub margin: f64,
}

/// Predicts every patient in `ids` and tallies the confusion matrix.
pub fn score(model: &FlimModel, svm: &SvmModel, data: &Dataset, ids: &[String]) -> Result<(ConfusionMatrix, Vec<PatientScore>)> {
    let x = descriptors(model, data, ids)?;
    let y = labels(data, ids)?;
    let mut cm = ConfusionMatrix::default();
    let mut scores = Vec::with_capacity(ids.len());
    for ((id, xi), truth) in ids.iter().zip(&x).zip(y) {
        let p = svm.predict(xi)?;
        cm.add(truth, p.label);
        scores.push(PatientScore { id: id.clone(), truth, predicted: p.label, margin: p.margin });
    }
    Ok((cm, scores))
}

/// Pairs every marked volume among `volume_ids` with its marker set.
pub fn marker_samples(
    data: &Dataset,
    markers: &std::collections::BTreeMap<String, MarkerSet>,
    volume_ids: &[String],
) -> Result<Vec<(std::sync::Arc<Volume>, MarkerSet)>> {
    volume_ids
        .iter()
        .map(|id| {
            let set = markers.get(id).ok_or_else(|| Error::MissingMarkers(id.clone()))?;
            Ok((data.volume(id)?, set.clone()))
        })
        .collect()
}
