use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::seed::derive_seed;

/// Minimum number of abnormal train-side patients held out for kernel
/// estimation (half marker images, half validation images).
pub const MIN_FLIM_RESERVE: usize = 6;

/// Patient-wise partition for one experimental split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub split: usize,
    pub seed: u64,
    pub test: Vec<String>,
    pub svm_train: Vec<String>,
    pub flim_marker: Vec<String>,
    pub flim_validation: Vec<String>,
}

impl SplitPlan {
    /// Every id on the training side (SVM plus kernel-estimation subsets).
    pub fn train_side(&self) -> impl Iterator<Item = &String> {
        self.svm_train.iter().chain(&self.flim_marker).chain(&self.flim_validation)
    }
}

/// Abnormal patients reserved for kernel estimation on a train side with
/// `abnormal_train` abnormal patients: 10% rounded half up, at least 6.
pub fn flim_reserve(abnormal_train: usize) -> usize {
    ((abnormal_train * 10 + 50) / 100).max(MIN_FLIM_RESERVE)
}

/// Builds `n_splits` stratified 50/50 splits at patient granularity.
///
/// Each class contributes `floor(n_c / 2)` patients to the train side. Of
/// the abnormal train patients, [`flim_reserve`] are held out and divided
/// into marker images (first half, rounded up) and validation images; the
/// remaining train patients form the SVM training set. Ids inside every
/// subset are sorted.
pub fn make_splits(patients: &[(String, Label)], n_splits: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    let mut by_class: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (id, label) in patients {
        by_class[label.index()].push(id.clone());
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some((dup, _)) = patients.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(Error::InvalidSession(format!("duplicate patient id {dup}")));
    }
    let [normal, abnormal] = &by_class;
    if normal.len() < 2 {
        return Err(Error::SingleClassData);
    }
    let abnormal_train = abnormal.len() / 2;
    let reserve = flim_reserve(abnormal_train);
    if abnormal.len() < 2 || abnormal_train <= reserve {
        return Err(Error::TooFewAbnormal(format!(
            "{} abnormal patients give {abnormal_train} on the train side; need more than {reserve}",
            abnormal.len()
        )));
    }

    let mut plans = Vec::with_capacity(n_splits);
    for split in 0..n_splits {
        let split_seed = derive_seed(seed, "splits", split as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        let mut normal = normal.clone();
        let mut abnormal = abnormal.clone();
        normal.shuffle(&mut rng);
        abnormal.shuffle(&mut rng);

        let n_train = normal.len() / 2;
        let mut test: Vec<String> = normal[n_train..].iter().chain(&abnormal[abnormal_train..]).cloned().collect();
        let n_marker = reserve.div_ceil(2);
        let mut flim_marker = abnormal[..n_marker].to_vec();
        let mut flim_validation = abnormal[n_marker..reserve].to_vec();
        let mut svm_train: Vec<String> = normal[..n_train].iter().chain(&abnormal[reserve..abnormal_train]).cloned().collect();
        for v in [&mut test, &mut flim_marker, &mut flim_validation, &mut svm_train] {
            v.sort();
        }
        plans.push(SplitPlan { split, seed: split_seed, test, svm_train, flim_marker, flim_validation });
    }
    Ok(plans)
}
