use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// 2x2 counts; rows are truth (normal, abnormal), columns predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = Self::default();
        for (truth, pred) in pairs {
            cm.add(truth, pred);
        }
        cm
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col(&self, j: usize) -> u64 {
        self.counts[0][j] + self.counts[1][j]
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(self)
    }

    pub fn kappa(&self) -> Result<f64> {
        cohen_kappa(self)
    }
}

/// `(TN + TP) / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok((cm.counts[0][0] + cm.counts[1][1]) as f64 / total as f64)
}

/// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`; 0 when `p_e = 1`.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let p_o = accuracy(cm)?;
    let total = cm.total() as f64;
    let p_e = (0..2).map(|c| cm.row(c) as f64 * cm.col(c) as f64).sum::<f64>() / (total * total);
    if p_e >= 1.0 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_partial_accuracy() {
        assert_eq!(accuracy(&ConfusionMatrix::new([[50, 0], [0, 50]])).unwrap(), 1.0);
        assert!((accuracy(&ConfusionMatrix::new([[45, 5], [5, 45]])).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&ConfusionMatrix::new([[50, 0], [0, 50]])).unwrap(), 1.0);
        assert!((cohen_kappa(&ConfusionMatrix::new([[45, 5], [5, 45]])).unwrap() - 0.8).abs() < 1e-12);
        // everything predicted abnormal on balanced truth
        assert_eq!(cohen_kappa(&ConfusionMatrix::new([[0, 50], [0, 50]])).unwrap(), 0.0);
        // single truth class, all correct: p_e = 1
        assert_eq!(cohen_kappa(&ConfusionMatrix::new([[0, 0], [0, 7]])).unwrap(), 0.0);
    }

    #[test]
    fn empty_matrix() {
        assert!(matches!(accuracy(&ConfusionMatrix::default()), Err(Error::EmptyMatrix)));
        assert!(matches!(cohen_kappa(&ConfusionMatrix::default()), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn from_pairs_layout() {
        let cm = ConfusionMatrix::from_pairs([
            (Label::Normal, Label::Normal),
            (Label::Normal, Label::Abnormal),
            (Label::Abnormal, Label::Abnormal),
            (Label::Abnormal, Label::Abnormal),
        ]);
        assert_eq!(cm.counts, [[1, 1], [0, 2]]);
        assert_eq!(serde_json::to_string(&cm).unwrap(), "[[1,1],[0,2]]");
    }
}
