use serde::{Deserialize, Serialize};

/// The two classes: normal parenchyma and abnormal (ground-glass) findings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    /// SVM target: -1 for normal, +1 for abnormal.
    pub fn sign(self) -> f64 {
        match self {
            Label::Normal => -1.0,
            Label::Abnormal => 1.0,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s >= 0.0 { Label::Abnormal } else { Label::Normal }
    }

    /// Row/column index in a confusion matrix.
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
