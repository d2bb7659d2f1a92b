//! Decision layer, evaluation metrics and the patient-wise split protocol.

mod metrics;
mod splits;
mod svm;

pub use metrics::{accuracy, cohen_kappa, ConfusionMatrix};
pub use splits::{flim_reserve, make_splits, SplitPlan, MIN_FLIM_RESERVE};
pub use svm::{predict, train_svm, train_svm_detailed, Prediction, Scaler, SvmFit, SvmModel, SvmParams};
