//! Backpropagation-free 3D feature learning from user markers.
//!
//! Volumes are standardized, passed through convolutional layers whose
//! kernels are estimated from patches around marker voxels, and the
//! flattened last-layer activations feed a linear SVM.

pub mod archlab;
pub mod classify;
pub mod dataset;
mod error;
pub mod flim;
pub mod fsutil;
mod label;
pub mod pipeline;
pub mod preprocess;
pub mod seed;
pub mod volcore;

pub use archlab::{select_marker_set, ArchSession, EvalReport};
pub use classify::{ConfusionMatrix, SplitPlan, SvmModel, SvmParams};
pub use dataset::{Dataset, Manifest, Patient, PatientEntry};
pub use error::{Error, Result};
pub use flim::{ConvLayer, ConvLayerSpec, FlimModel, Kernel, Marker, MarkerSet, PatchSpec};
pub use label::Label;
pub use preprocess::StandardizerConfig;
pub use volcore::{Mask, Volume, VoxelCoord};
