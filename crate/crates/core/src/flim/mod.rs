//! Marker-driven convolutional feature learning.
//!
//! Kernels are estimated without backpropagation: patches around marker
//! voxels are normalized, clustered, and each centroid direction becomes a
//! unit-norm filter. Layers stack, with markers carried through pooling.

mod conv;
mod kernels;
mod kmeans;
mod markers;
mod model;
mod norm;
mod patch;

pub use conv::{conv_forward, map_coords_through_layer, max_pool, ConvLayer, ConvLayerSpec, FeatureMap};
pub use kernels::{centroids_to_kernels, reduce_kernels_pca, Kernel};
pub use kmeans::{inertia, kmeans, kmeans_rows, KMeansParams};
pub use markers::{Marker, MarkerSet};
pub use model::{
    delta_layer, extract_descriptor, forward, forward_prefix, load_model, model_from_json, model_to_json, save_model,
    train_layer, train_model, FlimModel,
};
pub use norm::{compute_norm_stats, normalize_map, normalize_patches, NormalizationStats};
pub use patch::{extract_patches, PatchMatrix, PatchSpec};
