use std::path::Path;

use serde::{Deserialize, Serialize};

use super::conv::{conv_forward, map_coords_through_layer, ConvLayer, ConvLayerSpec, FeatureMap};
use super::kernels::{centroids_to_kernels, reduce_kernels_pca, Kernel};
use super::kmeans::{kmeans, KMeansParams};
use super::markers::MarkerSet;
use super::norm::{compute_norm_stats, normalize_patches, NormalizationStats};
use super::patch::{extract_patches, PatchMatrix};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::preprocess::StandardizerConfig;
use crate::volcore::{Volume, VoxelCoord};

const MODEL_FORMAT: &str = "flim-model/1";

/// A stack of trained layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlimModel {
    pub input_channels: usize,
    pub layers: Vec<ConvLayer>,
    /// Standardization used on the training volumes, reused at inference.
    #[serde(default)]
    pub standardizer: Option<StandardizerConfig>,
}

impl FlimModel {
    pub fn new(input_channels: usize, layers: Vec<ConvLayer>) -> Result<Self> {
        let model = Self { input_channels, layers, standardizer: None };
        model.validate()?;
        Ok(model)
    }

    /// An untrained prefix; only valid as the starting point for training.
    pub fn empty(input_channels: usize) -> Self {
        Self { input_channels, layers: Vec::new(), standardizer: None }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(self.input_channels, ConvLayer::output_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.input_channels() != channels {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} expects {} channels but receives {channels}",
                    layer.input_channels()
                )));
            }
            channels = layer.output_channels();
        }
        Ok(())
    }

    pub fn output_dims(&self, input: [usize; 3]) -> [usize; 3] {
        self.layers.iter().fold(input, |d, l| l.spec.output_dims(d))
    }

    pub fn push(&mut self, layer: ConvLayer) -> Result<()> {
        if layer.input_channels() != self.output_channels() {
            return Err(Error::ChannelMismatch { expected: self.output_channels(), found: layer.input_channels() });
        }
        self.layers.push(layer);
        Ok(())
    }
}

/// Runs `v` through the first `depth` layers.
pub fn forward_prefix(layers: &[ConvLayer], v: &Volume) -> Result<FeatureMap> {
    let mut map = v.clone();
    for layer in layers {
        map = conv_forward(&map, layer)?;
    }
    Ok(map)
}

pub fn forward(model: &FlimModel, v: &Volume) -> Result<FeatureMap> {
    if v.channels() != model.input_channels {
        return Err(Error::ChannelMismatch { expected: model.input_channels, found: v.channels() });
    }
    forward_prefix(&model.layers, v)
}

/// Flattened last-layer activations of one patient's lungs (right lung
/// first), concatenated.
pub fn extract_descriptor(model: &FlimModel, lungs: &[&Volume]) -> Result<Vec<f64>> {
    if lungs.is_empty() || lungs.len() > 2 {
        return Err(Error::InvalidVolume(format!("expected 1 or 2 lung volumes, got {}", lungs.len())));
    }
    let mut out = Vec::new();
    for lung in lungs {
        out.extend_from_slice(forward(model, lung)?.data());
    }
    Ok(out)
}

/// Estimates one new layer on top of `prior` from the marked images.
///
/// Marker voxels are carried through the prior pooling stages, patches are
/// normalized with statistics pooled over every marker, each (image,
/// marker) pair is clustered, and the union of unit centroid kernels is
/// reduced by PCA when it exceeds `spec.n_kernels`.
pub fn train_layer(samples: &[(&Volume, &MarkerSet)], spec: &ConvLayerSpec, prior: &[ConvLayer]) -> Result<ConvLayer> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    let mut groups: Vec<PatchMatrix> = Vec::new();
    for (image, markers) in samples {
        markers.validate(image.dims())?;
        let mut dims = image.dims();
        let mut map = (*image).clone();
        let mut coords: Vec<Vec<VoxelCoord>> = markers.markers.iter().map(|m| m.voxels.clone()).collect();
        for layer in prior {
            coords = coords.iter().map(|c| map_coords_through_layer(c, &layer.spec, dims)).collect();
            map = conv_forward(&map, layer)?;
            dims = map.dims();
        }
        for (marker, voxels) in markers.markers.iter().zip(&coords) {
            groups.push(extract_patches(&map, voxels, &spec.patch, marker.label)?);
        }
    }

    let mut pooled = PatchMatrix::empty(groups[0].dim, groups[0].channels);
    for g in &groups {
        pooled.append(g);
    }
    let mut stats = compute_norm_stats(&pooled, spec.epsilon)?;
    stats.center_only = spec.center_only;

    let mut candidates: Vec<Kernel> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let normalized = normalize_patches(g, &stats)?;
        let params = KMeansParams {
            k: spec.kmeans_k,
            seed: spec.seed.wrapping_add(i as u64),
            max_iters: spec.kmeans_max_iters,
            tol: spec.kmeans_tol,
        };
        let centroids = kmeans(&normalized, &params)?;
        candidates.extend(centroids_to_kernels(&centroids)?);
    }

    let kernels = match candidates.len().cmp(&spec.n_kernels) {
        std::cmp::Ordering::Less => {
            return Err(Error::InsufficientKernels { available: candidates.len(), requested: spec.n_kernels })
        }
        std::cmp::Ordering::Equal => candidates,
        std::cmp::Ordering::Greater => reduce_kernels_pca(&candidates, spec.n_kernels)?,
    };
    ConvLayer::new(spec.clone(), stats, kernels)
}

/// Trains `specs` one after another, each atop the previous layers.
pub fn train_model(samples: &[(&Volume, &MarkerSet)], specs: &[ConvLayerSpec]) -> Result<FlimModel> {
    let channels = samples.first().map_or(1, |(v, _)| v.channels());
    let mut model = FlimModel::empty(channels);
    for spec in specs {
        let layer = train_layer(samples, spec, &model.layers)?;
        model.push(layer)?;
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(flatten)]
    model: FlimModel,
}

pub fn model_to_json(model: &FlimModel) -> Result<Vec<u8>> {
    let file = ModelFile { format: MODEL_FORMAT.to_string(), model: model.clone() };
    let mut bytes = serde_json::to_vec_pretty(&file).map_err(|e| Error::MalformedModelFile(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn model_from_json(bytes: &[u8]) -> Result<FlimModel> {
    let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| Error::MalformedModelFile(e.to_string()))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::MalformedModelFile(format!("unsupported format {}", file.format)));
    }
    file.model.validate().map_err(|e| Error::MalformedModelFile(e.to_string()))?;
    Ok(file.model)
}

/// Writes the model as JSON. Floats use shortest round-trip formatting, so
/// loading restores every weight bit-for-bit.
pub fn save_model(model: &FlimModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &model_to_json(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FlimModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&bytes)
}

/// Identity-normalized single-delta layer, handy for plumbing checks.
pub fn delta_layer(channels: usize, spec: ConvLayerSpec) -> Result<ConvLayer> {
    let taps = spec.patch.taps();
    let kernels = (0..spec.n_kernels)
        .map(|k| {
            let mut w = vec![0.0; taps * channels];
            w[(taps / 2) * channels + k % channels] = 1.0;
            Kernel { weights: w }
        })
        .collect();
    ConvLayer::new(spec.clone(), NormalizationStats::identity(channels, spec.epsilon), kernels)
}
