use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::label::Label;
use crate::volcore::VoxelCoord;

/// One brush stroke group: voxels that share a class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Marker {
    pub label: Label,
    pub voxels: Vec<VoxelCoord>,
}

/// All markers drawn on one volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSet {
    pub volume_id: String,
    pub markers: Vec<Marker>,
}

impl MarkerSet {
    /// Checks non-emptiness and that every voxel lies inside `dims`.
    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if self.markers.is_empty() {
            return Err(Error::MissingMarkers(self.volume_id.clone()));
        }
        for m in &self.markers {
            if m.voxels.is_empty() {
                return Err(Error::MissingMarkers(format!("{} ({} marker is empty)", self.volume_id, m.label)));
            }
            if let Some(bad) = m.voxels.iter().find(|v| !v.in_bounds(dims)) {
                return Err(Error::InvalidCoord { coord: [bad.x as i64, bad.y as i64, bad.z as i64], dims });
            }
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.markers.iter().map(|m| m.voxels.len()).sum()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}
