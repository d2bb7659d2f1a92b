//! Patient manifests and on-demand volume access.
//!
//! A manifest lists patients, their label (when known), and the VVF header
//! of each lung volume relative to the manifest directory:
//!
//! ```json
//! {"patients":[{"id":"p000","label":"normal","volumes":["p000.vvf.json"]}]}
//! ```
//!
//! A volume's id is its header file name without `.vvf.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::label::Label;
use crate::volcore::{load_volume, read_header, volume_stem, Volume};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub volumes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub patients: Vec<PatientEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patient {
    pub id: String,
    pub label: Option<Label>,
    /// Lung volume ids, right lung first.
    pub volume_ids: Vec<String>,
}

#[derive(Debug, Clone)]
enum Storage {
    Disk(BTreeMap<String, PathBuf>),
    Memory(BTreeMap<String, Arc<Volume>>),
}

/// Patients plus a way to fetch their volumes.
#[derive(Debug, Clone)]
pub struct Dataset {
    patients: Vec<Patient>,
    storage: Storage,
}

impl Dataset {
    /// Reads a manifest; volumes are loaded lazily from disk.
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let mut paths = BTreeMap::new();
        let mut patients = Vec::with_capacity(manifest.patients.len());
        for entry in manifest.patients {
            let mut volume_ids = Vec::new();
            for rel in &entry.volumes {
                let path = root.join(rel);
                let id = volume_stem(&path);
                if paths.insert(id.clone(), path).is_some() {
                    return Err(Error::InvalidSession(format!("duplicate volume id {id}")));
                }
                volume_ids.push(id);
            }
            patients.push(Patient { id: entry.id, label: entry.label, volume_ids });
        }
        Self::checked(patients, Storage::Disk(paths))
    }

    /// In-memory dataset; each entry is `(patient id, label, lung volumes)`.
    /// Volume ids are `<patient>` for one lung and `<patient>_<i>` otherwise.
    pub fn from_memory(entries: Vec<(String, Option<Label>, Vec<Volume>)>) -> Result<Self> {
        let mut vols = BTreeMap::new();
        let mut patients = Vec::new();
        for (id, label, volumes) in entries {
            let single = volumes.len() == 1;
            let mut volume_ids = Vec::new();
            for (i, v) in volumes.into_iter().enumerate() {
                let vid = if single { id.clone() } else { format!("{id}_{i}") };
                if vols.insert(vid.clone(), Arc::new(v)).is_some() {
                    return Err(Error::InvalidSession(format!("duplicate volume id {vid}")));
                }
                volume_ids.push(vid);
            }
            patients.push(Patient { id, label, volume_ids });
        }
        Self::checked(patients, Storage::Memory(vols))
    }

    fn checked(patients: Vec<Patient>, storage: Storage) -> Result<Self> {
        let mut ids = std::collections::BTreeSet::new();
        for p in &patients {
            if !ids.insert(&p.id) {
                return Err(Error::InvalidSession(format!("duplicate patient id {}", p.id)));
            }
            if p.volume_ids.is_empty() || p.volume_ids.len() > 2 {
                return Err(Error::InvalidSession(format!("patient {} has {} volumes", p.id, p.volume_ids.len())));
            }
        }
        Ok(Self { patients, storage })
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn patient(&self, id: &str) -> Result<&Patient> {
        self.patients.iter().find(|p| p.id == id).ok_or_else(|| Error::UnknownVolume(id.to_string()))
    }

    pub fn label(&self, patient_id: &str) -> Result<Label> {
        self.patient(patient_id)?
            .label
            .ok_or_else(|| Error::InvalidSession(format!("patient {patient_id} has no label")))
    }

    /// Patient owning a volume id.
    pub fn owner(&self, volume_id: &str) -> Option<&Patient> {
        self.patients.iter().find(|p| p.volume_ids.iter().any(|v| v == volume_id))
    }

    pub fn volume_ids(&self) -> impl Iterator<Item = &String> {
        self.patients.iter().flat_map(|p| p.volume_ids.iter())
    }

    pub fn contains_volume(&self, volume_id: &str) -> bool {
        match &self.storage {
            Storage::Disk(m) => m.contains_key(volume_id),
            Storage::Memory(m) => m.contains_key(volume_id),
        }
    }

    pub fn volume(&self, volume_id: &str) -> Result<Arc<Volume>> {
        match &self.storage {
            Storage::Disk(m) => {
                let path = m.get(volume_id).ok_or_else(|| Error::UnknownVolume(volume_id.to_string()))?;
                Ok(Arc::new(load_volume(path)?))
            }
            Storage::Memory(m) => m.get(volume_id).cloned().ok_or_else(|| Error::UnknownVolume(volume_id.to_string())),
        }
    }

    /// Grid size of a volume; reads only the header for on-disk data.
    pub fn volume_dims(&self, volume_id: &str) -> Result<[usize; 3]> {
        match &self.storage {
            Storage::Disk(m) => {
                let path = m.get(volume_id).ok_or_else(|| Error::UnknownVolume(volume_id.to_string()))?;
                Ok(read_header(path)?.dims)
            }
            Storage::Memory(_) => Ok(self.volume(volume_id)?.dims()),
        }
    }

    /// All lung volumes of a patient, in manifest order.
    pub fn patient_volumes(&self, patient_id: &str) -> Result<Vec<Arc<Volume>>> {
        self.patient(patient_id)?.volume_ids.iter().map(|v| self.volume(v)).collect()
    }
}
