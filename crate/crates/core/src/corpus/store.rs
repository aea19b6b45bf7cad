//! Versioned exemplar store.
//!
//! Layout: one immutable JSON document per exemplar version
//! (`<id>.v<N>.json`) plus `manifest.json`, which maps each id to its
//! current version and records every add/replace. Documents are never
//! rewritten, so an older config can still resolve the exact exemplar text
//! it was rendered with.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Exemplar;
use crate::util::{sha256_hex, write_atomic};

/// Read access to exemplars by id.
pub trait ExemplarSource {
    fn exemplar(&self, id: &str) -> Option<Exemplar>;
}

impl ExemplarSource for BTreeMap<String, Exemplar> {
    fn exemplar(&self, id: &str) -> Option<Exemplar> {
        self.get(id).cloned()
    }
}

impl ExemplarSource for [Exemplar] {
    fn exemplar(&self, id: &str) -> Option<Exemplar> {
        self.iter().find(|e| e.id == id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub version: u64,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreOp {
    Add,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEvent {
    pub store_version: u64,
    pub op: StoreOp,
    pub exemplar_id: String,
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub store_version: u64,
    pub current: BTreeMap<String, ManifestEntry>,
    pub history: Vec<ManifestEvent>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("exemplar store I/O at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt exemplar store document {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("exemplar {0:?} already exists")]
    AlreadyExists(String),
    #[error("unknown exemplar {0:?}")]
    Unknown(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct ExemplarStore {
    dir: PathBuf,
    manifest: Manifest,
}

impl ExemplarStore {
    /// Opens the store, creating an empty one if the directory has no manifest.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
            serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                path: manifest_path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            Manifest::default()
        };
        Ok(ExemplarStore {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn ids(&self) -> Vec<String> {
        self.manifest.current.keys().cloned().collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.manifest.current.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<Exemplar, StoreError> {
        let entry = self
            .manifest
            .current
            .get(id)
            .ok_or_else(|| StoreError::Unknown(id.to_string()))?;
        self.load_file(&entry.file)
    }

    fn load_file(&self, file: &str) -> Result<Exemplar, StoreError> {
        let path = self.dir.join(file);
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn all(&self) -> Result<Vec<Exemplar>, StoreError> {
        self.manifest.current.keys().map(|id| self.get(id)).collect()
    }

    pub fn add(&mut self, exemplar: &Exemplar) -> Result<(), StoreError> {
        if self.contains(&exemplar.id) {
            return Err(StoreError::AlreadyExists(exemplar.id.clone()));
        }
        self.write(exemplar, StoreOp::Add)
    }

    pub fn replace(&mut self, exemplar: &Exemplar) -> Result<(), StoreError> {
        if !self.contains(&exemplar.id) {
            return Err(StoreError::Unknown(exemplar.id.clone()));
        }
        self.write(exemplar, StoreOp::Replace)
    }

    fn write(&mut self, exemplar: &Exemplar, op: StoreOp) -> Result<(), StoreError> {
        std::fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        let version = self
            .manifest
            .current
            .get(&exemplar.id)
            .map(|e| e.version + 1)
            .unwrap_or(1);
        let file = format!("{}.v{version}.json", exemplar.id);
        let doc = serde_json::to_string_pretty(exemplar).expect("exemplar serializes") + "\n";
        let doc_path = self.dir.join(&file);
        write_atomic(&doc_path, doc.as_bytes()).map_err(io(&doc_path))?;

        let mut next = self.manifest.clone();
        next.store_version += 1;
        next.current.insert(
            exemplar.id.clone(),
            ManifestEntry {
                version,
                file: file.clone(),
                sha256: sha256_hex(doc.as_bytes()),
            },
        );
        next.history.push(ManifestEvent {
            store_version: next.store_version,
            op,
            exemplar_id: exemplar.id.clone(),
            file,
        });
        let manifest_path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&next).expect("manifest serializes") + "\n";
        write_atomic(&manifest_path, text.as_bytes()).map_err(io(&manifest_path))?;
        self.manifest = next;
        Ok(())
    }
}

impl ExemplarSource for ExemplarStore {
    fn exemplar(&self, id: &str) -> Option<Exemplar> {
        self.get(id).ok()
    }
}
