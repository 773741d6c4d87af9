use std::fs;
use std::path::{Path, PathBuf};

use aerograph_core::model::write_atomic;
use aerograph_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BIAS_FILE: &str = "bias_factors.json";
pub const MANIFEST_VERSION: u32 = 1;

/// A file and the SHA-256 of its contents. Paths inside the run directory
/// are stored relative to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path, stored_as: impl Into<String>) -> Result<Self> {
        Ok(Self {
            path: stored_as.into(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub file: FileRef,
    pub days: usize,
    pub window_stride: usize,
}

/// Everything a run's downstream artifacts derive from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub cases: FileRef,
    pub flights: FileRef,
    pub train: TrainConfig,
    pub checkpoint_dir: String,
    pub checkpoints: Vec<FileRef>,
    pub reports: Vec<FileRef>,
    pub bias: Option<BiasRecord>,
    /// RFC 3339 creation time; not part of the hash.
    pub created: String,
}

#[derive(Serialize)]
struct HashedView<'a> {
    version: u32,
    cases: &'a str,
    flights: &'a str,
    train: &'a TrainConfig,
    checkpoints: Vec<&'a str>,
    bias: Option<(&'a str, usize, usize)>,
}

impl RunManifest {
    /// Hex SHA-256 over content hashes and configuration. Paths and the
    /// creation time are excluded so identical runs hash identically.
    pub fn hash(&self) -> String {
        let view = HashedView {
            version: self.version,
            cases: &self.cases.sha256,
            flights: &self.flights.sha256,
            train: &self.train,
            checkpoints: self.checkpoints.iter().map(|c| c.sha256.as_str()).collect(),
            bias: self.bias.as_ref().map(|b| (b.file.sha256.as_str(), b.days, b.window_stride)),
        };
        let bytes = serde_json::to_vec(&view).expect("manifest view serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}; run `aerograph train` first", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::data(format!(
                "{}: manifest version {} is not supported",
                path.display(),
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&Self::path(dir), json.as_bytes())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Confirms a file still has the recorded hash.
pub fn verify(path: &Path, expected: &FileRef) -> Result<()> {
    let actual = sha256_file(path)?;
    if actual != expected.sha256 {
        return Err(Error::data(format!(
            "{} has changed since the manifest was written (sha256 {actual}, recorded {})",
            path.display(),
            expected.sha256
        )));
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes).map_err(|e| Error::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value).expect("artifact serializes");
    json.push('\n');
    write_file(path, json.as_bytes())
}
