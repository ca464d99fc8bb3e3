//! Dataset manifests and the tools that produce or check them.

mod build;
mod mix;
mod plan;
mod prompts;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use build::{build_dataset, BuildConfig, BuildReport, Rejection};
pub use mix::{validate_mix, MixPolicy, MixReport};
pub use plan::{apply_plan, entry_seed, AugOp, AugPlan, AugStep, PlanOutcome};
pub use prompts::{instantiate_template, parse_prompts, PromptEntry, PromptPool, DEFAULT_PROMPT};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Real,
    Synthetic,
}

/// One operation applied to an entry, with the parameters actually used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub op: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ProvenanceRecord {
    pub fn new(op: &str, params: serde_json::Value, seed: Option<u64>) -> Self {
        ProvenanceRecord {
            op: op.to_owned(),
            params,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub source: Source,
    #[serde(default)]
    pub concept_tags: Vec<String>,
    #[serde(default)]
    pub provenance: Vec<ProvenanceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub subject_id: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(subject_id: &str) -> Self {
        DatasetManifest {
            schema_version: SCHEMA_VERSION.into(),
            subject_id: subject_id.to_owned(),
            entries: Vec::new(),
        }
    }

    /// Schema version, unique ids and relative paths.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported manifest schema version '{}'",
                self.schema_version
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() {
                return Err(Error::invalid("manifest entry with empty id"));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate entry id '{}'", e.id)));
            }
            let p = Path::new(&e.path);
            if e.path.is_empty() || p.is_absolute() || p.components().any(|c| c.as_os_str() == "..") {
                return Err(Error::invalid(format!(
                    "entry '{}' path '{}' must be relative and stay inside the dataset",
                    e.id, e.path
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(base_dir: &Path, entry: &ManifestEntry) -> PathBuf {
        base_dir.join(&entry.path)
    }

    /// Errors on the first entry whose file is missing.
    pub fn check_materialized(&self, base_dir: &Path) -> Result<()> {
        for e in &self.entries {
            let p = DatasetManifest::resolve(base_dir, e);
            if !p.is_file() {
                return Err(Error::invalid(format!(
                    "entry '{}' file {} does not exist",
                    e.id,
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Relative path rendered with `/` separators.
pub(crate) fn slash_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
