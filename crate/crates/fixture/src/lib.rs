//! The sample subject: font tables and a shopping cart, a weak test suite
//! that exercises most methods without checking them, and a workload.
//!
//! The subject lives in `subject/` next to this crate. Its
//! `fixture-manifest.json` records what each public method was planted to be.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use prodcarve::model::{MethodId, ReturnShape};
use prodcarve::mutation::TargetStatus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "fixture-manifest.json";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Determinism {
    Deterministic,
    EnvironmentDependent,
    Nondeterministic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedMethod {
    pub method: MethodId,
    pub planted_status: TargetStatus,
    pub determinism: Determinism,
    pub return_shape: ReturnShape,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl PlantedMethod {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

/// Profile counts the workload produces regardless of its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedProfiles {
    pub invocations: u64,
    pub unique: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub default_seed: i64,
    pub methods: Vec<PlantedMethod>,
    pub expected_profiles: BTreeMap<MethodId, ExpectedProfiles>,
}

impl FixtureManifest {
    pub fn load(subject_root: &Path) -> Result<FixtureManifest, FixtureError> {
        let path = subject_root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| FixtureError::Io { path, source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn method(&self, id: &MethodId) -> Option<&PlantedMethod> {
        self.methods.iter().find(|m| &m.method == id)
    }

    pub fn with_status(&self, status: TargetStatus) -> Vec<&PlantedMethod> {
        self.methods.iter().filter(|m| m.planted_status == status).collect()
    }

    pub fn tagged(&self, tag: &str) -> Vec<&PlantedMethod> {
        self.methods.iter().filter(|m| m.has_tag(tag)).collect()
    }
}

/// The pristine subject shipped with this crate.
pub fn subject_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("subject")
}

pub fn manifest() -> Result<FixtureManifest, FixtureError> {
    FixtureManifest::load(&subject_root())
}

/// Copies the subject so a run can write next to it without touching the
/// checked-in tree.
pub fn copy_subject(dest: &Path) -> std::io::Result<()> {
    prodcarve_lang::project::copy_tree(&subject_root(), dest)
}
