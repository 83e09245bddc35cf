//! Loading recorded streams, deduplication and per-method statistics.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::{CollectionStats, PROFILES_DIR, STATS_FILE};
use crate::model::{MethodId, ObjectProfile};
use crate::pstream;

pub const UNIQUE_DIR: &str = "unique-profiles";
pub const PROFILE_STATS_FILE: &str = "profile-stats.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("profiles of different methods passed to dedupe: {} and {}", .0.0, .0.1)]
    MixedMethods(Box<(MethodId, MethodId)>),
    #[error("no profile store at {0}")]
    Missing(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Keeps the first occurrence (lowest position) of every distinct profile key.
pub fn dedupe(profiles: &[ObjectProfile]) -> Result<Vec<ObjectProfile>, StoreError> {
    if let Some(first) = profiles.first() {
        if let Some(other) = profiles.iter().find(|p| p.method != first.method) {
            return Err(StoreError::MixedMethods(Box::new((first.method.clone(), other.method.clone()))));
        }
    }
    let mut seen = HashSet::new();
    Ok(profiles.iter().filter(|p| seen.insert(p.key())).cloned().collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodStats {
    pub invocations: u64,
    pub collected: u64,
    pub unique: u64,
    /// Records in the stream that could not be read.
    pub corrupt: u64,
}

pub type ProfileStats = BTreeMap<MethodId, MethodStats>;

#[derive(Debug, Default)]
pub struct LoadedStore {
    /// All readable profiles, in stream order.
    pub profiles: BTreeMap<MethodId, Vec<ObjectProfile>>,
    pub unique: BTreeMap<MethodId, Vec<ObjectProfile>>,
    pub stats: ProfileStats,
}

/// Reads every stream under `root/profiles` plus the collector's stats file.
/// Unreadable records are skipped and counted.
pub fn load_and_stats(root: &Path) -> Result<LoadedStore, StoreError> {
    let dir = root.join(PROFILES_DIR);
    if !dir.is_dir() {
        return Err(StoreError::Missing(dir.display().to_string()));
    }
    let collection = match root.join(STATS_FILE) {
        p if p.exists() => CollectionStats::load(&p).map_err(io_err(&p))?,
        _ => CollectionStats::default(),
    };
    let mut out = LoadedStore::default();
    let mut entries: Vec<_> =
        std::fs::read_dir(&dir).map_err(io_err(&dir))?.collect::<Result<_, _>>().map_err(io_err(&dir))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if path.extension().and_then(|e| e.to_str()) != Some(pstream::EXTENSION) {
            continue;
        }
        let Ok(method) = MethodId::from_file_stem(stem) else { continue };
        let data = std::fs::read(&path).map_err(io_err(&path))?;
        let contents = pstream::decode_stream(&method, &data);
        let unique = dedupe(&contents.profiles)?;
        let collected = contents.profiles.len() as u64;
        let invocations = collection.methods.get(&method).map_or(collected, |c| c.invocations.max(collected));
        out.stats.insert(
            method.clone(),
            MethodStats { invocations, collected, unique: unique.len() as u64, corrupt: contents.corrupt as u64 },
        );
        out.profiles.insert(method.clone(), contents.profiles);
        out.unique.insert(method, unique);
    }
    // Methods that were invoked but never stored anything.
    for (method, c) in &collection.methods {
        out.stats
            .entry(method.clone())
            .or_insert_with(|| MethodStats { invocations: c.invocations, ..Default::default() });
        out.profiles.entry(method.clone()).or_default();
        out.unique.entry(method.clone()).or_default();
    }
    Ok(out)
}

/// Writes `unique-profiles/<method>.pstream` and `profile-stats.json` under `out`.
pub fn write_unique(store: &LoadedStore, out: &Path) -> std::io::Result<()> {
    let dir = out.join(UNIQUE_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    for (method, profiles) in &store.unique {
        let data: String = profiles.iter().map(pstream::encode_record).collect();
        std::fs::write(dir.join(format!("{}.{}", method.file_stem(), pstream::EXTENSION)), data)?;
    }
    std::fs::write(out.join(PROFILE_STATS_FILE), serde_json::to_string_pretty(&store.stats)?)
}
