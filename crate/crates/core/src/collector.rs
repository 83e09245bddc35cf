//! Runtime recording of object profiles with per-method disk budgets.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use prodcarve_lang::Value;
use serde::{Deserialize, Serialize};

use crate::codec::{serialize_value, SerializeError};
use crate::model::{MethodId, ObjectProfile, SerializedValue};
use crate::pstream;

pub const DEFAULT_THRESHOLD_BYTES: u64 = 200_000_000;
pub const STATS_FILE: &str = "collection-stats.json";
pub const PROFILES_DIR: &str = "profiles";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipCause {
    /// The write would have pushed the method past its byte threshold.
    Budget,
    /// A constituent owns an unserializable resource.
    Resource,
    /// A constituent changed while being snapshotted.
    Mutation,
    /// The method's stream stayed locked past the bounded wait.
    Overflow,
    /// The stream file could not be written.
    Io,
}

impl From<&SerializeError> for SkipCause {
    fn from(e: &SerializeError) -> Self {
        match e {
            SerializeError::UnserializableResource { .. } => SkipCause::Resource,
            SerializeError::ConcurrentMutation => SkipCause::Mutation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    Stored(u64),
    Skipped(SkipCause),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub budget: u64,
    pub resource: u64,
    pub mutation: u64,
    pub overflow: u64,
    pub io: u64,
}

impl SkipCounts {
    pub fn total(&self) -> u64 {
        self.budget + self.resource + self.mutation + self.overflow + self.io
    }

    fn bump(&mut self, cause: SkipCause) {
        match cause {
            SkipCause::Budget => self.budget += 1,
            SkipCause::Resource => self.resource += 1,
            SkipCause::Mutation => self.mutation += 1,
            SkipCause::Overflow => self.overflow += 1,
            SkipCause::Io => self.io += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCounters {
    pub invocations: u64,
    pub collected: u64,
    /// Encoded bytes accepted into the stream.
    pub bytes: u64,
    pub skipped: SkipCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub threshold_bytes: u64,
    pub methods: BTreeMap<MethodId, MethodCounters>,
}

impl CollectionStats {
    pub fn load(path: &Path) -> std::io::Result<CollectionStats> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[derive(Debug, Clone)]
pub struct CollectorConfig {
    /// Directory receiving `profiles/` and the stats file.
    pub root: PathBuf,
    pub threshold_bytes: u64,
    /// Write the stats file every this many invocations (0 disables).
    pub flush_every: u64,
    /// Longest a subject thread waits for a contended stream.
    pub lock_wait: Duration,
}

impl CollectorConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CollectorConfig {
            root: root.into(),
            threshold_bytes: DEFAULT_THRESHOLD_BYTES,
            flush_every: 1000,
            lock_wait: Duration::from_millis(250),
        }
    }
}

#[derive(Default)]
struct Stream {
    file: Option<File>,
    /// Ordinal of the last invocation that reached the stream.
    ordinal: u64,
    bytes: u64,
}

#[derive(Default)]
struct Sink {
    stream: Mutex<Stream>,
    counters: Mutex<MethodCounters>,
}

/// Thread-safe profile recorder. Failures never propagate to the subject;
/// they become skip causes in the counters.
pub struct Collector {
    cfg: CollectorConfig,
    sinks: Mutex<BTreeMap<MethodId, Arc<Sink>>>,
    invocations: AtomicU64,
    stats_writer: Mutex<()>,
}

impl Collector {
    /// Starts a fresh collection session, replacing any earlier profiles under
    /// the configured root.
    pub fn create(cfg: CollectorConfig) -> std::io::Result<Collector> {
        let dir = cfg.root.join(PROFILES_DIR);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Collector {
            cfg,
            sinks: Mutex::new(BTreeMap::new()),
            invocations: AtomicU64::new(0),
            stats_writer: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &CollectorConfig {
        &self.cfg
    }

    pub fn stream_path(&self, method: &MethodId) -> PathBuf {
        stream_path(&self.cfg.root, method)
    }

    fn sink(&self, method: &MethodId) -> Arc<Sink> {
        self.sinks.lock().entry(method.clone()).or_default().clone()
    }

    /// Records one completed invocation. Receiver and parameter snapshots were
    /// taken at entry; the result is serialized here.
    pub fn record_invocation(
        &self,
        method: &MethodId,
        receiving: Result<SerializedValue, SerializeError>,
        parameters: Result<Vec<SerializedValue>, SerializeError>,
        result: &Value,
    ) -> Recorded {
        let sink = self.sink(method);
        let outcome = self.store(method, &sink, receiving, parameters, result);
        {
            let mut c = sink.counters.lock();
            c.invocations += 1;
            match outcome {
                Recorded::Stored(_) => c.collected += 1,
                Recorded::Skipped(cause) => c.skipped.bump(cause),
            }
        }
        let n = self.invocations.fetch_add(1, Ordering::Relaxed) + 1;
        if self.cfg.flush_every > 0 && n.is_multiple_of(self.cfg.flush_every) {
            if let Some(_guard) = self.stats_writer.try_lock() {
                let _ = self.write_stats();
            }
        }
        outcome
    }

    fn store(
        &self,
        method: &MethodId,
        sink: &Sink,
        receiving: Result<SerializedValue, SerializeError>,
        parameters: Result<Vec<SerializedValue>, SerializeError>,
        result: &Value,
    ) -> Recorded {
        let snapshot =
            receiving.and_then(|r| parameters.map(|p| (r, p))).and_then(|(r, p)| Ok((r, p, serialize_value(result)?)));
        let Some(mut stream) = sink.stream.try_lock_for(self.cfg.lock_wait) else {
            return Recorded::Skipped(SkipCause::Overflow);
        };
        stream.ordinal += 1;
        let seq = stream.ordinal;
        let (receiving, parameters, result) = match snapshot {
            Ok(s) => s,
            Err(e) => return Recorded::Skipped(SkipCause::from(&e)),
        };
        let profile = ObjectProfile { method: method.clone(), seq, receiving, parameters, result };
        let size = profile.byte_count() as u64;
        if stream.bytes + size > self.cfg.threshold_bytes {
            return Recorded::Skipped(SkipCause::Budget);
        }
        if stream.file.is_none() {
            match OpenOptions::new().create(true).append(true).open(self.stream_path(method)) {
                Ok(f) => stream.file = Some(f),
                Err(_) => return Recorded::Skipped(SkipCause::Io),
            }
        }
        let record = pstream::encode_record(&profile);
        match stream.file.as_mut().expect("opened above").write_all(record.as_bytes()) {
            Ok(()) => {
                stream.bytes += size;
                sink.counters.lock().bytes += size;
                Recorded::Stored(seq)
            }
            Err(_) => Recorded::Skipped(SkipCause::Io),
        }
    }

    /// Consistent snapshot of all counters. Each method's counters are read
    /// under its lock, so `collected + skipped == invocations` always holds.
    pub fn stats(&self) -> CollectionStats {
        let sinks: Vec<_> = self.sinks.lock().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        CollectionStats {
            threshold_bytes: self.cfg.threshold_bytes,
            methods: sinks.into_iter().map(|(k, s)| (k, s.counters.lock().clone())).collect(),
        }
    }

    /// Writes the stats file and returns the snapshot it contains.
    pub fn flush_stats(&self) -> std::io::Result<CollectionStats> {
        let _guard = self.stats_writer.lock();
        self.write_stats()
    }

    fn write_stats(&self) -> std::io::Result<CollectionStats> {
        let stats = self.stats();
        let path = self.cfg.root.join(STATS_FILE);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&stats)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(stats)
    }
}

impl Drop for Collector {
    fn drop(&mut self) {
        let _ = self.flush_stats();
    }
}

pub fn stream_path(root: &Path, method: &MethodId) -> PathBuf {
    root.join(PROFILES_DIR).join(format!("{}.{}", method.file_stem(), pstream::EXTENSION))
}
