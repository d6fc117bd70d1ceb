//! The upstream release index and the sync daemon that tracks it.
//!
//! The index is a text document with one released package per line:
//!
//! ```text
//! name version arch sha256-of-artifact recipe-ref artifact-ref
//! ```
//!
//! Fields are whitespace-separated (so refs must not contain spaces); `#`
//! starts a comment line. `(name, arch)` pairs are unique. The sync daemon
//! periodically fetches the index, diffs it against the last snapshot, and
//! feeds the resulting events to the scheduler. The snapshot is persisted
//! verbatim next to its digest so a restart never re-processes history.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::recipe::valid_package_name;
use crate::version::Version;

/// The default interval between index fetches.
pub const DEFAULT_SYNC_INTERVAL: Duration = Duration::from_secs(300);

/// One released package as listed in the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageRelease {
    pub name: String,
    pub version: Version,
    pub arch: String,
    /// SHA-256 of the distributed artifact.
    pub artifact_digest: Digest,
    /// Where to fetch the recipe (path or URL).
    pub recipe_ref: String,
    /// Where to fetch the distributed artifact (path or URL).
    pub artifact_ref: String,
}

impl PackageRelease {
    pub fn key(&self) -> (String, String) {
        (self.name.clone(), self.arch.clone())
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index source unreachable: {0}")]
    SourceUnreachable(String),
    #[error("malformed index at line {line}: {reason}")]
    MalformedIndex { line: usize, reason: String },
}

fn bad_index(line: usize, reason: impl Into<String>) -> IndexError {
    IndexError::MalformedIndex {
        line,
        reason: reason.into(),
    }
}

/// Parse index text into releases sorted by `(name, arch)`.
pub fn parse_index(text: &str) -> Result<Vec<PackageRelease>, IndexError> {
    let mut releases: Vec<PackageRelease> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad_index(
                line,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let name = fields[0];
        if !valid_package_name(name) {
            return Err(bad_index(line, format!("invalid package name {name:?}")));
        }
        let version = Version::parse(fields[1])
            .map_err(|e| bad_index(line, format!("bad version: {e}")))?;
        let arch = fields[2];
        if arch.is_empty() {
            return Err(bad_index(line, "empty arch"));
        }
        let artifact_digest = Digest::from_hex(fields[3])
            .map_err(|e| bad_index(line, e.to_string()))?;
        releases.push(PackageRelease {
            name: name.to_string(),
            version,
            arch: arch.to_string(),
            artifact_digest,
            recipe_ref: fields[4].to_string(),
            artifact_ref: fields[5].to_string(),
        });
    }
    releases.sort_by(|a, b| a.key().cmp(&b.key()));
    for pair in releases.windows(2) {
        if pair[0].key() == pair[1].key() {
            return Err(bad_index(
                0,
                format!(
                    "duplicate entry for ({}, {})",
                    pair[0].name, pair[0].arch
                ),
            ));
        }
    }
    Ok(releases)
}

/// Render releases back into index text (inverse of [`parse_index`] up to
/// comments and whitespace).
pub fn emit_index(releases: &[PackageRelease]) -> String {
    let mut out = String::new();
    for r in releases {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            r.name, r.version, r.arch, r.artifact_digest, r.recipe_ref, r.artifact_ref
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncEventKind {
    Added,
    Removed,
    Updated,
}

impl SyncEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyncEventKind::Added => "ADDED",
            SyncEventKind::Removed => "REMOVED",
            SyncEventKind::Updated => "UPDATED",
        }
    }
}

/// One observed index change. `previous_version` is present exactly for
/// [`SyncEventKind::Updated`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncEvent {
    pub kind: SyncEventKind,
    pub release: PackageRelease,
    pub previous_version: Option<Version>,
}

/// Diff two index snapshots into events.
///
/// Per `(name, arch)` key: appearing yields ADDED, disappearing yields
/// REMOVED, a version change yields UPDATED carrying the previous version.
/// A republished entry (same version, different digest or refs) yields a
/// REMOVED/ADDED pair so that applying the events to the old snapshot
/// always reproduces the new one. Events are ordered by `(name, arch)`,
/// removals before additions.
pub fn diff_index(old: &[PackageRelease], new: &[PackageRelease]) -> Vec<SyncEvent> {
    use std::collections::BTreeMap;
    let old_map: BTreeMap<(String, String), &PackageRelease> =
        old.iter().map(|r| (r.key(), r)).collect();
    let new_map: BTreeMap<(String, String), &PackageRelease> =
        new.iter().map(|r| (r.key(), r)).collect();

    let mut events = Vec::new();
    let keys: std::collections::BTreeSet<&(String, String)> =
        old_map.keys().chain(new_map.keys()).collect();
    for key in keys {
        match (old_map.get(key), new_map.get(key)) {
            (None, Some(n)) => events.push(SyncEvent {
                kind: SyncEventKind::Added,
                release: (*n).clone(),
                previous_version: None,
            }),
            (Some(o), None) => events.push(SyncEvent {
                kind: SyncEventKind::Removed,
                release: (*o).clone(),
                previous_version: None,
            }),
            (Some(o), Some(n)) => {
                if o == n {
                    continue;
                }
                if o.version != n.version {
                    events.push(SyncEvent {
                        kind: SyncEventKind::Updated,
                        release: (*n).clone(),
                        previous_version: Some(o.version.clone()),
                    });
                } else {
                    events.push(SyncEvent {
                        kind: SyncEventKind::Removed,
                        release: (*o).clone(),
                        previous_version: None,
                    });
                    events.push(SyncEvent {
                        kind: SyncEventKind::Added,
                        release: (*n).clone(),
                        previous_version: None,
                    });
                }
            }
            (None, None) => unreachable!(),
        }
    }
    events
}

/// Where index text comes from. Implementations: [`FileIndexSource`] here,
/// an HTTP source in the service crate.
pub trait IndexSource: Send {
    fn fetch(&self) -> Result<String, IndexError>;
    /// Human-readable location for logs.
    fn describe(&self) -> String;
}

pub struct FileIndexSource {
    path: PathBuf,
}

impl FileIndexSource {
    pub fn new(path: impl Into<PathBuf>) -> FileIndexSource {
        FileIndexSource { path: path.into() }
    }
}

impl IndexSource for FileIndexSource {
    fn fetch(&self) -> Result<String, IndexError> {
        fs::read_to_string(&self.path)
            .map_err(|e| IndexError::SourceUnreachable(format!("{}: {e}", self.path.display())))
    }

    fn describe(&self) -> String {
        self.path.display().to_string()
    }
}

/// Fetch and parse in one step.
pub fn fetch_index(source: &dyn IndexSource) -> Result<Vec<PackageRelease>, IndexError> {
    parse_index(&source.fetch()?)
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot store: {0}")]
    Io(#[from] std::io::Error),
}

/// Persists the last successfully processed index verbatim, alongside its
/// digest. A digest mismatch on load is treated as no snapshot (the daemon
/// then re-emits ADDED events, which the scheduler absorbs idempotently).
pub struct SnapshotStore {
    dir: PathBuf,
}

impl SnapshotStore {
    pub fn new(dir: impl Into<PathBuf>) -> SnapshotStore {
        SnapshotStore { dir: dir.into() }
    }

    fn text_path(&self) -> PathBuf {
        self.dir.join("sync-snapshot.index")
    }

    fn digest_path(&self) -> PathBuf {
        self.dir.join("sync-snapshot.sha256")
    }

    pub fn load(&self) -> Result<Option<String>, SnapshotError> {
        let text = match fs::read_to_string(self.text_path()) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let recorded = match fs::read_to_string(self.digest_path()) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if Digest::of(text.as_bytes()).to_hex() != recorded.trim() {
            log::warn!("sync snapshot digest mismatch; discarding snapshot");
            return Ok(None);
        }
        Ok(Some(text))
    }

    pub fn store(&self, text: &str) -> Result<(), SnapshotError> {
        fs::create_dir_all(&self.dir)?;
        // Write-then-rename so a crash never leaves a torn snapshot that
        // still matches its digest file.
        let tmp = self.dir.join("sync-snapshot.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, self.text_path())?;
        fs::write(self.digest_path(), format!("{}\n", Digest::of(text.as_bytes())))?;
        Ok(())
    }
}

/// Outcome of one sync tick. `fetch_error` is set when the upstream could
/// not be fetched or parsed; the previous snapshot stays in effect and the
/// next tick retries.
#[derive(Debug)]
pub struct TickReport {
    pub events: Vec<SyncEvent>,
    pub fetch_error: Option<String>,
}

/// The sync daemon: holds the current snapshot and turns fetches into
/// events.
pub struct SyncDaemon<S: IndexSource> {
    source: S,
    store: Option<SnapshotStore>,
    snapshot: Vec<PackageRelease>,
}

impl<S: IndexSource> SyncDaemon<S> {
    /// Create a daemon, restoring the persisted snapshot if one exists.
    pub fn new(source: S, store: Option<SnapshotStore>) -> Result<SyncDaemon<S>, SnapshotError> {
        let snapshot = match &store {
            Some(st) => match st.load()? {
                // A stored snapshot always parsed once before storing.
                Some(text) => parse_index(&text).unwrap_or_default(),
                None => Vec::new(),
            },
            None => Vec::new(),
        };
        Ok(SyncDaemon {
            source,
            store,
            snapshot,
        })
    }

    pub fn snapshot(&self) -> &[PackageRelease] {
        &self.snapshot
    }

    /// Fetch once, diff against the snapshot, persist the new snapshot, and
    /// return the events. Fetch/parse failures are soft (reported in the
    /// [`TickReport`]); snapshot persistence failures are fatal because
    /// continuing would replay events after a restart.
    pub fn tick(&mut self) -> Result<TickReport, SnapshotError> {
        let text = match self.source.fetch() {
            Ok(t) => t,
            Err(e) => {
                return Ok(TickReport {
                    events: Vec::new(),
                    fetch_error: Some(e.to_string()),
                })
            }
        };
        let new = match parse_index(&text) {
            Ok(n) => n,
            Err(e) => {
                return Ok(TickReport {
                    events: Vec::new(),
                    fetch_error: Some(e.to_string()),
                })
            }
        };
        let events = diff_index(&self.snapshot, &new);
        if let Some(store) = &self.store {
            store.store(&text)?;
        }
        self.snapshot = new;
        Ok(TickReport {
            events,
            fetch_error: None,
        })
    }
}

/// Run the sync loop forever: tick, hand events to `sink`, sleep
/// `interval`. Fetch errors are logged and retried on the next tick;
/// persistence errors propagate (fatal).
pub fn run_sync_loop<S: IndexSource>(
    daemon: &mut SyncDaemon<S>,
    interval: Duration,
    mut sink: impl FnMut(Vec<SyncEvent>),
) -> Result<(), SnapshotError> {
    loop {
        match daemon.tick() {
            Ok(report) => {
                if let Some(err) = report.fetch_error {
                    log::warn!("index fetch from {} failed: {err}", daemon.source.describe());
                } else if !report.events.is_empty() {
                    log::info!(
                        "index sync from {}: {} events",
                        daemon.source.describe(),
                        report.events.len()
                    );
                    sink(report.events);
                }
            }
            Err(e) => return Err(e),
        }
        std::thread::sleep(interval);
    }
}
