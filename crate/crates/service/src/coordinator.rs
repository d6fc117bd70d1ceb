//! The single-writer verification coordinator.
//!
//! All queue mutations flow through one mutex-guarded state machine and
//! are appended to a JSON-lines journal before the call returns. On
//! restart the journal is replayed to reproduce the exact scheduler state
//! — including outstanding claim tokens — so no verdict is lost or double
//! counted. A partially written final line (the crash case) is detected
//! and truncated; corruption anywhere else is refused loudly.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use verifier_core::attest::{create_attestation, AttestationStatement, Ed25519Signer, Signer};
use verifier_core::clock::{Clock, Timestamp};
use verifier_core::digest::Digest;
use verifier_core::index::SyncEvent;
use verifier_core::queue::{
    BuildId, BuildTask, QueueEntry, QueueError, QueueRecord, RequeuePolicy, Scheduler,
    StatusCounts, VerificationStatus,
};
use verifier_core::version::Version;

use crate::wire::{ReportOutcome, ReportRequest};

pub const JOURNAL_FILE: &str = "journal.jsonl";

/// Everything retained about one completed rebuild. Exactly one piece of
/// evidence accompanies each verdict: GOOD carries the attestation,
/// NOT_REPRODUCIBLE carries the classification report, BUILD_FAILED
/// carries only its log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildRecord {
    pub build_id: BuildId,
    pub name: String,
    pub version: Version,
    pub arch: String,
    pub status: VerificationStatus,
    pub worker_id: String,
    pub started: Timestamp,
    pub finished: Timestamp,
    pub log: String,
    #[serde(default)]
    pub rebuilt_digest: Option<Digest>,
    #[serde(default)]
    pub diff_report: Option<String>,
    #[serde(default)]
    pub attestation: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum JournalRecord {
    /// First line of every journal: the policy the scheduler runs under.
    Meta {
        rebuilder_id: String,
        base_delay_secs: u64,
        claim_ttl_secs: u64,
    },
    /// A queue mutation without build evidence (sync, claim, requeue).
    Queue { record: QueueRecord },
    /// One build report: the queue mutation and its evidence, atomically
    /// on a single line.
    Report {
        record: QueueRecord,
        build: BuildRecord,
    },
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("journal i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal corrupt at line {line}: {reason}")]
    CorruptJournal { line: usize, reason: String },
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("report rejected: {0}")]
    BadReport(String),
    #[error("attestation failed: {0}")]
    Attest(String),
}

/// Claim-state filter for package listings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusFilter {
    Good,
    Bad,
    Unknown,
}

impl StatusFilter {
    pub fn parse(s: &str) -> Option<StatusFilter> {
        match s.to_ascii_lowercase().as_str() {
            "good" => Some(StatusFilter::Good),
            "bad" => Some(StatusFilter::Bad),
            "unknown" | "unkwn" => Some(StatusFilter::Unknown),
            _ => None,
        }
    }

    fn matches(self, status: VerificationStatus) -> bool {
        matches!(
            (self, status),
            (StatusFilter::Good, VerificationStatus::Good)
                | (StatusFilter::Bad, VerificationStatus::Bad(_))
                | (StatusFilter::Unknown, VerificationStatus::Unknown)
        )
    }
}

struct Inner {
    scheduler: Scheduler,
    builds: BTreeMap<BuildId, BuildRecord>,
    next_build_id: BuildId,
    journal: File,
}

pub struct Coordinator {
    inner: Mutex<Inner>,
    signer: Ed25519Signer,
    rebuilder_id: String,
    clock: Arc<dyn Clock>,
    journal_path: PathBuf,
}

impl Coordinator {
    /// Open (or create) the coordinator state under `state_dir`.
    ///
    /// When a journal exists its recorded policy wins over `policy` so the
    /// replay is faithful; a mismatch is logged.
    pub fn open(
        state_dir: &Path,
        rebuilder_id: &str,
        policy: RequeuePolicy,
        signer: Ed25519Signer,
        clock: Arc<dyn Clock>,
    ) -> Result<Coordinator, CoordinatorError> {
        std::fs::create_dir_all(state_dir)?;
        let journal_path = state_dir.join(JOURNAL_FILE);

        let mut scheduler = Scheduler::new(policy);
        let mut builds = BTreeMap::new();
        let mut next_build_id: BuildId = 1;
        let mut rebuilder = rebuilder_id.to_string();
        let mut needs_meta = true;

        if journal_path.exists() {
            let (records, valid_len, total_len) = read_journal(&journal_path)?;
            if valid_len < total_len {
                log::warn!(
                    "journal has a partially written final line; truncating {} stray bytes",
                    total_len - valid_len
                );
                let f = OpenOptions::new().write(true).open(&journal_path)?;
                f.set_len(valid_len)?;
                f.sync_data()?;
            }
            if let Some(first) = records.first() {
                let JournalRecord::Meta {
                    rebuilder_id: jid,
                    base_delay_secs,
                    claim_ttl_secs,
                } = first
                else {
                    return Err(CoordinatorError::CorruptJournal {
                        line: 1,
                        reason: "journal must start with its meta record".to_string(),
                    });
                };
                let journaled = RequeuePolicy {
                    base_delay: std::time::Duration::from_secs(*base_delay_secs),
                    claim_ttl: std::time::Duration::from_secs(*claim_ttl_secs),
                };
                if journaled != policy || *jid != rebuilder {
                    log::warn!(
                        "journal policy/identity differs from configuration; \
                         keeping the journaled values for a faithful replay"
                    );
                }
                rebuilder = jid.clone();
                scheduler = Scheduler::new(journaled);
                needs_meta = false;

                for (i, rec) in records.iter().enumerate().skip(1) {
                    let line = i + 1;
                    match rec {
                        JournalRecord::Meta { .. } => {
                            return Err(CoordinatorError::CorruptJournal {
                                line,
                                reason: "unexpected second meta record".to_string(),
                            });
                        }
                        JournalRecord::Queue { record } => {
                            scheduler.apply_record(record).map_err(|e| {
                                CoordinatorError::CorruptJournal {
                                    line,
                                    reason: e.to_string(),
                                }
                            })?;
                        }
                        JournalRecord::Report { record, build } => {
                            scheduler.apply_record(record).map_err(|e| {
                                CoordinatorError::CorruptJournal {
                                    line,
                                    reason: e.to_string(),
                                }
                            })?;
                            next_build_id = next_build_id.max(build.build_id + 1);
                            builds.insert(build.build_id, build.clone());
                        }
                    }
                }
            }
        }

        let mut journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)?;
        if needs_meta {
            append_record(
                &mut journal,
                &JournalRecord::Meta {
                    rebuilder_id: rebuilder.clone(),
                    base_delay_secs: policy.base_delay.as_secs(),
                    claim_ttl_secs: policy.claim_ttl.as_secs(),
                },
            )?;
        }

        Ok(Coordinator {
            inner: Mutex::new(Inner {
                scheduler,
                builds,
                next_build_id,
                journal,
            }),
            signer,
            rebuilder_id: rebuilder,
            clock,
            journal_path,
        })
    }

    pub fn rebuilder_id(&self) -> &str {
        &self.rebuilder_id
    }

    pub fn public_key_hex(&self) -> String {
        self.signer.public_key_hex()
    }

    pub fn key_id(&self) -> String {
        self.signer.key_id()
    }

    pub fn journal_path(&self) -> &Path {
        &self.journal_path
    }

    /// Feed observed index changes into the queue.
    pub fn sync_events(&self, events: &[SyncEvent]) -> Result<usize, CoordinatorError> {
        let mut inner = self.inner.lock().unwrap();
        let now = self.clock.now();
        let mut applied = 0;
        for event in events {
            let (_, record) = inner.scheduler.enqueue_new(event, now);
            if let Some(record) = record {
                append_record(&mut inner.journal, &JournalRecord::Queue { record })?;
                applied += 1;
            }
        }
        Ok(applied)
    }

    /// Hand the highest-priority eligible rebuild to a worker.
    pub fn claim(&self, worker_id: &str) -> Result<Option<BuildTask>, CoordinatorError> {
        let mut inner = self.inner.lock().unwrap();
        let now = self.clock.now();
        match inner.scheduler.claim_work(worker_id, now) {
            None => Ok(None),
            Some((task, record)) => {
                append_record(&mut inner.journal, &JournalRecord::Queue { record })?;
                Ok(Some(task))
            }
        }
    }

    /// Accept a worker's report, journal it, and produce the evidence
    /// record (attestation for GOOD verdicts).
    pub fn report(&self, req: &ReportRequest) -> Result<BuildRecord, CoordinatorError> {
        let mut inner = self.inner.lock().unwrap();
        let now = self.clock.now();

        // Resolve the claim for validation purposes. Missing or stale
        // claims fall through to report_result for the precise error.
        let claim = inner
            .scheduler
            .claim(req.claim_token)
            .cloned()
            .ok_or(QueueError::UnknownToken)?;
        let entry = inner.scheduler.entry(&claim.key).cloned();
        let current = entry.filter(|e| e.release.version == claim.version);

        let rebuilt_digest = match &req.rebuilt_digest {
            None => None,
            Some(hex) => Some(Digest::from_hex(hex).map_err(|e| {
                CoordinatorError::BadReport(format!("rebuilt_digest: {e}"))
            })?),
        };
        let recipe_digest = match &req.recipe_digest {
            None => None,
            Some(hex) => Some(Digest::from_hex(hex).map_err(|e| {
                CoordinatorError::BadReport(format!("recipe_digest: {e}"))
            })?),
        };
        let mut dependency_digests = BTreeMap::new();
        for (dep, hex) in &req.dependency_digests {
            let d = Digest::from_hex(hex).map_err(|e| {
                CoordinatorError::BadReport(format!("dependency digest for {dep}: {e}"))
            })?;
            dependency_digests.insert(dep.clone(), d);
        }

        if let Some(current) = &current {
            match req.outcome {
                ReportOutcome::BitIdentical => {
                    let Some(rebuilt) = rebuilt_digest else {
                        return Err(CoordinatorError::BadReport(
                            "bit_identical without a rebuilt digest".to_string(),
                        ));
                    };
                    if rebuilt != current.release.artifact_digest {
                        return Err(CoordinatorError::BadReport(format!(
                            "claims bit_identical but rebuilt digest {rebuilt} \
                             does not equal the reference digest {}",
                            current.release.artifact_digest
                        )));
                    }
                    if recipe_digest.is_none() {
                        return Err(CoordinatorError::BadReport(
                            "bit_identical without the recipe digest".to_string(),
                        ));
                    }
                }
                ReportOutcome::Differs => {
                    if req.diff_report.as_deref().map_or(true, str::is_empty) {
                        return Err(CoordinatorError::BadReport(
                            "differs without a classification report".to_string(),
                        ));
                    }
                }
                ReportOutcome::BuildFailed => {}
            }
        }

        let build_id = inner.next_build_id;
        let verdict = match req.outcome {
            ReportOutcome::BitIdentical => verifier_core::queue::ReportVerdict::BitIdentical { build_id },
            ReportOutcome::Differs => verifier_core::queue::ReportVerdict::Differs { build_id },
            ReportOutcome::BuildFailed => verifier_core::queue::ReportVerdict::BuildFailed { build_id },
        };
        let (entry, record) = inner.scheduler.report_result(req.claim_token, verdict, now)?;

        let attestation = if entry.status.is_good() {
            let statement = AttestationStatement {
                rebuilder_id: self.rebuilder_id.clone(),
                name: entry.release.name.clone(),
                version: entry.release.version.clone(),
                arch: entry.release.arch.clone(),
                recipe_digest: recipe_digest.expect("validated above"),
                dependency_digests: dependency_digests.clone(),
                reference_digest: entry.release.artifact_digest,
                rebuilt_digest: rebuilt_digest.expect("validated above"),
                timestamp: now,
            };
            let att = create_attestation(&self.signer, statement)
                .map_err(|e| CoordinatorError::Attest(e.to_string()))?;
            Some(att.to_text())
        } else {
            None
        };
        let diff_report = match entry.status {
            VerificationStatus::Bad(verifier_core::queue::BadReason::NotReproducible) => {
                req.diff_report.clone()
            }
            _ => None,
        };

        let build = BuildRecord {
            build_id,
            name: entry.release.name.clone(),
            version: entry.release.version.clone(),
            arch: entry.release.arch.clone(),
            status: entry.status,
            worker_id: claim.worker_id.clone(),
            started: Timestamp(req.started),
            finished: Timestamp(req.finished),
            log: req.log.clone(),
            rebuilt_digest,
            diff_report,
            attestation,
        };
        append_record(
            &mut inner.journal,
            &JournalRecord::Report {
                record,
                build: build.clone(),
            },
        )?;
        inner.next_build_id += 1;
        inner.builds.insert(build_id, build.clone());
        Ok(build)
    }

    /// Reset every entry of `name` (all architectures) to eligible UNKWN.
    pub fn requeue(&self, name: &str) -> Result<usize, CoordinatorError> {
        let mut inner = self.inner.lock().unwrap();
        let now = self.clock.now();
        let (updated, record) = inner.scheduler.requeue(name, now)?;
        append_record(&mut inner.journal, &JournalRecord::Queue { record })?;
        Ok(updated.len())
    }

    pub fn counts(&self) -> StatusCounts {
        self.inner.lock().unwrap().scheduler.counts()
    }

    /// Filtered, paginated package listing plus the pre-pagination count.
    pub fn packages(
        &self,
        status: Option<StatusFilter>,
        prefix: Option<&str>,
        offset: usize,
        limit: usize,
    ) -> (Vec<QueueEntry>, usize) {
        let inner = self.inner.lock().unwrap();
        let matched: Vec<&QueueEntry> = inner
            .scheduler
            .entries()
            .filter(|e| status.is_none_or(|f| f.matches(e.status)))
            .filter(|e| prefix.is_none_or(|p| e.release.name.starts_with(p)))
            .collect();
        let total = matched.len();
        let page = matched
            .into_iter()
            .skip(offset)
            .take(limit)
            .cloned()
            .collect();
        (page, total)
    }

    /// All entries (one per architecture) for a package name.
    pub fn package(&self, name: &str) -> Vec<QueueEntry> {
        let inner = self.inner.lock().unwrap();
        inner
            .scheduler
            .entries_named(name)
            .into_iter()
            .cloned()
            .collect()
    }

    pub fn build(&self, id: BuildId) -> Option<BuildRecord> {
        self.inner.lock().unwrap().builds.get(&id).cloned()
    }

    pub fn builds_len(&self) -> usize {
        self.inner.lock().unwrap().builds.len()
    }
}

fn append_record(journal: &mut File, record: &JournalRecord) -> Result<(), CoordinatorError> {
    let mut line = serde_json::to_string(record)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    line.push('\n');
    journal.write_all(line.as_bytes())?;
    journal.sync_data()?;
    Ok(())
}

/// Read all complete records. Returns (records, byte length of the valid
/// prefix, total byte length). A trailing partial line is tolerated (the
/// crash case); garbage followed by more data is corruption.
fn read_journal(path: &Path) -> Result<(Vec<JournalRecord>, u64, u64), CoordinatorError> {
    let bytes = std::fs::read(path)?;
    let total = bytes.len() as u64;
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            // No newline: the final line never finished being written.
            return Ok((records, offset as u64, total));
        };
        let line = &bytes[offset..offset + nl];
        match serde_json::from_slice::<JournalRecord>(line) {
            Ok(rec) => {
                records.push(rec);
                offset += nl + 1;
            }
            Err(e) => {
                let rest = &bytes[offset + nl + 1..];
                if rest.iter().all(|b| b.is_ascii_whitespace()) {
                    // Unparseable final line: a crash mid-write.
                    return Ok((records, offset as u64, total));
                }
                return Err(CoordinatorError::CorruptJournal {
                    line: line_no,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((records, offset as u64, total))
}
