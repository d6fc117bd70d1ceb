//! The verification scheduler.
//!
//! Every known `(name, arch)` release has a status:
//!
//! - `UNKWN`: not verified at its current version yet (or explicitly
//!   requeued). Verified first.
//! - `GOOD`: rebuilt bit-for-bit identical. Never handed out again until
//!   the version changes or an operator requeues it.
//! - `BAD`: the rebuild failed or produced different bits. Retried with a
//!   linear backoff: the n-th retry waits `n × base_delay`.
//!
//! Workers claim eligible entries and report verdicts under a claim token.
//! Claims expire after a deadline (lazily — an expired claim simply stops
//! shielding its entry) and are invalidated when the entry's version
//! changes underneath them.
//!
//! Every mutation returns a [`QueueRecord`] so a caller can journal it;
//! [`Scheduler::apply_record`] replays a journal deterministically,
//! including the original claim tokens.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::index::{PackageRelease, SyncEvent, SyncEventKind};

/// Default retry backoff base: one week.
pub const DEFAULT_BASE_DELAY: Duration = Duration::from_secs(7 * 86_400);

/// Default claim time-to-live: thirty minutes.
pub const DEFAULT_CLAIM_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BadReason {
    BuildFailed,
    NotReproducible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerificationStatus {
    Unknown,
    Good,
    Bad(BadReason),
}

impl VerificationStatus {
    pub fn label(self) -> &'static str {
        match self {
            VerificationStatus::Unknown => "UNKWN",
            VerificationStatus::Good => "GOOD",
            VerificationStatus::Bad(_) => "BAD",
        }
    }

    pub fn is_good(self) -> bool {
        matches!(self, VerificationStatus::Good)
    }

    /// UNKWN sorts before BAD when picking work.
    fn claim_rank(self) -> u8 {
        match self {
            VerificationStatus::Unknown => 0,
            VerificationStatus::Bad(_) => 1,
            VerificationStatus::Good => 2,
        }
    }
}

impl fmt::Display for VerificationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Identifier of one build execution, assigned by the caller (the service
/// allocates them sequentially).
pub type BuildId = u64;

/// Opaque claim handle handed to a worker.
pub type ClaimToken = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PkgKey {
    pub name: String,
    pub arch: String,
}

impl PkgKey {
    pub fn of(release: &PackageRelease) -> PkgKey {
        PkgKey {
            name: release.name.clone(),
            arch: release.arch.clone(),
        }
    }
}

impl fmt::Display for PkgKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub release: PackageRelease,
    pub status: VerificationStatus,
    /// Completed verification attempts at the current version.
    pub attempts: u32,
    /// When the entry may next be claimed. `Timestamp::NEVER` for GOOD.
    pub next_eligible: Timestamp,
    pub last_build_id: Option<BuildId>,
}

/// An outstanding claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub token: ClaimToken,
    pub key: PkgKey,
    /// Version at claim time; a report against a different current version
    /// is stale.
    pub version: crate::version::Version,
    pub worker_id: String,
    pub deadline: Timestamp,
}

/// What a worker hands out to actually do: the claimed release plus the
/// token to report under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildTask {
    pub claim_token: ClaimToken,
    pub release: PackageRelease,
    pub deadline: Timestamp,
}

/// A worker's verdict on one rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportVerdict {
    /// Rebuilt artifact byte-identical to the distributed one.
    BitIdentical { build_id: BuildId },
    /// Build completed but the bits differ.
    Differs { build_id: BuildId },
    /// The build itself failed.
    BuildFailed { build_id: BuildId },
}

impl ReportVerdict {
    pub fn build_id(self) -> BuildId {
        match self {
            ReportVerdict::BitIdentical { build_id }
            | ReportVerdict::Differs { build_id }
            | ReportVerdict::BuildFailed { build_id } => build_id,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    /// The token does not correspond to any outstanding claim.
    #[error("unknown claim token")]
    UnknownToken,
    /// The claim exists but its deadline passed or its entry moved to a
    /// different version; the report is discarded and queue state is
    /// unchanged.
    #[error("claim token expired")]
    ExpiredToken,
    #[error("no queue entry for package {0:?}")]
    NotFound(String),
    #[error("attempts must be at least 1")]
    ZeroAttempts,
}

/// Retry delay before attempt `attempts + 1`: `attempts × base`.
/// `attempts` counts completed attempts and must be at least 1.
pub fn compute_delay(attempts: u32, base: Duration) -> Result<Duration, QueueError> {
    if attempts == 0 {
        return Err(QueueError::ZeroAttempts);
    }
    Ok(base.checked_mul(attempts).unwrap_or(Duration::MAX))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequeuePolicy {
    pub base_delay: Duration,
    pub claim_ttl: Duration,
}

impl Default for RequeuePolicy {
    fn default() -> Self {
        RequeuePolicy {
            base_delay: DEFAULT_BASE_DELAY,
            claim_ttl: DEFAULT_CLAIM_TTL,
        }
    }
}

/// One journaled scheduler mutation. Replaying records through
/// [`Scheduler::apply_record`] in order reproduces the scheduler state,
/// including claim tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueRecord {
    Synced {
        event: SyncEvent,
        now: Timestamp,
    },
    Claimed {
        worker_id: String,
        token: ClaimToken,
        key: PkgKey,
        deadline: Timestamp,
        now: Timestamp,
    },
    Reported {
        token: ClaimToken,
        verdict: ReportVerdict,
        now: Timestamp,
    },
    Requeued {
        name: String,
        now: Timestamp,
    },
}

#[derive(Debug, Error)]
#[error("journal replay failed on {record:?}: {reason}")]
pub struct ReplayError {
    pub record: Box<QueueRecord>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatusCounts {
    pub good: u64,
    pub bad: u64,
    pub unknown: u64,
}

impl StatusCounts {
    pub fn total(self) -> u64 {
        self.good + self.bad + self.unknown
    }
}

/// Serializable full scheduler state, for snapshotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulerSnapshot {
    pub policy: RequeuePolicy,
    pub entries: Vec<QueueEntry>,
    pub claims: Vec<Claim>,
    pub next_token: ClaimToken,
}

#[derive(Debug)]
pub struct Scheduler {
    policy: RequeuePolicy,
    entries: BTreeMap<PkgKey, QueueEntry>,
    claims: BTreeMap<ClaimToken, Claim>,
    next_token: ClaimToken,
}

impl Scheduler {
    pub fn new(policy: RequeuePolicy) -> Scheduler {
        Scheduler {
            policy,
            entries: BTreeMap::new(),
            claims: BTreeMap::new(),
            next_token: 1,
        }
    }

    pub fn policy(&self) -> RequeuePolicy {
        self.policy
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.values()
    }

    pub fn entry(&self, key: &PkgKey) -> Option<&QueueEntry> {
        self.entries.get(key)
    }

    pub fn entries_named(&self, name: &str) -> Vec<&QueueEntry> {
        self.entries
            .values()
            .filter(|e| e.release.name == name)
            .collect()
    }

    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for e in self.entries.values() {
            match e.status {
                VerificationStatus::Good => c.good += 1,
                VerificationStatus::Bad(_) => c.bad += 1,
                VerificationStatus::Unknown => c.unknown += 1,
            }
        }
        c
    }

    pub fn claim(&self, token: ClaimToken) -> Option<&Claim> {
        self.claims.get(&token)
    }

    fn drop_claims_for(&mut self, key: &PkgKey) {
        self.claims.retain(|_, c| &c.key != key);
    }

    /// Ingest one sync event. ADDED/UPDATED (re)queue the entry as UNKWN
    /// with zero attempts; a re-announcement of the version we already
    /// track is a no-op. REMOVED retires the entry. Any change of version
    /// invalidates outstanding claims on the entry.
    ///
    /// Returns the affected entry (if it still exists) and the journal
    /// record when state changed.
    pub fn enqueue_new(
        &mut self,
        event: &SyncEvent,
        now: Timestamp,
    ) -> (Option<QueueEntry>, Option<QueueRecord>) {
        let key = PkgKey::of(&event.release);
        let record = QueueRecord::Synced {
            event: event.clone(),
            now,
        };
        match event.kind {
            SyncEventKind::Added | SyncEventKind::Updated => {
                if let Some(existing) = self.entries.get(&key) {
                    if existing.release == event.release {
                        return (Some(existing.clone()), None);
                    }
                    if existing.release.version != event.release.version {
                        self.drop_claims_for(&key);
                    }
                }
                let entry = QueueEntry {
                    release: event.release.clone(),
                    status: VerificationStatus::Unknown,
                    attempts: 0,
                    next_eligible: now,
                    last_build_id: None,
                };
                self.entries.insert(key, entry.clone());
                (Some(entry), Some(record))
            }
            SyncEventKind::Removed => {
                if self.entries.remove(&key).is_none() {
                    return (None, None);
                }
                self.drop_claims_for(&key);
                (None, Some(record))
            }
        }
    }

    /// Hand the most urgent eligible entry to `worker_id`.
    ///
    /// Eligible: not GOOD, `next_eligible <= now`, and no live claim.
    /// Priority: UNKWN before BAD, then earlier `next_eligible`, then
    /// `(name, arch)`.
    pub fn claim_work(
        &mut self,
        worker_id: &str,
        now: Timestamp,
    ) -> Option<(BuildTask, QueueRecord)> {
        // Expiry is lazy: an expired claim stops shielding its entry but
        // stays in the map until its token is consumed, so a late report
        // gets the precise ExpiredToken error.
        let claimed: std::collections::BTreeSet<&PkgKey> = self
            .claims
            .values()
            .filter(|c| c.deadline > now)
            .map(|c| &c.key)
            .collect();
        let best = self
            .entries
            .iter()
            .filter(|(key, e)| {
                !e.status.is_good() && e.next_eligible <= now && !claimed.contains(key)
            })
            .min_by_key(|(key, e)| (e.status.claim_rank(), e.next_eligible, (*key).clone()))?;
        let key = best.0.clone();
        let release = best.1.release.clone();

        let token = self.next_token;
        let deadline = now.plus(self.policy.claim_ttl);
        self.claim_exact(worker_id, token, key.clone(), deadline);
        self.next_token += 1;
        let task = BuildTask {
            claim_token: token,
            release,
            deadline,
        };
        let record = QueueRecord::Claimed {
            worker_id: worker_id.to_string(),
            token,
            key,
            deadline,
            now,
        };
        Some((task, record))
    }

    /// Install a claim with a caller-chosen token (journal replay path).
    fn claim_exact(&mut self, worker_id: &str, token: ClaimToken, key: PkgKey, deadline: Timestamp) {
        let version = self
            .entries
            .get(&key)
            .map(|e| e.release.version.clone())
            .expect("claim_exact: entry exists");
        self.claims.insert(
            token,
            Claim {
                token,
                key,
                version,
                worker_id: worker_id.to_string(),
                deadline,
            },
        );
    }

    /// Apply a worker's verdict for an outstanding claim.
    ///
    /// `UnknownToken`: no such claim (never issued, already consumed, or
    /// its entry was retired). `ExpiredToken`: the claim's deadline passed
    /// or the entry moved to a different version; the report is discarded.
    pub fn report_result(
        &mut self,
        token: ClaimToken,
        verdict: ReportVerdict,
        now: Timestamp,
    ) -> Result<(QueueEntry, QueueRecord), QueueError> {
        let claim = match self.claims.get(&token) {
            None => return Err(QueueError::UnknownToken),
            Some(c) => c.clone(),
        };
        if claim.deadline <= now {
            self.claims.remove(&token);
            return Err(QueueError::ExpiredToken);
        }
        let Some(entry) = self.entries.get_mut(&claim.key) else {
            self.claims.remove(&token);
            return Err(QueueError::UnknownToken);
        };
        if entry.release.version != claim.version {
            self.claims.remove(&token);
            return Err(QueueError::ExpiredToken);
        }

        match verdict {
            ReportVerdict::BitIdentical { build_id } => {
                entry.status = VerificationStatus::Good;
                entry.attempts += 1;
                entry.next_eligible = Timestamp::NEVER;
                entry.last_build_id = Some(build_id);
            }
            ReportVerdict::Differs { build_id } => {
                entry.status = VerificationStatus::Bad(BadReason::NotReproducible);
                entry.attempts += 1;
                let delay = compute_delay(entry.attempts, self.policy.base_delay)
                    .expect("attempts >= 1 after increment");
                entry.next_eligible = now.plus(delay);
                entry.last_build_id = Some(build_id);
            }
            ReportVerdict::BuildFailed { build_id } => {
                entry.status = VerificationStatus::Bad(BadReason::BuildFailed);
                entry.attempts += 1;
                let delay = compute_delay(entry.attempts, self.policy.base_delay)
                    .expect("attempts >= 1 after increment");
                entry.next_eligible = now.plus(delay);
                entry.last_build_id = Some(build_id);
            }
        }
        let snapshot = entry.clone();
        self.claims.remove(&token);
        Ok((
            snapshot,
            QueueRecord::Reported {
                token,
                verdict,
                now,
            },
        ))
    }

    /// Make every entry named `name` immediately eligible. GOOD entries go
    /// back to UNKWN with zero attempts; BAD entries keep status and
    /// attempt count but lose their backoff wait.
    pub fn requeue(
        &mut self,
        name: &str,
        now: Timestamp,
    ) -> Result<(Vec<QueueEntry>, QueueRecord), QueueError> {
        let mut updated = Vec::new();
        for entry in self.entries.values_mut() {
            if entry.release.name != name {
                continue;
            }
            if entry.status.is_good() {
                entry.status = VerificationStatus::Unknown;
                entry.attempts = 0;
            }
            entry.next_eligible = now;
            updated.push(entry.clone());
        }
        if updated.is_empty() {
            return Err(QueueError::NotFound(name.to_string()));
        }
        Ok((
            updated,
            QueueRecord::Requeued {
                name: name.to_string(),
                now,
            },
        ))
    }

    /// Replay one journal record. Claim records restore the original
    /// token; report errors against vanished claims are tolerated the same
    /// way the live path discards stale reports.
    pub fn apply_record(&mut self, record: &QueueRecord) -> Result<(), ReplayError> {
        let fail = |reason: &str| ReplayError {
            record: Box::new(record.clone()),
            reason: reason.to_string(),
        };
        match record {
            QueueRecord::Synced { event, now } => {
                self.enqueue_new(event, *now);
            }
            QueueRecord::Claimed {
                worker_id,
                token,
                key,
                deadline,
                now: _,
            } => {
                if !self.entries.contains_key(key) {
                    return Err(fail("claimed entry does not exist"));
                }
                self.claim_exact(worker_id, *token, key.clone(), *deadline);
                if *token >= self.next_token {
                    self.next_token = token + 1;
                }
            }
            QueueRecord::Reported {
                token,
                verdict,
                now,
            } => match self.report_result(*token, *verdict, *now) {
                Ok(_) | Err(QueueError::UnknownToken) | Err(QueueError::ExpiredToken) => {}
                Err(e) => return Err(fail(&e.to_string())),
            },
            QueueRecord::Requeued { name, now } => match self.requeue(name, *now) {
                Ok(_) | Err(QueueError::NotFound(_)) => {}
                Err(e) => return Err(fail(&e.to_string())),
            },
        }
        Ok(())
    }

    pub fn snapshot(&self) -> SchedulerSnapshot {
        SchedulerSnapshot {
            policy: self.policy,
            entries: self.entries.values().cloned().collect(),
            claims: self.claims.values().cloned().collect(),
            next_token: self.next_token,
        }
    }

    pub fn restore(snapshot: SchedulerSnapshot) -> Scheduler {
        let mut s = Scheduler::new(snapshot.policy);
        for entry in snapshot.entries {
            s.entries.insert(PkgKey::of(&entry.release), entry);
        }
        for claim in snapshot.claims {
            s.claims.insert(claim.token, claim);
        }
        s.next_token = snapshot.next_token;
        s
    }
}
