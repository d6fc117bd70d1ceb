//! Data types exchanged over the HTTP API.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use verifier_core::clock::Timestamp;
use verifier_core::queue::{BadReason, BuildTask, QueueEntry, VerificationStatus};

pub fn bad_reason_str(reason: BadReason) -> &'static str {
    match reason {
        BadReason::BuildFailed => "BUILD_FAILED",
        BadReason::NotReproducible => "NOT_REPRODUCIBLE",
    }
}

fn status_parts(status: VerificationStatus) -> (String, Option<String>) {
    let reason = match status {
        VerificationStatus::Bad(r) => Some(bad_reason_str(r).to_string()),
        _ => None,
    };
    (status.label().to_string(), reason)
}

fn timestamp_opt(t: Timestamp) -> Option<i64> {
    if t.is_never() {
        None
    } else {
        Some(t.0)
    }
}

// ---------------------------------------------------------------------------
// Worker protocol

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimRequest {
    pub worker_id: String,
}

/// A claimed rebuild, as handed to a worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub claim_token: u64,
    pub name: String,
    pub version: String,
    pub arch: String,
    /// Hex SHA-256 the distributed artifact must hash to.
    pub artifact_digest: String,
    pub recipe_ref: String,
    pub artifact_ref: String,
    /// Report before this instant or the claim lapses.
    pub deadline: i64,
}

impl From<&BuildTask> for TaskView {
    fn from(task: &BuildTask) -> TaskView {
        TaskView {
            claim_token: task.claim_token,
            name: task.release.name.clone(),
            version: task.release.version.to_string(),
            arch: task.release.arch.clone(),
            artifact_digest: task.release.artifact_digest.to_hex(),
            recipe_ref: task.release.recipe_ref.clone(),
            artifact_ref: task.release.artifact_ref.clone(),
            deadline: task.deadline.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimResponse {
    /// None when no work is eligible right now.
    pub task: Option<TaskView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportOutcome {
    BitIdentical,
    Differs,
    BuildFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRequest {
    pub claim_token: u64,
    pub outcome: ReportOutcome,
    pub log: String,
    /// Hex digest of the rebuilt artifact (absent when the build failed).
    #[serde(default)]
    pub rebuilt_digest: Option<String>,
    /// Hex digest of the canonical recipe the rebuild used.
    #[serde(default)]
    pub recipe_digest: Option<String>,
    /// Hex digests of the dependencies installed into the environment.
    #[serde(default)]
    pub dependency_digests: BTreeMap<String, String>,
    /// Rendered classification report; required when the outcome is
    /// `differs`.
    #[serde(default)]
    pub diff_report: Option<String>,
    pub started: i64,
    pub finished: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportResponse {
    pub build_id: u64,
    pub status: String,
}

// ---------------------------------------------------------------------------
// Read API

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackageView {
    pub name: String,
    pub version: String,
    pub arch: String,
    pub status: String,
    #[serde(default)]
    pub bad_reason: Option<String>,
    pub attempts: u32,
    /// Unix seconds; absent when the package will not be retried (GOOD).
    #[serde(default)]
    pub next_eligible: Option<i64>,
    #[serde(default)]
    pub last_build_id: Option<u64>,
}

impl From<&QueueEntry> for PackageView {
    fn from(entry: &QueueEntry) -> PackageView {
        let (status, bad_reason) = status_parts(entry.status);
        PackageView {
            name: entry.release.name.clone(),
            version: entry.release.version.to_string(),
            arch: entry.release.arch.clone(),
            status,
            bad_reason,
            attempts: entry.attempts,
            next_eligible: timestamp_opt(entry.next_eligible),
            last_build_id: entry.last_build_id,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackageListView {
    pub packages: Vec<PackageView>,
    /// Matches before offset/limit were applied.
    pub total_matched: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildView {
    pub build_id: u64,
    pub name: String,
    pub version: String,
    pub arch: String,
    pub status: String,
    #[serde(default)]
    pub bad_reason: Option<String>,
    pub worker_id: String,
    pub started: i64,
    pub finished: i64,
    #[serde(default)]
    pub rebuilt_digest: Option<String>,
    pub has_log: bool,
    pub has_diff: bool,
    pub has_attestation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DashboardView {
    pub rebuilder_id: String,
    pub total: u64,
    pub good: u64,
    pub bad: u64,
    pub unknown: u64,
    /// good / (good + bad) × 100, rounded to one decimal; absent until a
    /// verdict exists.
    #[serde(default)]
    pub reproducible_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyView {
    pub rebuilder_id: String,
    /// Hex Ed25519 public key.
    pub public_key: String,
    /// Hex SHA-256 of the public key (the id attestations carry).
    pub key_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequeueRequest {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequeueResponse {
    /// Entries (name/arch pairs) pushed back to UNKWN-eligible.
    pub requeued: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// The ratio shown on dashboards: good / (good + bad) × 100, one decimal.
pub fn reproducible_ratio(good: u64, bad: u64) -> Option<f64> {
    let denom = good + bad;
    if denom == 0 {
        return None;
    }
    let ratio = good as f64 * 100.0 / denom as f64;
    Some((ratio * 10.0).round() / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_rounds_to_one_decimal() {
        assert_eq!(reproducible_ratio(0, 0), None);
        assert_eq!(reproducible_ratio(8, 12), Some(40.0));
        assert_eq!(reproducible_ratio(1, 2), Some(33.3));
        assert_eq!(reproducible_ratio(2, 1), Some(66.7));
        assert_eq!(reproducible_ratio(5, 0), Some(100.0));
    }

    #[test]
    fn report_outcome_uses_snake_case_on_the_wire() {
        assert_eq!(
            serde_json::to_string(&ReportOutcome::BitIdentical).unwrap(),
            "\"bit_identical\""
        );
        assert_eq!(
            serde_json::to_string(&ReportOutcome::BuildFailed).unwrap(),
            "\"build_failed\""
        );
    }
}
