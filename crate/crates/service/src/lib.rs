//! Coordinator service and rebuild worker.
//!
//! This crate turns the [`verifier_core`] building blocks into a running
//! system:
//!
//! * [`coordinator`] — the single-writer state machine behind the HTTP API:
//!   it owns the scheduling queue, records build results, signs
//!   attestations for bit-identical rebuilds, and journals every state
//!   change so a crash replays to exactly the same state.
//! * [`api`] — the axum HTTP surface (dashboard, package and build
//!   queries, evidence downloads, work claim/report, admin requeue).
//! * [`worker`] — the rebuild loop: claim a task, fetch recipe and
//!   reference artifact, rebuild in an independent environment, compare
//!   bit-for-bit, classify any difference, report back.
//! * [`remote`] — release-index and reference fetching over HTTP or the
//!   local filesystem.
//! * [`wire`] — the JSON request/response types shared by all of the
//!   above.

pub mod api;
pub mod coordinator;
pub mod remote;
pub mod wire;
pub mod worker;
