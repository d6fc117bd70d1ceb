//! Acceptance suite: every operational requirement of the verifier,
//! checked end to end with explicit time budgets.
//!
//! 1. The recipe/manifest lint catches version self-mutation and
//!    dependency drift on a realistic case, and passes the corrected one.
//! 2. The scheduler agrees with a brute-force model over ten thousand
//!    random operation sequences.
//! 3. Rebuilds are bit-identical exactly when faults are absent or pinned.
//! 4. The difference classifier agrees with independent gzip/tar oracles.
//! 5. The full pipeline — sync, HTTP claim, rebuild, classify, attest —
//!    produces the expected dashboard, reports, and verifiable signatures.
//! 6. Diverse double-compiling certifies a clean compiler and exposes a
//!    self-propagating trojan that is behaviorally invisible otherwise.
//! 7. Attestations round-trip and every single-byte mutation is rejected.
//! 8. The coordinator recovers from a torn journal without double counting.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use verifier_core::archive::{write_gzip, write_tar, TarMember, GZIP_MTIME_RANGE};
use verifier_core::attest::{
    create_attestation, verify_attestation_text, AttestationStatement, Ed25519Signer, VerifyingKey,
};
use verifier_core::build::{
    dependency_digest, execute_build, BuildEnvironment, BuildOutput, MockBackend,
    DEFAULT_TOOLCHAIN_ID,
};
use verifier_core::buildinfo::{check_consistency, parse_buildinfo, ConsistencyKind};
use verifier_core::clock::{Clock, SimClock, Timestamp};
use verifier_core::ddc::{compile, ddc_check, parse_compiler};
use verifier_core::diff::{compare_artifacts, parse_report_counts, Category};
use verifier_core::digest::Digest;
use verifier_core::index::{
    diff_index, emit_index, FileIndexSource, PackageRelease, SyncDaemon, SyncEvent, SyncEventKind,
};
use verifier_core::queue::{
    BadReason, QueueError, ReportVerdict, RequeuePolicy, Scheduler, VerificationStatus,
};
use verifier_core::recipe::{lint_recipe, parse_recipe, resolve_dependencies, Severity};
use verifier_core::version::Version;

use verifier_service::api::{router, serve, ApiContext};
use verifier_service::coordinator::Coordinator;
use verifier_service::remote::StdRefFetcher;
use verifier_service::wire::{
    DashboardView, ErrorBody, KeyView, PackageListView, ReportOutcome, ReportRequest,
    RequeueRequest, RequeueResponse,
};
use verifier_service::worker::{run_worker_loop, CoordinatorClient, WorkerConfig};

// ---------------------------------------------------------------------------
// Shared helpers

/// Build one artifact with the mock backend under an explicit environment.
fn build_artifact(
    recipe_text: &str,
    build_path: &str,
    clock_secs: i64,
    env_pairs: &[(&str, &str)],
) -> Vec<u8> {
    let recipe = parse_recipe(recipe_text).expect("recipe parses");
    let clock: Arc<dyn Clock> = Arc::new(SimClock::new(clock_secs));
    let mut deps = BTreeMap::new();
    for dep in resolve_dependencies(&recipe, &recipe.version) {
        let version = match &dep.constraint {
            Some(c) => Version::parse(c).expect("constraint resolves"),
            None => Version::parse("1.0-1").unwrap(),
        };
        deps.insert(dep.name.clone(), dependency_digest(&dep.name, &version));
    }
    let env_vars: BTreeMap<String, String> = env_pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let env = BuildEnvironment::new(env_vars, build_path, DEFAULT_TOOLCHAIN_ID, deps, clock)
        .expect("environment is valid");
    match execute_build(&recipe, &env, &MockBackend).expect("backend runs") {
        BuildOutput::Completed { artifact, .. } => artifact,
        BuildOutput::Failed { log } => panic!("build failed:\n{log}"),
    }
}

fn category_counts(report: &str) -> BTreeMap<Category, u64> {
    parse_report_counts(report).expect("report carries a counts line")
}

// ===========================================================================
// Criterion 1: recipe and manifest lint

const DEFECTIVE_RECIPE: &str = "\
name = certbot
version = 2.7.4-1
depends = python-acme=${pkgver}, python-cryptography
makedepends = python-build
dynamic_version = true

[phase dynamic_version]
git describe --tags
[end]

[phase build]
python -m build
[end]

[phase package]
install -D certbot
[end]
";

const DEFECTIVE_MANIFEST: &str = "\
format_version = 1
pkgname = certbot
pkgver = 2.7.4-1
pkgarch = any
builddate = 1699300000
builddir = /build/certbot-2.7.4-1
buildenv = LANG=C
installed = python-acme-2.7.3-1-any
installed = python-cryptography-41.0.5-1-any
installed = python-build-1.0.3-1-any
";

const CORRECTED_RECIPE: &str = "\
name = certbot
version = 2.7.4-1
depends = python-acme=2.7.4-1, python-cryptography
makedepends = python-build

[phase build]
python -m build
[end]

[phase package]
install -D certbot
[end]
";

const CORRECTED_MANIFEST: &str = "\
format_version = 1
pkgname = certbot
pkgver = 2.7.4-1
pkgarch = any
builddate = 1699300000
builddir = /build/certbot-2.7.4-1
buildenv = LANG=C
installed = python-acme-2.7.4-1-any
installed = python-cryptography-41.0.5-1-any
installed = python-build-1.0.3-1-any
";

#[test]
fn criterion_1_lint_catches_version_self_mutation_and_dependency_drift() {
    let t0 = Instant::now();

    // Defective pair: the version is recomputed at build time while a
    // dependency pins ${pkgver}, and the recorded build installed the
    // dependency one release behind the recipe.
    let recipe = parse_recipe(DEFECTIVE_RECIPE).unwrap();
    let lint_findings = lint_recipe(&recipe);
    assert_eq!(
        lint_findings.len(),
        1,
        "exactly one lint finding expected: {lint_findings:?}"
    );
    let f = &lint_findings[0];
    assert_eq!(f.rule_id, "SELF_MUTATING_VERSION");
    assert_eq!(f.severity, Severity::Error);
    assert_eq!(f.location, "depends.python-acme");

    let manifest = parse_buildinfo(DEFECTIVE_MANIFEST).unwrap();
    let findings = check_consistency(&recipe, &recipe.version, &manifest).unwrap();
    assert_eq!(
        findings.len(),
        1,
        "exactly one consistency finding expected: {findings:?}"
    );
    let f = &findings[0];
    assert_eq!(f.kind, ConsistencyKind::DepVersionMismatch);
    assert_eq!(f.kind.as_str(), "DEP_VERSION_MISMATCH");
    assert_eq!(f.dependency, "python-acme");
    assert_eq!(f.required, Some(Version::parse("2.7.4-1").unwrap()));
    assert_eq!(f.recorded, Some(Version::parse("2.7.3-1").unwrap()));

    // Corrected pair: static version, concrete pin, matching install set.
    let recipe = parse_recipe(CORRECTED_RECIPE).unwrap();
    assert_eq!(lint_recipe(&recipe), vec![]);
    let manifest = parse_buildinfo(CORRECTED_MANIFEST).unwrap();
    assert_eq!(
        check_consistency(&recipe, &recipe.version, &manifest).unwrap(),
        vec![]
    );

    assert!(
        t0.elapsed() < Duration::from_secs(1),
        "lint checks must finish within 1s, took {:?}",
        t0.elapsed()
    );
}

// ===========================================================================
// Criterion 2: scheduler vs a brute-force model

/// Deliberately naive mirror of the scheduling rules: flat vectors and
/// full scans, no shared code with the real scheduler.
mod model {
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Status {
        Unknown,
        Good,
        BadBuild,
        BadDiffers,
    }

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Entry {
        pub name: String,
        pub arch: String,
        pub version: String,
        /// Stands in for the rest of the release tuple (digest and refs).
        pub fingerprint: u64,
        pub status: Status,
        pub attempts: u32,
        pub next_eligible: i64, // i64::MAX = never
        pub last_build: Option<u64>,
    }

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Claimed {
        pub token: u64,
        pub name: String,
        pub arch: String,
        pub version: String,
        pub deadline: i64,
    }

    #[derive(Debug, PartialEq, Eq)]
    pub enum ReportError {
        Unknown,
        Expired,
    }

    pub struct Model {
        pub base_delay: i64,
        pub claim_ttl: i64,
        pub entries: Vec<Entry>,
        pub claims: Vec<Claimed>,
        pub next_token: u64,
    }

    impl Model {
        pub fn new(base_delay: i64, claim_ttl: i64) -> Model {
            Model {
                base_delay,
                claim_ttl,
                entries: Vec::new(),
                claims: Vec::new(),
                next_token: 1,
            }
        }

        fn find(&self, name: &str, arch: &str) -> Option<usize> {
            self.entries
                .iter()
                .position(|e| e.name == name && e.arch == arch)
        }

        pub fn sync_upsert(
            &mut self,
            name: &str,
            arch: &str,
            version: &str,
            fingerprint: u64,
            now: i64,
        ) {
            if let Some(i) = self.find(name, arch) {
                if self.entries[i].version == version && self.entries[i].fingerprint == fingerprint
                {
                    return; // re-announcement of what we already track
                }
                if self.entries[i].version != version {
                    // Version moved: outstanding claims are stale.
                    self.claims.retain(|c| !(c.name == name && c.arch == arch));
                }
                self.entries[i] = Entry {
                    name: name.to_string(),
                    arch: arch.to_string(),
                    version: version.to_string(),
                    fingerprint,
                    status: Status::Unknown,
                    attempts: 0,
                    next_eligible: now,
                    last_build: None,
                };
            } else {
                self.entries.push(Entry {
                    name: name.to_string(),
                    arch: arch.to_string(),
                    version: version.to_string(),
                    fingerprint,
                    status: Status::Unknown,
                    attempts: 0,
                    next_eligible: now,
                    last_build: None,
                });
            }
        }

        pub fn sync_remove(&mut self, name: &str, arch: &str) {
            let Some(i) = self.find(name, arch) else {
                return;
            };
            self.entries.remove(i);
            self.claims.retain(|c| !(c.name == name && c.arch == arch));
        }

        fn shielded(&self, name: &str, arch: &str, now: i64) -> bool {
            self.claims
                .iter()
                .any(|c| c.deadline > now && c.name == name && c.arch == arch)
        }

        /// The most urgent eligible entry: UNKWN before BAD, then earlier
        /// eligibility, then (name, arch).
        pub fn claim(&mut self, now: i64) -> Option<(u64, String, String)> {
            let rank = |s: Status| match s {
                Status::Unknown => 0u8,
                _ => 1,
            };
            let mut best: Option<usize> = None;
            for (i, e) in self.entries.iter().enumerate() {
                if e.status == Status::Good
                    || e.next_eligible > now
                    || self.shielded(&e.name, &e.arch, now)
                {
                    continue;
                }
                best = match best {
                    None => Some(i),
                    Some(j) => {
                        let b = &self.entries[j];
                        let kb = (rank(b.status), b.next_eligible, b.name.clone(), b.arch.clone());
                        let ke = (rank(e.status), e.next_eligible, e.name.clone(), e.arch.clone());
                        if ke < kb {
                            Some(i)
                        } else {
                            Some(j)
                        }
                    }
                };
            }
            let e = &self.entries[best?];
            let token = self.next_token;
            self.next_token += 1;
            self.claims.push(Claimed {
                token,
                name: e.name.clone(),
                arch: e.arch.clone(),
                version: e.version.clone(),
                deadline: now + self.claim_ttl,
            });
            Some((token, e.name.clone(), e.arch.clone()))
        }

        pub fn report(
            &mut self,
            token: u64,
            verdict: u8, // 0 identical, 1 differs, 2 failed
            build_id: u64,
            now: i64,
        ) -> Result<(), ReportError> {
            let ci = self
                .claims
                .iter()
                .position(|c| c.token == token)
                .ok_or(ReportError::Unknown)?;
            let claim = self.claims[ci].clone();
            if claim.deadline <= now {
                self.claims.remove(ci);
                return Err(ReportError::Expired);
            }
            let Some(ei) = self.find(&claim.name, &claim.arch) else {
                self.claims.remove(ci);
                return Err(ReportError::Unknown);
            };
            if self.entries[ei].version != claim.version {
                self.claims.remove(ci);
                return Err(ReportError::Expired);
            }
            let e = &mut self.entries[ei];
            e.attempts += 1;
            e.last_build = Some(build_id);
            match verdict {
                0 => {
                    e.status = Status::Good;
                    e.next_eligible = i64::MAX;
                }
                1 => {
                    e.status = Status::BadDiffers;
                    e.next_eligible = now + i64::from(e.attempts) * self.base_delay;
                }
                _ => {
                    e.status = Status::BadBuild;
                    e.next_eligible = now + i64::from(e.attempts) * self.base_delay;
                }
            }
            self.claims.remove(ci);
            Ok(())
        }

        pub fn requeue(&mut self, name: &str, now: i64) -> bool {
            let mut found = false;
            for e in &mut self.entries {
                if e.name != name {
                    continue;
                }
                found = true;
                if e.status == Status::Good {
                    e.status = Status::Unknown;
                    e.attempts = 0;
                }
                e.next_eligible = now;
            }
            found
        }
    }
}

type EntryKey = (String, String);
type EntryState = (String, u64, String, u32, i64, Option<u64>);

fn real_state(s: &Scheduler, fingerprints: &BTreeMap<EntryKey, u64>) -> BTreeMap<EntryKey, EntryState> {
    s.entries()
        .map(|e| {
            let key = (e.release.name.clone(), e.release.arch.clone());
            let status = match e.status {
                VerificationStatus::Unknown => "UNKWN",
                VerificationStatus::Good => "GOOD",
                VerificationStatus::Bad(BadReason::BuildFailed) => "BAD/build",
                VerificationStatus::Bad(BadReason::NotReproducible) => "BAD/differs",
            };
            let fp = fingerprints.get(&key).copied().unwrap_or(u64::MAX);
            (
                key,
                (
                    e.release.version.to_string(),
                    fp,
                    status.to_string(),
                    e.attempts,
                    e.next_eligible.0,
                    e.last_build_id,
                ),
            )
        })
        .collect()
}

fn model_state(m: &model::Model) -> BTreeMap<EntryKey, EntryState> {
    m.entries
        .iter()
        .map(|e| {
            let status = match e.status {
                model::Status::Unknown => "UNKWN",
                model::Status::Good => "GOOD",
                model::Status::BadBuild => "BAD/build",
                model::Status::BadDiffers => "BAD/differs",
            };
            (
                (e.name.clone(), e.arch.clone()),
                (
                    e.version.clone(),
                    e.fingerprint,
                    status.to_string(),
                    e.attempts,
                    e.next_eligible,
                    e.last_build,
                ),
            )
        })
        .collect()
}

fn release_for(name: &str, arch: &str, version: &str, fingerprint: u64) -> PackageRelease {
    PackageRelease {
        name: name.to_string(),
        version: Version::parse(version).unwrap(),
        arch: arch.to_string(),
        artifact_digest: Digest::of(format!("{name}/{arch}/{version}/{fingerprint}").as_bytes()),
        recipe_ref: format!("recipes/{name}.recipe"),
        artifact_ref: format!("artifacts/{name}.pkg"),
    }
}

#[test]
fn criterion_2_scheduler_matches_a_brute_force_model_over_random_sequences() {
    let t0 = Instant::now();
    const BASE_DELAY: i64 = 100;
    const CLAIM_TTL: i64 = 30;
    let policy = RequeuePolicy {
        base_delay: Duration::from_secs(BASE_DELAY as u64),
        claim_ttl: Duration::from_secs(CLAIM_TTL as u64),
    };

    // --- Focused deterministic checks first ---------------------------

    // Unverified work beats failed work even with later eligibility.
    {
        let mut s = Scheduler::new(policy);
        let (_, rec) = s.enqueue_new(
            &SyncEvent {
                kind: SyncEventKind::Added,
                release: release_for("aged-bad", "x86_64", "1.0-1", 0),
                previous_version: None,
            },
            Timestamp(1_000),
        );
        assert!(rec.is_some());
        let (task, _) = s.claim_work("w", Timestamp(1_000)).unwrap();
        s.report_result(
            task.claim_token,
            ReportVerdict::BuildFailed { build_id: 1 },
            Timestamp(1_000),
        )
        .unwrap();
        // aged-bad eligible again at 1_000 + 1×100 = 1_100.
        s.enqueue_new(
            &SyncEvent {
                kind: SyncEventKind::Added,
                release: release_for("new-unknown", "x86_64", "1.0-1", 0),
                previous_version: None,
            },
            Timestamp(1_150),
        );
        // At t=1_200 both are eligible; the BAD entry has the earlier
        // eligibility instant but UNKWN must win.
        let (task, _) = s.claim_work("w", Timestamp(1_200)).unwrap();
        assert_eq!(task.release.name, "new-unknown");
    }

    // Retry delay grows linearly with completed attempts.
    {
        let mut s = Scheduler::new(policy);
        s.enqueue_new(
            &SyncEvent {
                kind: SyncEventKind::Added,
                release: release_for("flaky", "any", "1.0-1", 0),
                previous_version: None,
            },
            Timestamp(0),
        );
        let mut now = 0i64;
        for attempt in 1..=5u32 {
            let (task, _) = s.claim_work("w", Timestamp(now)).unwrap();
            let (entry, _) = s
                .report_result(
                    task.claim_token,
                    ReportVerdict::Differs { build_id: u64::from(attempt) },
                    Timestamp(now),
                )
                .unwrap();
            assert_eq!(entry.attempts, attempt);
            assert_eq!(
                entry.next_eligible.0,
                now + i64::from(attempt) * BASE_DELAY,
                "retry {attempt} must wait attempts × base"
            );
            now = entry.next_eligible.0;
        }
    }

    // A verified entry is never handed out again, no matter how far the
    // clock advances, until its version changes or an operator requeues.
    {
        let mut s = Scheduler::new(policy);
        s.enqueue_new(
            &SyncEvent {
                kind: SyncEventKind::Added,
                release: release_for("settled", "any", "1.0-1", 0),
                previous_version: None,
            },
            Timestamp(0),
        );
        let (task, _) = s.claim_work("w", Timestamp(0)).unwrap();
        s.report_result(
            task.claim_token,
            ReportVerdict::BitIdentical { build_id: 1 },
            Timestamp(0),
        )
        .unwrap();
        assert!(s.claim_work("w", Timestamp(i64::MAX - 1)).is_none());
        let (updated, _) = s.requeue("settled", Timestamp(10)).unwrap();
        assert_eq!(updated[0].status, VerificationStatus::Unknown);
        assert!(s.claim_work("w", Timestamp(10)).is_some());
    }

    // --- Randomized differential run ----------------------------------

    const SEQUENCES: u64 = 10_000;
    let keys: [(&str, &str); 5] = [
        ("alpha", "x86_64"),
        ("alpha", "aarch64"),
        ("beta", "x86_64"),
        ("gamma", "x86_64"),
        ("delta", "any"),
    ];
    let names = ["alpha", "beta", "gamma", "delta", "missing"];

    // Aggregate coverage counters so the run cannot be vacuous.
    let mut cov_claim_some = 0u64;
    let mut cov_claim_none = 0u64;
    let mut cov_report_ok = 0u64;
    let mut cov_report_unknown = 0u64;
    let mut cov_report_expired = 0u64;
    let mut cov_removed = 0u64;
    let mut cov_requeue_found = 0u64;
    let mut cov_requeue_missing = 0u64;

    for seed in 0..SEQUENCES {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut real = Scheduler::new(policy);
        let mut model = model::Model::new(BASE_DELAY, CLAIM_TTL);
        // Release fingerprints currently announced per key, to build
        // identical releases on both sides.
        let mut fingerprints: BTreeMap<EntryKey, u64> = BTreeMap::new();
        let mut versions: BTreeMap<EntryKey, u32> = BTreeMap::new();
        let mut now: i64 = 1_000_000;
        let mut next_build: u64 = 1;

        let ops = rng.gen_range(8..=28);
        for step in 0..ops {
            match rng.gen_range(0..100u32) {
                // Sync: announce, re-announce, bump, or retire a release.
                0..=29 => {
                    let (name, arch) = keys[rng.gen_range(0..keys.len())];
                    let key = (name.to_string(), arch.to_string());
                    if rng.gen_bool(0.15) {
                        let vn = *versions.entry(key.clone()).or_insert(0);
                        let version = format!("1.{vn}-1");
                        let fp = fingerprints.get(&key).copied().unwrap_or(0);
                        let event = SyncEvent {
                            kind: SyncEventKind::Removed,
                            release: release_for(name, arch, &version, fp),
                            previous_version: None,
                        };
                        real.enqueue_new(&event, Timestamp(now));
                        model.sync_remove(name, arch);
                        cov_removed += 1;
                    } else {
                        if rng.gen_bool(0.4) {
                            *versions.entry(key.clone()).or_insert(0) += 1;
                        }
                        let vn = *versions.entry(key.clone()).or_insert(0);
                        let version = format!("1.{vn}-1");
                        let fp = rng.gen_range(0..2u64);
                        fingerprints.insert(key.clone(), fp);
                        let kind = if rng.gen_bool(0.5) {
                            SyncEventKind::Added
                        } else {
                            SyncEventKind::Updated
                        };
                        let event = SyncEvent {
                            kind,
                            release: release_for(name, arch, &version, fp),
                            previous_version: None,
                        };
                        real.enqueue_new(&event, Timestamp(now));
                        model.sync_upsert(name, arch, &version, fp, now);
                    }
                }
                // Claim for a random worker.
                30..=54 => {
                    let worker = format!("w{}", rng.gen_range(0..3u8));
                    let good_before: BTreeSet<EntryKey> = real
                        .entries()
                        .filter(|e| e.status.is_good())
                        .map(|e| (e.release.name.clone(), e.release.arch.clone()))
                        .collect();
                    let got_real = real.claim_work(&worker, Timestamp(now));
                    let got_model = model.claim(now);
                    match (&got_real, &got_model) {
                        (None, None) => cov_claim_none += 1,
                        (Some((task, _)), Some((token, name, arch))) => {
                            cov_claim_some += 1;
                            assert_eq!(task.claim_token, *token, "seed {seed} step {step}");
                            assert_eq!(&task.release.name, name, "seed {seed} step {step}");
                            assert_eq!(&task.release.arch, arch, "seed {seed} step {step}");
                            assert_eq!(task.deadline.0, now + CLAIM_TTL);
                            assert!(
                                !good_before.contains(&(name.clone(), arch.clone())),
                                "claimed a verified entry (seed {seed} step {step})"
                            );
                        }
                        _ => panic!(
                            "claim diverged (seed {seed} step {step}): real {got_real:?} vs model {got_model:?}"
                        ),
                    }
                }
                // Report under a token that may be live, spent, or bogus.
                55..=84 => {
                    let max_token = model.next_token; // same on both sides
                    let token = rng.gen_range(1..=max_token);
                    let verdict_kind = rng.gen_range(0..3u8);
                    let build_id = next_build;
                    next_build += 1;
                    let verdict = match verdict_kind {
                        0 => ReportVerdict::BitIdentical { build_id },
                        1 => ReportVerdict::Differs { build_id },
                        _ => ReportVerdict::BuildFailed { build_id },
                    };
                    let got_real = real.report_result(token, verdict, Timestamp(now));
                    let got_model = model.report(token, verdict_kind, build_id, now);
                    match (&got_real, &got_model) {
                        (Ok((entry, _)), Ok(())) => {
                            cov_report_ok += 1;
                            if !entry.status.is_good() {
                                assert_eq!(
                                    entry.next_eligible.0,
                                    now + i64::from(entry.attempts) * BASE_DELAY,
                                    "backoff must be attempts × base (seed {seed} step {step})"
                                );
                            }
                        }
                        (Err(QueueError::UnknownToken), Err(model::ReportError::Unknown)) => {
                            cov_report_unknown += 1
                        }
                        (Err(QueueError::ExpiredToken), Err(model::ReportError::Expired)) => {
                            cov_report_expired += 1
                        }
                        _ => panic!(
                            "report diverged (seed {seed} step {step}): real {got_real:?} vs model {got_model:?}"
                        ),
                    }
                }
                // Operator requeue by package name.
                85..=92 => {
                    let name = names[rng.gen_range(0..names.len())];
                    let got_real = real.requeue(name, Timestamp(now));
                    let found_model = model.requeue(name, now);
                    match (&got_real, found_model) {
                        (Ok(_), true) => cov_requeue_found += 1,
                        (Err(QueueError::NotFound(_)), false) => cov_requeue_missing += 1,
                        _ => panic!(
                            "requeue diverged (seed {seed} step {step}): real {got_real:?} vs model found={found_model}"
                        ),
                    }
                }
                // Let time pass (never backwards).
                _ => now += i64::from(rng.gen_range(0..=200u32)),
            }

            assert_eq!(
                real_state(&real, &fingerprints),
                model_state(&model),
                "state diverged (seed {seed} step {step})"
            );
            let counts = real.counts();
            let model_good = model
                .entries
                .iter()
                .filter(|e| e.status == model::Status::Good)
                .count() as u64;
            assert_eq!(counts.good, model_good, "seed {seed} step {step}");
        }
    }

    // The random walk must actually have exercised every interesting path.
    assert!(cov_claim_some > 1_000, "only {cov_claim_some} successful claims");
    assert!(cov_claim_none > 1_000, "only {cov_claim_none} empty claims");
    assert!(cov_report_ok > 1_000, "only {cov_report_ok} applied reports");
    assert!(cov_report_unknown > 1_000, "only {cov_report_unknown} unknown-token reports");
    assert!(cov_report_expired > 100, "only {cov_report_expired} expired reports");
    assert!(cov_removed > 1_000, "only {cov_removed} removals");
    assert!(cov_requeue_found > 1_000, "only {cov_requeue_found} requeues");
    assert!(cov_requeue_missing > 100, "only {cov_requeue_missing} missing requeues");

    assert!(
        t0.elapsed() < Duration::from_secs(30),
        "model comparison must finish within 30s, took {:?}",
        t0.elapsed()
    );
}

// ===========================================================================
// Criterion 3: determinism exactly when faults are absent or pinned

fn fault_recipe(extra_build_lines: &str) -> String {
    format!(
        "name = widget\nversion = 1.2-1\ndepends = libfoo=2.0-1, libbar\n\n\
         [phase build]\n{extra_build_lines}\n[end]\n\n[phase package]\ninstall widget\n[end]\n"
    )
}

fn distinct_digests_over_randomized_environments(
    recipe_text: &str,
    env_pairs: &[(&str, &str)],
    runs: usize,
    seed: u64,
) -> usize {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut digests = BTreeSet::new();
    for i in 0..runs {
        let path = format!("/build/run-{}/{}", rng.gen_range(0..1_000_000u32), i);
        let clock = 1_700_000_000 + i as i64 * 3_600 + i64::from(rng.gen_range(0..600u32));
        let noise = format!("noise-{}", rng.gen_range(0..1_000_000u32));
        let mut pairs: Vec<(&str, &str)> = vec![("BUILD_NOISE", noise.as_str())];
        pairs.extend_from_slice(env_pairs);
        let artifact = build_artifact(recipe_text, &path, clock, &pairs);
        digests.insert(Digest::of(&artifact));
    }
    digests.len()
}

#[test]
fn criterion_3_rebuilds_are_deterministic_exactly_when_faults_are_absent_or_pinned() {
    let t0 = Instant::now();
    const RUNS: usize = 10;

    // A faultless recipe builds to one digest regardless of path, clock,
    // or stray environment variables.
    let clean = fault_recipe("compile widget");
    assert_eq!(
        distinct_digests_over_randomized_environments(&clean, &[], RUNS, 31),
        1,
        "faultless builds must be bit-identical"
    );

    // Every single injected defect breaks identity across environments.
    for fault in [
        "WALL_CLOCK_TIMESTAMP",
        "BUILD_PATH_EMBED",
        "RANDOM_BYTES",
        "ARCHIVE_ORDER",
    ] {
        let text = fault_recipe(&format!("fault {fault}"));
        let distinct =
            distinct_digests_over_randomized_environments(&text, &[], RUNS, 32);
        assert!(
            distinct >= 2,
            "fault {fault} must produce at least two distinct artifacts, got {distinct}"
        );
    }

    // Pinning the build timestamp neutralizes exactly the wall-clock leak.
    let stamped = fault_recipe("fault WALL_CLOCK_TIMESTAMP");
    assert_eq!(
        distinct_digests_over_randomized_environments(
            &stamped,
            &[("SOURCE_DATE_EPOCH", "1700000000")],
            RUNS,
            33
        ),
        1,
        "a pinned timestamp must restore bit-identity"
    );
    // ... but does not mask an unrelated defect.
    let still_random = fault_recipe("fault RANDOM_BYTES");
    assert!(
        distinct_digests_over_randomized_environments(
            &still_random,
            &[("SOURCE_DATE_EPOCH", "1700000000")],
            RUNS,
            34
        ) >= 2
    );

    assert!(
        t0.elapsed() < Duration::from_secs(10),
        "determinism harness must finish within 10s, took {:?}",
        t0.elapsed()
    );
}

// ===========================================================================
// Criterion 4: classifier vs independent gzip/tar oracles

#[test]
fn criterion_4_classifier_agrees_with_independent_gzip_and_tar_oracles() {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(41);

    // (a) One hundred pairs of gzip streams produced by an independent
    // implementation (flate2), identical except for the header MTIME.
    for round in 0..100 {
        let payload: Vec<u8> = (0..rng.gen_range(100..4000))
            .map(|_| rng.gen::<u8>())
            .collect();
        let mtime_a: u32 = rng.gen_range(1..u32::MAX);
        let mtime_b: u32 = loop {
            let m = rng.gen_range(1..u32::MAX);
            if m != mtime_a {
                break m;
            }
        };
        let gz = |mtime: u32| -> Vec<u8> {
            use std::io::Write;
            let enc = flate2::GzBuilder::new().mtime(mtime).write(
                Vec::new(),
                flate2::Compression::new(6),
            );
            let mut enc = enc;
            enc.write_all(&payload).unwrap();
            enc.finish().unwrap()
        };
        let a = gz(mtime_a);
        let b = gz(mtime_b);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(
            findings.len(),
            1,
            "round {round}: exactly one finding expected, got {findings:?}"
        );
        let f = &findings[0];
        assert_eq!(f.category, Category::Timestamp, "round {round}");
        assert_eq!(f.detail, "gzip-header-mtime", "round {round}");
        assert_eq!(
            f.evidence.a_value.as_deref(),
            Some(mtime_a.to_string().as_str()),
            "round {round}: decoded a-side mtime must match what flate2 wrote"
        );
        assert_eq!(
            f.evidence.b_value.as_deref(),
            Some(mtime_b.to_string().as_str()),
            "round {round}"
        );
        assert_eq!(f.evidence.a_range, Some(GZIP_MTIME_RANGE), "round {round}");
        assert_eq!(f.evidence.b_range, Some(GZIP_MTIME_RANGE), "round {round}");
    }

    // (b) Permuting tar members flags archive-order randomness and
    // nothing else.
    let members: Vec<TarMember> = (0..5)
        .map(|i| TarMember::regular(&format!("usr/lib/pkg/file-{i}"), format!("content {i}")))
        .collect();
    let mut permuted = members.clone();
    while permuted
        .iter()
        .map(|m| &m.name)
        .eq(members.iter().map(|m| &m.name))
    {
        permuted.shuffle(&mut rng);
    }
    let a = write_gzip(&write_tar(&members).unwrap(), 7);
    let b = write_gzip(&write_tar(&permuted).unwrap(), 7);
    let findings = compare_artifacts(&a, &b);
    assert_eq!(findings.len(), 1, "{findings:?}");
    assert_eq!(findings[0].category, Category::Randomness);
    assert_eq!(findings[0].detail, "tar-member-order");

    // (c) Embedded build directories are recognized as path differences,
    // both as raw artifacts and nested inside containers.
    let raw_a = b"object v1\n/upstream/build/widget-1.2-1/src/widget.c\nend\n".to_vec();
    let raw_b = b"object v1\n/rebuild/worker-7/widget-1.2-1/src/widget.c\nend\n".to_vec();
    let findings = compare_artifacts(&raw_a, &raw_b);
    assert_eq!(findings.len(), 1, "{findings:?}");
    assert_eq!(findings[0].category, Category::Path);
    assert_eq!(findings[0].detail, "embedded-build-path");

    let nest = |payload: &[u8]| -> Vec<u8> {
        let tar = write_tar(&[
            TarMember::regular("usr/share/doc/README", "same everywhere"),
            TarMember::regular("usr/lib/pkg/source-path", payload.to_vec()),
        ])
        .unwrap();
        write_gzip(&tar, 7)
    };
    let findings = compare_artifacts(&nest(&raw_a), &nest(&raw_b));
    assert_eq!(findings.len(), 1, "{findings:?}");
    assert_eq!(findings[0].category, Category::Path);
    assert_eq!(findings[0].detail, "embedded-build-path");
    assert!(
        findings[0].location.contains("source-path"),
        "finding must point at the differing member: {}",
        findings[0].location
    );
    let counts = category_counts(&verifier_core::diff::render_report(&findings));
    assert_eq!(counts.get(&Category::Path), Some(&1));
    assert_eq!(counts.get(&Category::Timestamp), Some(&0));

    // (d) Self-comparison is empty for a thousand arbitrary artifacts:
    // raw bytes, gzip streams, tar archives, and gzip-wrapped tars.
    for round in 0..1000 {
        let len = rng.gen_range(0..2048);
        let raw: Vec<u8> = (0..len).map(|_| rng.gen::<u8>()).collect();
        let artifact = match round % 4 {
            0 => raw,
            1 => write_gzip(&raw, rng.gen()),
            2 | 3 => {
                let members: Vec<TarMember> = (0..rng.gen_range(1..4))
                    .map(|i| TarMember {
                        name: format!("data/file-{i}"),
                        mode: rng.gen_range(0..0o7777),
                        mtime: i64::from(rng.gen::<u32>()),
                        content: (0..rng.gen_range(0..512)).map(|_| rng.gen::<u8>()).collect(),
                    })
                    .collect();
                let tar = write_tar(&members).unwrap();
                if round % 4 == 2 {
                    tar
                } else {
                    write_gzip(&tar, rng.gen())
                }
            }
            _ => unreachable!(),
        };
        assert_eq!(
            compare_artifacts(&artifact, &artifact),
            vec![],
            "round {round}: an artifact must never differ from itself"
        );
    }

    assert!(
        t0.elapsed() < Duration::from_secs(30),
        "classifier oracle comparison must finish within 30s, took {:?}",
        t0.elapsed()
    );
}

// ===========================================================================
// Criterion 5: the full pipeline over real HTTP

struct PlannedPackage {
    name: String,
    recipe: String,
    expected: Option<Category>, // None = reproducible
}

fn plan_packages() -> Vec<PlannedPackage> {
    let mut plan = Vec::new();
    for i in 0..8 {
        let name = format!("clean-{i}");
        let deps = if i % 2 == 0 {
            "depends = libssl=3.1-2, zlib\n"
        } else {
            ""
        };
        let recipe = format!(
            "name = {name}\nversion = 1.0-1\n{deps}\n[phase build]\ncompile {name}\n[end]\n\n\
             [phase package]\ninstall {name}\n[end]\n"
        );
        plan.push(PlannedPackage {
            name,
            recipe,
            expected: None,
        });
    }
    for i in 0..6 {
        let name = format!("stamp-{i}");
        let recipe = format!(
            "name = {name}\nversion = 1.0-1\n\n[phase build]\nfault WALL_CLOCK_TIMESTAMP\n[end]\n\n\
             [phase package]\ninstall {name}\n[end]\n"
        );
        plan.push(PlannedPackage {
            name,
            recipe,
            expected: Some(Category::Timestamp),
        });
    }
    for i in 0..3 {
        let name = format!("noise-{i}");
        let recipe = format!(
            "name = {name}\nversion = 1.0-1\n\n[phase build]\nfault RANDOM_BYTES\nfault ARCHIVE_ORDER\n[end]\n\n\
             [phase package]\ninstall {name}\n[end]\n"
        );
        plan.push(PlannedPackage {
            name,
            recipe,
            expected: Some(Category::Randomness),
        });
    }
    for i in 0..3 {
        let name = format!("place-{i}");
        let recipe = format!(
            "name = {name}\nversion = 1.0-1\n\n[phase build]\nfault BUILD_PATH_EMBED\n[end]\n\n\
             [phase package]\ninstall {name}\n[end]\n"
        );
        plan.push(PlannedPackage {
            name,
            recipe,
            expected: Some(Category::Path),
        });
    }
    plan
}

#[test]
fn criterion_5_full_pipeline_over_http_rebuilds_classifies_and_attests() {
    let t0 = Instant::now();
    let plan = plan_packages();
    assert_eq!(plan.len(), 20);

    // Upstream: recipes, reference artifacts (built at an earlier wall
    // clock under an upstream-only build root), and the release index.
    let upstream = tempfile::tempdir().unwrap();
    let mut releases = Vec::new();
    for p in &plan {
        let build_path = format!("/upstream/build/{}-1.0-1", p.name);
        let artifact = build_artifact(&p.recipe, &build_path, 1_600_000_000, &[]);
        std::fs::write(upstream.path().join(format!("{}.recipe", p.name)), &p.recipe).unwrap();
        std::fs::write(upstream.path().join(format!("{}.pkg", p.name)), &artifact).unwrap();
        releases.push(PackageRelease {
            name: p.name.clone(),
            version: Version::parse("1.0-1").unwrap(),
            arch: "any".to_string(),
            artifact_digest: Digest::of(&artifact),
            recipe_ref: format!("{}.recipe", p.name),
            artifact_ref: format!("{}.pkg", p.name),
        });
    }
    let index_path = upstream.path().join("releases.index");
    std::fs::write(&index_path, emit_index(&releases)).unwrap();

    // Coordinator with a journal, a signing key, and the synced index.
    let state = tempfile::tempdir().unwrap();
    let clock = SimClock::new(1_700_000_000);
    let signer = Ed25519Signer::generate();
    let coordinator = Arc::new(
        Coordinator::open(
            state.path(),
            "acceptance.rebuilder",
            RequeuePolicy::default(),
            signer,
            Arc::new(clock.clone()),
        )
        .unwrap(),
    );
    let mut sync = SyncDaemon::new(FileIndexSource::new(&index_path), None).unwrap();
    let tick = sync.tick().unwrap();
    assert_eq!(tick.fetch_error, None);
    assert_eq!(coordinator.sync_events(&tick.events).unwrap(), 20);

    // Real HTTP server on an ephemeral port.
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(ApiContext {
        coordinator: coordinator.clone(),
        admin_token: Some("admin-secret".to_string()),
        worker_token: Some("worker-secret".to_string()),
    });
    runtime.spawn(serve(app, listener));

    // Two rebuild workers, each under its own build root, draining the
    // queue over the wire.
    let stop = Arc::new(AtomicBool::new(false));
    let mut handles = Vec::new();
    for w in 1..=2 {
        let base = base.clone();
        let refs_root = upstream.path().to_path_buf();
        let stop = stop.clone();
        let clock = clock.clone();
        handles.push(std::thread::spawn(move || {
            let client = CoordinatorClient::new(&base, Some("worker-secret".to_string()));
            let cfg = WorkerConfig::new(format!("w{w}"), format!("/rebuild/w{w}"));
            let fetcher = StdRefFetcher::new(Some(refs_root));
            let clock: Arc<dyn Clock> = Arc::new(clock);
            run_worker_loop(
                &client,
                &cfg,
                &MockBackend,
                &fetcher,
                &clock,
                Duration::from_millis(50),
                &stop,
                Some(5),
            )
        }));
    }
    let completed: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(completed, 20, "both workers together must drain the queue");

    let http = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(10))
        .build()
        .unwrap();

    // The worker protocol is closed to unauthenticated callers.
    let resp = http
        .post(format!("{base}/api/v0/work/claim"))
        .json(&serde_json::json!({"worker_id": "intruder"}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let resp = http
        .post(format!("{base}/api/v0/work/claim"))
        .bearer_auth("wrong-token")
        .json(&serde_json::json!({"worker_id": "intruder"}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);

    // Dashboard: 8 of 20 reproducible → 40.0%.
    let dash: DashboardView = http
        .get(format!("{base}/api/v0/dashboard"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(dash.rebuilder_id, "acceptance.rebuilder");
    assert_eq!(
        (dash.total, dash.good, dash.bad, dash.unknown),
        (20, 8, 12, 0)
    );
    assert_eq!(dash.reproducible_ratio, Some(40.0));

    let expected: BTreeMap<String, Option<Category>> = plan
        .iter()
        .map(|p| (p.name.clone(), p.expected))
        .collect();

    // Every irreproducible package carries a difference report whose
    // planted category is the only one present.
    let bad: PackageListView = http
        .get(format!("{base}/api/v0/pkgs?status=bad&limit=100"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(bad.total_matched, 12);
    for pkg in &bad.packages {
        assert_eq!(pkg.bad_reason.as_deref(), Some("NOT_REPRODUCIBLE"));
        let build_id = pkg.last_build_id.expect("bad package has a build");
        let diff = http
            .get(format!("{base}/api/v0/builds/{build_id}/diff"))
            .send()
            .unwrap()
            .error_for_status()
            .unwrap()
            .text()
            .unwrap();
        let counts = category_counts(&diff);
        let planted = expected[&pkg.name].expect("bad package was planted");
        for cat in Category::ALL {
            if cat == planted {
                assert!(
                    counts[&cat] >= 1,
                    "{}: planted {planted:?} absent from report:\n{diff}",
                    pkg.name
                );
            } else {
                assert_eq!(
                    counts[&cat], 0,
                    "{}: unexpected {cat:?} finding in report:\n{diff}",
                    pkg.name
                );
            }
        }
        // A failed comparison has a diff and a log but never a signature.
        let att = http
            .get(format!("{base}/api/v0/builds/{build_id}/attestation"))
            .send()
            .unwrap();
        assert_eq!(att.status().as_u16(), 404);
    }

    // Every reproducible package carries an attestation that verifies
    // against the published key and binds the right release.
    let key: KeyView = http
        .get(format!("{base}/api/v0/key"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let raw: [u8; 32] = hex::decode(&key.public_key).unwrap().try_into().unwrap();
    let vk = VerifyingKey::from_bytes(&raw).unwrap();

    let digests: BTreeMap<String, Digest> = releases
        .iter()
        .map(|r| (r.name.clone(), r.artifact_digest))
        .collect();
    let good: PackageListView = http
        .get(format!("{base}/api/v0/pkgs?status=good&limit=100"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(good.total_matched, 8);
    for pkg in &good.packages {
        assert!(expected[&pkg.name].is_none(), "{} was planted as faulty", pkg.name);
        let build_id = pkg.last_build_id.expect("good package has a build");
        let text = http
            .get(format!("{base}/api/v0/builds/{build_id}/attestation"))
            .send()
            .unwrap()
            .error_for_status()
            .unwrap()
            .text()
            .unwrap();
        let stmt = verify_attestation_text(&text, &vk)
            .unwrap_or_else(|e| panic!("{}: attestation rejected: {e}", pkg.name));
        assert_eq!(stmt.rebuilder_id, "acceptance.rebuilder");
        assert_eq!(stmt.name, pkg.name);
        assert_eq!(stmt.version.to_string(), "1.0-1");
        assert_eq!(stmt.reference_digest, digests[&pkg.name]);
        assert_eq!(stmt.rebuilt_digest, digests[&pkg.name]);
        assert_eq!(stmt.timestamp, Timestamp(1_700_000_000));
        // A verified rebuild has no difference report.
        let diff = http
            .get(format!("{base}/api/v0/builds/{build_id}/diff"))
            .send()
            .unwrap();
        assert_eq!(diff.status().as_u16(), 404);
        // ... but its full build log is preserved.
        let log = http
            .get(format!("{base}/api/v0/builds/{build_id}/log"))
            .send()
            .unwrap()
            .error_for_status()
            .unwrap()
            .text()
            .unwrap();
        assert!(log.contains("bit-identical"), "{}", pkg.name);
    }

    // Administration: requeue needs the admin token, and a requeued
    // verified package returns to the unverified pool.
    let resp = http
        .post(format!("{base}/api/v0/queue/requeue"))
        .json(&RequeueRequest {
            name: "clean-0".to_string(),
        })
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let resp: RequeueResponse = http
        .post(format!("{base}/api/v0/queue/requeue"))
        .bearer_auth("admin-secret")
        .json(&RequeueRequest {
            name: "clean-0".to_string(),
        })
        .send()
        .unwrap()
        .error_for_status()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(resp.requeued, 1);
    let err: ErrorBody = http
        .post(format!("{base}/api/v0/queue/requeue"))
        .bearer_auth("admin-secret")
        .json(&RequeueRequest {
            name: "no-such-package".to_string(),
        })
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert!(err.error.contains("no-such-package"), "{}", err.error);
    let dash: DashboardView = http
        .get(format!("{base}/api/v0/dashboard"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!((dash.good, dash.unknown), (7, 1));

    assert!(
        t0.elapsed() < Duration::from_secs(60),
        "pipeline run must finish within 60s, took {:?}",
        t0.elapsed()
    );
}

// ===========================================================================
// Criterion 6: diverse double-compiling

fn ddc_fixture(name: &str) -> Vec<u8> {
    let path = format!(
        "{}/../core/fixtures/ddc/{name}",
        env!("CARGO_MANIFEST_DIR")
    );
    std::fs::read(&path).unwrap_or_else(|e| panic!("reading fixture {path}: {e}"))
}

#[test]
fn criterion_6_double_compiling_certifies_clean_and_exposes_trojaned_compilers() {
    let t0 = Instant::now();

    let clean = ddc_fixture("clean-compiler.rwc");
    let trojaned = ddc_fixture("trojaned-compiler.rwc");
    let trusted = ddc_fixture("trusted-native.rwc");
    let source = String::from_utf8(ddc_fixture("compiler-source.rws")).unwrap();

    // The honest artifact is certified.
    let result = ddc_check(&clean, &source, &trusted).unwrap();
    assert!(result.pass, "transcript:\n{}", result.transcript);
    assert_eq!(result.stage2_digest, result.under_test_digest);
    assert!(result.transcript.contains("PASS"));

    // The trojaned artifact compiles the same published source yet is
    // exposed: the detour through the trusted compiler sheds the trojan.
    let result = ddc_check(&trojaned, &source, &trusted).unwrap();
    assert!(!result.pass, "transcript:\n{}", result.transcript);
    assert_ne!(result.stage2_digest, result.under_test_digest);
    assert!(result.transcript.contains("FAIL"));

    // And the trojan is behaviorally invisible on benign inputs: both
    // compilers translate ordinary programs identically, matching the
    // independent trusted implementation bit for bit.
    let clean_compiler = parse_compiler(&clean).unwrap();
    let trojaned_compiler = parse_compiler(&trojaned).unwrap();
    let trusted_compiler = parse_compiler(&trusted).unwrap();
    let benign_corpus = [
        "greet %1 -> hello %1\n",
        "# strip trailing marker\n%1 [done] -> %1\n\n",
        "acid -> base\nbase -> salt\n%1 -> %1\n",
        "# empty line dropper\n\n# just a comment\nx %1 y -> y %1 x\n",
    ];
    for (i, program) in benign_corpus.iter().enumerate() {
        let via_clean = compile(&clean_compiler, program).unwrap();
        let via_trojaned = compile(&trojaned_compiler, program).unwrap();
        let via_trusted = compile(&trusted_compiler, program).unwrap();
        assert_eq!(
            via_clean, via_trojaned,
            "program {i}: trojan must be invisible on benign input"
        );
        assert_eq!(
            via_clean, via_trusted,
            "program {i}: table compiler must match the independent implementation"
        );
    }

    // The self-recognition marker is precisely what separates the two
    // artifacts; without it they would be byte-identical.
    assert_ne!(Digest::of(&clean), Digest::of(&trojaned));

    assert!(
        t0.elapsed() < Duration::from_secs(5),
        "double-compiling checks must finish within 5s, took {:?}",
        t0.elapsed()
    );
}

// ===========================================================================
// Criterion 7: attestation round-trip and mutation rejection

#[test]
fn criterion_7_attestations_round_trip_and_reject_every_mutation() {
    let t0 = Instant::now();

    let signer = Ed25519Signer::generate();
    let artifact_digest = Digest::of(b"the artifact the index distributed");
    let statement = AttestationStatement {
        rebuilder_id: "acceptance.rebuilder".to_string(),
        name: "widget".to_string(),
        version: Version::parse("1.2-1").unwrap(),
        arch: "x86_64".to_string(),
        recipe_digest: Digest::of(b"canonical recipe text"),
        dependency_digests: BTreeMap::from([
            ("libfoo".to_string(), Digest::of(b"libfoo 2.0-1")),
            ("libbar".to_string(), Digest::of(b"libbar 1.0-1")),
        ]),
        reference_digest: artifact_digest,
        rebuilt_digest: artifact_digest,
        timestamp: Timestamp(1_700_000_000),
    };
    let attestation = create_attestation(&signer, statement.clone()).unwrap();
    let text = attestation.to_text();

    // Round trip: the serialized attestation verifies and decodes back
    // to the exact statement.
    let decoded = verify_attestation_text(&text, &signer.verifying_key()).unwrap();
    assert_eq!(decoded, statement);

    // A different key never verifies it.
    let stranger = Ed25519Signer::generate();
    assert!(verify_attestation_text(&text, &stranger.verifying_key()).is_err());

    // One thousand random single-byte mutations anywhere in the document
    // (statement, signature, or key id) are all rejected.
    let original = text.as_bytes();
    let mut rng = StdRng::seed_from_u64(71);
    for round in 0..1000 {
        let pos = rng.gen_range(0..original.len());
        let mut mutated = original.to_vec();
        mutated[pos] = loop {
            let b: u8 = rng.gen();
            if b != original[pos] {
                break b;
            }
        };
        match String::from_utf8(mutated) {
            // Not even text any more: rejected by construction.
            Err(_) => {}
            Ok(s) => {
                assert!(
                    verify_attestation_text(&s, &signer.verifying_key()).is_err(),
                    "round {round}: mutation at byte {pos} was accepted"
                );
            }
        }
    }

    assert!(
        t0.elapsed() < Duration::from_secs(10),
        "attestation checks must finish within 10s, took {:?}",
        t0.elapsed()
    );
}

// ===========================================================================
// Criterion 8: crash recovery from a torn journal

fn simple_report(token: u64, outcome: ReportOutcome, artifact_hex: &str, now: i64) -> ReportRequest {
    ReportRequest {
        claim_token: token,
        outcome,
        log: "build transcript".to_string(),
        rebuilt_digest: match outcome {
            ReportOutcome::BitIdentical => Some(artifact_hex.to_string()),
            ReportOutcome::Differs => Some(Digest::of(b"different bits").to_hex()),
            ReportOutcome::BuildFailed => None,
        },
        recipe_digest: Some(Digest::of(b"recipe").to_hex()),
        dependency_digests: BTreeMap::new(),
        diff_report: match outcome {
            ReportOutcome::Differs => Some(
                "TIMESTAMP:1 RANDOMNESS:0 PATH:0 UNCLASSIFIED:0\n\n\
                 [TIMESTAMP/gzip-header-mtime] /\n  a: 1 (bytes 4..8)\n  b: 2 (bytes 4..8)\n  header mtime differs\n"
                    .to_string(),
            ),
            _ => None,
        },
        started: now,
        finished: now + 5,
    }
}

#[test]
fn criterion_8_coordinator_recovers_from_a_torn_journal_without_double_counting() {
    let t0 = Instant::now();
    let state = tempfile::tempdir().unwrap();
    let key_path = state.path().join("signing.key");
    let signer = Ed25519Signer::generate();
    signer.save(&key_path).unwrap();
    let public = signer.verifying_key();
    let clock = SimClock::new(5_000_000);
    let policy = RequeuePolicy {
        base_delay: Duration::from_secs(1_000),
        claim_ttl: Duration::from_secs(600),
    };

    let releases: Vec<PackageRelease> = (0..6)
        .map(|i| {
            let name = format!("pkg-{}", char::from(b'a' + i));
            PackageRelease {
                name: name.clone(),
                version: Version::parse("1.0-1").unwrap(),
                arch: "any".to_string(),
                artifact_digest: Digest::of(name.as_bytes()),
                recipe_ref: format!("{name}.recipe"),
                artifact_ref: format!("{name}.pkg"),
            }
        })
        .collect();
    let digest_hex: Vec<String> = releases.iter().map(|r| r.artifact_digest.to_hex()).collect();

    // --- Phase one: partial run, then a crash mid-write ----------------
    let journal_path;
    {
        let c = Coordinator::open(
            state.path(),
            "acceptance.rebuilder",
            policy,
            Ed25519Signer::load(&key_path).unwrap(),
            Arc::new(clock.clone()),
        )
        .unwrap();
        journal_path = c.journal_path().to_path_buf();
        let events = diff_index(&[], &releases);
        assert_eq!(c.sync_events(&events).unwrap(), 6);

        // Claims come out in name order: pkg-a, pkg-b, pkg-c, pkg-d.
        let t1 = c.claim("w1").unwrap().unwrap();
        assert_eq!(t1.release.name, "pkg-a");
        let t2 = c.claim("w1").unwrap().unwrap();
        let t3 = c.claim("w2").unwrap().unwrap();
        let t4 = c.claim("w2").unwrap().unwrap();
        assert_eq!(t4.release.name, "pkg-d");

        c.report(&simple_report(t1.claim_token, ReportOutcome::BitIdentical, &digest_hex[0], 5_000_000)).unwrap();
        c.report(&simple_report(t2.claim_token, ReportOutcome::BitIdentical, &digest_hex[1], 5_000_000)).unwrap();
        // The report that will be torn in half: pkg-c differs.
        c.report(&simple_report(t3.claim_token, ReportOutcome::Differs, &digest_hex[2], 5_000_000)).unwrap();

        let counts = c.counts();
        assert_eq!((counts.good, counts.bad, counts.unknown), (2, 1, 3));
        assert_eq!(c.builds_len(), 3);
        let _ = t4; // claim 4 stays outstanding across the crash
    }

    // Tear the final journal line in half, as a crash mid-write would.
    let bytes = std::fs::read(&journal_path).unwrap();
    assert!(bytes.ends_with(b"\n"));
    let torn = &bytes[..bytes.len() - 37];
    assert!(
        !torn.ends_with(b"\n"),
        "the cut must land inside the final record"
    );
    std::fs::write(&journal_path, torn).unwrap();

    // --- Phase two: recover and finish the run -------------------------
    {
        let c = Coordinator::open(
            state.path(),
            "acceptance.rebuilder",
            policy,
            Ed25519Signer::load(&key_path).unwrap(),
            Arc::new(clock.clone()),
        )
        .unwrap();
        // The torn report is gone; everything before it survived intact.
        let counts = c.counts();
        assert_eq!(
            (counts.good, counts.bad, counts.unknown),
            (2, 0, 4),
            "recovery must drop exactly the torn record"
        );
        assert_eq!(c.builds_len(), 2);

        // The claim whose report was torn is live again: the worker's
        // retry of the same report now lands.
        c.report(&simple_report(3, ReportOutcome::Differs, &digest_hex[2], 5_000_000)).unwrap();
        // The claim that was outstanding across the crash also survives.
        c.report(&simple_report(4, ReportOutcome::BitIdentical, &digest_hex[3], 5_000_000)).unwrap();

        // Drain the rest to a steady state.
        let t5 = c.claim("w1").unwrap().unwrap();
        assert_eq!(t5.release.name, "pkg-e");
        c.report(&simple_report(t5.claim_token, ReportOutcome::BuildFailed, &digest_hex[4], 5_000_000)).unwrap();
        let t6 = c.claim("w2").unwrap().unwrap();
        assert_eq!(t6.release.name, "pkg-f");
        c.report(&simple_report(t6.claim_token, ReportOutcome::BitIdentical, &digest_hex[5], 5_000_000)).unwrap();
        assert!(c.claim("w1").unwrap().is_none(), "queue must be drained");

        let counts = c.counts();
        assert_eq!((counts.good, counts.bad, counts.unknown), (4, 2, 0));
        assert_eq!(c.builds_len(), 6);
    }

    // --- Phase three: a clean restart replays to the same steady state -
    {
        let c = Coordinator::open(
            state.path(),
            "acceptance.rebuilder",
            policy,
            Ed25519Signer::load(&key_path).unwrap(),
            Arc::new(clock.clone()),
        )
        .unwrap();
        let counts = c.counts();
        assert_eq!(
            (counts.good, counts.bad, counts.unknown, counts.total()),
            (4, 2, 0, 6),
            "no verdict may be lost or double-counted"
        );
        assert_eq!(c.builds_len(), 6);
        // Every package was verified exactly once.
        let (packages, total) = c.packages(None, None, 0, 100);
        assert_eq!(total, 6);
        for p in &packages {
            assert_eq!(p.attempts, 1, "{} double-counted", p.release.name);
        }
        // Evidence survived both the crash and the restarts: the pre-crash
        // attestation still verifies, the retried diff is intact.
        let good_build = c.build(1).unwrap();
        let att = good_build.attestation.expect("verified build keeps its attestation");
        verify_attestation_text(&att, &public).unwrap();
        assert!(good_build.diff_report.is_none());
        let bad_build = c.build(3).unwrap();
        assert!(bad_build.attestation.is_none());
        assert!(bad_build.diff_report.unwrap().starts_with("TIMESTAMP:1"));
    }

    assert!(
        t0.elapsed() < Duration::from_secs(10),
        "crash recovery must finish within 10s, took {:?}",
        t0.elapsed()
    );
}
