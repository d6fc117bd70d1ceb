//! The rebuild worker: claims tasks, rebuilds, compares, reports.
//!
//! `execute_task` is the whole unit of work as a pure-ish function from a
//! claimed task to a report, so tests can drive it without the HTTP loop.
//! It never panics on bad inputs from the outside world — every fetch,
//! parse, or digest problem turns into a `build_failed` report whose log
//! says what went wrong.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use verifier_core::build::{dependency_digest, rebuild_and_compare, BuildBackend, BuildEnvironment, BuildOutput, RebuildVerdict};
use verifier_core::clock::Clock;
use verifier_core::diff::render_report;
use verifier_core::digest::Digest;
use verifier_core::recipe::{emit_recipe, parse_recipe, resolve_dependencies};
use verifier_core::version::Version;

use crate::remote::RefFetcher;
use crate::wire::{ClaimRequest, ClaimResponse, ReportOutcome, ReportRequest, ReportResponse, TaskView};

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub worker_id: String,
    /// Absolute directory this worker pretends to build under; each task
    /// builds in `{build_root}/{name}-{version}`.
    pub build_root: String,
    pub toolchain_id: String,
    /// Extra build environment (e.g. `SOURCE_DATE_EPOCH`).
    pub env_vars: BTreeMap<String, String>,
}

impl WorkerConfig {
    pub fn new(worker_id: impl Into<String>, build_root: impl Into<String>) -> WorkerConfig {
        WorkerConfig {
            worker_id: worker_id.into(),
            build_root: build_root.into(),
            toolchain_id: verifier_core::build::DEFAULT_TOOLCHAIN_ID.to_string(),
            env_vars: BTreeMap::new(),
        }
    }
}

/// Run one claimed task to completion and produce the report for it.
pub fn execute_task(
    task: &TaskView,
    cfg: &WorkerConfig,
    backend: &dyn BuildBackend,
    fetcher: &dyn RefFetcher,
    clock: &Arc<dyn Clock>,
) -> ReportRequest {
    let started = clock.now().0;
    let mut log = String::new();
    let logln = |line: String, log: &mut String| {
        log.push_str(&line);
        log.push('\n');
    };
    logln(
        format!(
            "==> task {}/{} version {} (claim {})",
            task.name, task.arch, task.version, task.claim_token
        ),
        &mut log,
    );

    // Everything that can go wrong before the build turns into a
    // build_failed report with the reason in the log.
    macro_rules! fail {
        ($log:expr, $($why:tt)*) => {{
            let mut log = $log;
            log.push_str(&format!($($why)*));
            log.push('\n');
            return ReportRequest {
                claim_token: task.claim_token,
                outcome: ReportOutcome::BuildFailed,
                log,
                rebuilt_digest: None,
                recipe_digest: None,
                dependency_digests: BTreeMap::new(),
                diff_report: None,
                started,
                finished: clock.now().0,
            };
        }};
    }

    let recipe_bytes = match fetcher.fetch(&task.recipe_ref) {
        Ok(b) => b,
        Err(e) => fail!(log, "==> fetching recipe {}: {e}", task.recipe_ref),
    };
    let recipe_text = match String::from_utf8(recipe_bytes) {
        Ok(t) => t,
        Err(_) => fail!(log, "==> recipe {} is not valid UTF-8", task.recipe_ref),
    };
    let recipe = match parse_recipe(&recipe_text) {
        Ok(r) => r,
        Err(e) => fail!(log, "==> recipe does not parse: {e}"),
    };
    let version = match Version::parse(&task.version) {
        Ok(v) => v,
        Err(e) => fail!(log, "==> task version {:?} does not parse: {e}", task.version),
    };
    if recipe.name != task.name || recipe.version != version {
        fail!(
            log,
            "==> recipe is for {} {} but the task wants {} {}",
            recipe.name,
            recipe.version,
            task.name,
            task.version
        );
    }

    let reference = match fetcher.fetch(&task.artifact_ref) {
        Ok(b) => b,
        Err(e) => fail!(log, "==> fetching reference artifact {}: {e}", task.artifact_ref),
    };
    let reference_digest = Digest::of(&reference);
    if reference_digest.to_hex() != task.artifact_digest {
        fail!(
            log,
            "==> reference artifact digest mismatch: index says {} but the bytes hash to {}; \
             refusing to compare against an unverified reference",
            task.artifact_digest,
            reference_digest
        );
    }
    logln(
        format!("==> reference artifact verified ({} bytes)", reference.len()),
        &mut log,
    );

    // Model environment: dependency identities derive from the resolved
    // constraints (unconstrained dependencies use the fixed stand-in the
    // build environment provides).
    let resolved = resolve_dependencies(&recipe, &version);
    let mut dependency_digests: BTreeMap<String, Digest> = BTreeMap::new();
    for dep in &resolved {
        let dep_version = match &dep.constraint {
            Some(c) => match Version::parse(c) {
                Ok(v) => v,
                Err(e) => fail!(log, "==> dependency {} constraint {c:?} does not resolve: {e}", dep.name),
            },
            None => Version::parse("1.0-1").expect("static version"),
        };
        dependency_digests.insert(dep.name.clone(), dependency_digest(&dep.name, &dep_version));
    }

    let build_path = format!(
        "{}/{}-{}",
        cfg.build_root.trim_end_matches('/'),
        task.name,
        task.version
    );
    let env = match BuildEnvironment::new(
        cfg.env_vars.clone(),
        &build_path,
        &cfg.toolchain_id,
        dependency_digests.clone(),
        clock.clone(),
    ) {
        Ok(env) => env,
        Err(e) => fail!(log, "==> build environment rejected: {e}"),
    };

    let outcome = match rebuild_and_compare(&reference, &recipe, &env, backend) {
        Ok(o) => o,
        Err(e) => fail!(log, "==> rebuild failed to run: {e}"),
    };
    match &outcome.output {
        BuildOutput::Completed { log: build_log, .. } | BuildOutput::Failed { log: build_log } => {
            log.push_str(build_log);
        }
    }

    let dep_hex: BTreeMap<String, String> = dependency_digests
        .iter()
        .map(|(k, v)| (k.clone(), v.to_hex()))
        .collect();
    let recipe_digest = Digest::of(emit_recipe(&recipe).as_bytes()).to_hex();

    match outcome.verdict {
        RebuildVerdict::BitIdentical => {
            logln("==> rebuilt artifact is bit-identical to the reference".to_string(), &mut log);
            ReportRequest {
                claim_token: task.claim_token,
                outcome: ReportOutcome::BitIdentical,
                log,
                rebuilt_digest: Some(reference_digest.to_hex()),
                recipe_digest: Some(recipe_digest),
                dependency_digests: dep_hex,
                diff_report: None,
                started,
                finished: clock.now().0,
            }
        }
        RebuildVerdict::Differs(findings) => {
            let rebuilt = match &outcome.output {
                BuildOutput::Completed { artifact, .. } => Digest::of(artifact),
                BuildOutput::Failed { .. } => reference_digest, // unreachable by construction
            };
            logln(
                format!("==> rebuilt artifact differs ({} findings)", findings.len()),
                &mut log,
            );
            ReportRequest {
                claim_token: task.claim_token,
                outcome: ReportOutcome::Differs,
                log,
                rebuilt_digest: Some(rebuilt.to_hex()),
                recipe_digest: Some(recipe_digest),
                dependency_digests: dep_hex,
                diff_report: Some(render_report(&findings)),
                started,
                finished: clock.now().0,
            }
        }
        RebuildVerdict::BuildFailed(_) => {
            logln("==> build failed".to_string(), &mut log);
            ReportRequest {
                claim_token: task.claim_token,
                outcome: ReportOutcome::BuildFailed,
                log,
                rebuilt_digest: None,
                recipe_digest: Some(recipe_digest),
                dependency_digests: dep_hex,
                diff_report: None,
                started,
                finished: clock.now().0,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Coordinator client and polling loop

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("coordinator request failed: {0}")]
    Transport(String),
    #[error("coordinator rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
}

/// Blocking HTTP client for the worker protocol.
pub struct CoordinatorClient {
    base: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl CoordinatorClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> CoordinatorClient {
        let mut base = base.into();
        while base.ends_with('/') {
            base.pop();
        }
        CoordinatorClient {
            base,
            token,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("constructing an http client cannot fail with static options"),
        }
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &impl serde::Serialize,
    ) -> Result<T, ClientError> {
        let mut req = self.client.post(format!("{}{path}", self.base)).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ClientError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        resp.json::<T>()
            .map_err(|e| ClientError::Transport(e.to_string()))
    }

    pub fn claim(&self, worker_id: &str) -> Result<Option<TaskView>, ClientError> {
        let resp: ClaimResponse = self.post(
            "/api/v0/work/claim",
            &ClaimRequest {
                worker_id: worker_id.to_string(),
            },
        )?;
        Ok(resp.task)
    }

    pub fn report(&self, report: &ReportRequest) -> Result<ReportResponse, ClientError> {
        self.post("/api/v0/work/report", report)
    }
}

/// Claim-execute-report until `stop` is raised — or, when `idle_exit` is
/// set, until that many consecutive claims came back empty.
#[allow(clippy::too_many_arguments)]
pub fn run_worker_loop(
    client: &CoordinatorClient,
    cfg: &WorkerConfig,
    backend: &dyn BuildBackend,
    fetcher: &dyn RefFetcher,
    clock: &Arc<dyn Clock>,
    poll: Duration,
    stop: &AtomicBool,
    idle_exit: Option<u32>,
) -> u64 {
    let mut completed = 0u64;
    let mut idle = 0u32;
    while !stop.load(Ordering::SeqCst) {
        match client.claim(&cfg.worker_id) {
            Ok(Some(task)) => {
                idle = 0;
                log::info!(
                    "claimed {}/{} {} (token {})",
                    task.name,
                    task.arch,
                    task.version,
                    task.claim_token
                );
                let report = execute_task(&task, cfg, backend, fetcher, clock);
                match client.report(&report) {
                    Ok(resp) => {
                        completed += 1;
                        log::info!("build {} recorded as {}", resp.build_id, resp.status);
                    }
                    Err(e) => log::warn!("reporting {}/{}: {e}", task.name, task.arch),
                }
            }
            Ok(None) => {
                idle += 1;
                if let Some(max_idle) = idle_exit {
                    if idle >= max_idle {
                        break;
                    }
                }
                std::thread::sleep(poll);
            }
            Err(e) => {
                log::warn!("claiming work: {e}");
                idle += 1;
                if let Some(max_idle) = idle_exit {
                    if idle >= max_idle {
                        break;
                    }
                }
                std::thread::sleep(poll);
            }
        }
    }
    completed
}
