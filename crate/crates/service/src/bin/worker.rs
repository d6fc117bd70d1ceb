//! Rebuild worker: polls the coordinator for work, rebuilds each claimed
//! release in an independent environment, and reports the comparison.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Parser;

use verifier_core::build::BackendRegistry;
use verifier_core::clock::{Clock, SystemClock};
use verifier_service::remote::StdRefFetcher;
use verifier_service::worker::{run_worker_loop, CoordinatorClient, WorkerConfig};

/// Rebuild worker for the verification coordinator.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Coordinator base URL.
    #[arg(long, default_value = "http://127.0.0.1:8484")]
    coordinator: String,

    /// Identity reported with every claim; defaults to worker-{pid}.
    #[arg(long)]
    worker_id: Option<String>,

    /// Build backend to rebuild with.
    #[arg(long, default_value = "mock")]
    backend: String,

    /// Absolute directory the rebuilds pretend to run under; each task
    /// builds in {build-root}/{name}-{version}.
    #[arg(long, default_value = "/var/tmp/rebuild")]
    build_root: String,

    /// Seconds to sleep between polls when no work is available.
    #[arg(long, default_value_t = 10)]
    poll_interval: u64,

    /// Resolve relative recipe/artifact references under this directory;
    /// http(s) references are fetched regardless.
    #[arg(long)]
    refs_root: Option<PathBuf>,

    /// Exit after this many consecutive empty polls instead of running
    /// forever. Useful for drain-the-queue batch runs.
    #[arg(long)]
    exit_when_idle: Option<u32>,

    /// KEY=VALUE pair injected into the build environment; repeatable.
    /// Example: --env SOURCE_DATE_EPOCH=1700000000
    #[arg(long = "env", value_name = "KEY=VALUE")]
    env: Vec<String>,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let registry = BackendRegistry::standard();
    let backend = registry
        .get(&args.backend)
        .with_context(|| format!("backend {:?}", args.backend))?;

    let mut env_vars = BTreeMap::new();
    for pair in &args.env {
        match pair.split_once('=') {
            Some((k, v)) if !k.is_empty() => {
                env_vars.insert(k.to_string(), v.to_string());
            }
            _ => bail!("--env takes KEY=VALUE, got {pair:?}"),
        }
    }
    if !args.build_root.starts_with('/') {
        bail!("--build-root must be an absolute path, got {:?}", args.build_root);
    }

    let worker_id = args
        .worker_id
        .unwrap_or_else(|| format!("worker-{}", std::process::id()));
    let cfg = WorkerConfig {
        worker_id: worker_id.clone(),
        build_root: args.build_root,
        toolchain_id: verifier_core::build::DEFAULT_TOOLCHAIN_ID.to_string(),
        env_vars,
    };

    let token = std::env::var("WORKER_TOKEN").ok().filter(|t| !t.is_empty());
    let client = CoordinatorClient::new(&args.coordinator, token);
    let fetcher = StdRefFetcher::new(args.refs_root);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let stop = AtomicBool::new(false);

    log::info!("{worker_id} polling {} with backend {}", args.coordinator, args.backend);
    let completed = run_worker_loop(
        &client,
        &cfg,
        backend,
        &fetcher,
        &clock,
        Duration::from_secs(args.poll_interval.max(1)),
        &stop,
        args.exit_when_idle,
    );
    log::info!("{worker_id} exiting after {completed} completed build(s)");
    Ok(())
}
