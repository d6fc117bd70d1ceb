//! Coordinator daemon: watches a release index, schedules rebuilds, serves
//! the HTTP API, and signs attestations for bit-identical rebuilds.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;

use verifier_core::attest::Ed25519Signer;
use verifier_core::clock::{Clock, SystemClock};
use verifier_core::index::{run_sync_loop, SnapshotStore, SyncDaemon};
use verifier_core::queue::RequeuePolicy;
use verifier_service::api::{router, serve, ApiContext};
use verifier_service::coordinator::Coordinator;
use verifier_service::remote::AnyIndexSource;

/// Rebuild coordinator: index sync, scheduling, results, attestations.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8484")]
    listen: String,

    /// Directory holding the journal, index snapshot, and signing key.
    #[arg(long)]
    state_dir: PathBuf,

    /// Release index to watch: a local file path or an http(s) URL.
    /// Without it the daemon serves whatever the journal already holds.
    #[arg(long)]
    source: Option<String>,

    /// Seconds between release-index syncs.
    #[arg(long, default_value_t = 300)]
    sync_interval: u64,

    /// Base retry delay in seconds; a package that failed n times becomes
    /// eligible again after n times this value.
    #[arg(long, default_value_t = 7 * 86_400)]
    base_delay: u64,

    /// Seconds a worker may hold a claim before it expires.
    #[arg(long, default_value_t = 30 * 60)]
    claim_ttl: u64,

    /// Identity string recorded in every attestation this daemon signs.
    #[arg(long, default_value = "rebuilder.local")]
    rebuilder_id: String,

    /// Ed25519 signing key file; created on first start when missing.
    /// Defaults to signing.key inside the state directory.
    #[arg(long)]
    signing_key: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    std::fs::create_dir_all(&args.state_dir)
        .with_context(|| format!("creating state directory {}", args.state_dir.display()))?;
    let key_path = args
        .signing_key
        .unwrap_or_else(|| args.state_dir.join("signing.key"));
    let signer = Ed25519Signer::load_or_generate(&key_path)
        .with_context(|| format!("loading signing key {}", key_path.display()))?;

    let policy = RequeuePolicy {
        base_delay: Duration::from_secs(args.base_delay),
        claim_ttl: Duration::from_secs(args.claim_ttl),
    };
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let coordinator = Arc::new(Coordinator::open(
        &args.state_dir,
        &args.rebuilder_id,
        policy,
        signer,
        clock,
    )?);
    log::info!(
        "rebuilder {} (key {})",
        coordinator.rebuilder_id(),
        coordinator.key_id()
    );

    if let Some(locator) = &args.source {
        let store = SnapshotStore::new(&args.state_dir);
        let source = AnyIndexSource::open(locator);
        let mut daemon = SyncDaemon::new(source, Some(store)).context("restoring index snapshot")?;
        let interval = Duration::from_secs(args.sync_interval.max(1));
        let coord = coordinator.clone();
        std::thread::Builder::new()
            .name("index-sync".to_string())
            .spawn(move || {
                let outcome = run_sync_loop(&mut daemon, interval, |events| {
                    match coord.sync_events(&events) {
                        Ok(n) => log::info!("index sync queued {n} release(s)"),
                        Err(e) => log::error!("applying index events: {e}"),
                    }
                });
                if let Err(e) = outcome {
                    log::error!("index sync stopped: {e}");
                }
            })
            .context("starting the index sync thread")?;
    } else {
        log::warn!("no --source given; serving the journaled queue without syncing");
    }

    let admin_token = std::env::var("ADMIN_TOKEN").ok().filter(|t| !t.is_empty());
    let worker_token = std::env::var("WORKER_TOKEN").ok().filter(|t| !t.is_empty());
    if admin_token.is_none() {
        log::warn!("ADMIN_TOKEN not set; queue administration is open");
    }
    if worker_token.is_none() {
        log::warn!("WORKER_TOKEN not set; the worker protocol is open");
    }
    let app = router(ApiContext {
        coordinator,
        admin_token,
        worker_token,
    });

    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .with_context(|| format!("binding {}", args.listen))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        tokio::select! {
            r = serve(app, listener) => r.context("serving the API"),
            _ = tokio::signal::ctrl_c() => {
                log::info!("interrupt received; shutting down");
                Ok(())
            }
        }
    })
}
