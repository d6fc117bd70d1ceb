//! Operator console for the rebuild coordinator, plus local recipe tooling.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use verifier_core::attest::{verify_attestation_text, Ed25519Signer, Signer, VerifyingKey};
use verifier_core::buildinfo::{check_consistency, parse_buildinfo, ConsistencyKind};
use verifier_core::recipe::{lint_recipe, parse_recipe, Severity};
use verifier_service::wire::{
    BuildView, DashboardView, ErrorBody, KeyView, PackageListView, PackageView, RequeueRequest,
    RequeueResponse,
};

/// Inspect and administer a rebuild coordinator.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Coordinator base URL.
    #[arg(long, global = true, default_value = "http://127.0.0.1:8484")]
    coordinator: String,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Show verdict counts and the reproducible ratio.
    Status,
    /// List queued packages, optionally filtered.
    Pkgs {
        /// Only this verdict: good, bad, or unknown.
        #[arg(long)]
        status: Option<String>,
        /// Only names starting with this prefix.
        #[arg(long)]
        prefix: Option<String>,
        /// Skip this many matches.
        #[arg(long, default_value_t = 0)]
        offset: usize,
        /// Show at most this many matches.
        #[arg(long, default_value_t = 50)]
        limit: usize,
    },
    /// Show every queued release of one package.
    Show { name: String },
    /// Push every release of a package back to the front of the queue.
    /// Sends ADMIN_TOKEN as a bearer token when set.
    Requeue { name: String },
    /// Show one build's metadata.
    Build { id: u64 },
    /// Print a build's log.
    Log { id: u64 },
    /// Print a build's difference report.
    Diff { id: u64 },
    /// Print a build's signed attestation.
    Attestation { id: u64 },
    /// Verify an attestation file against the coordinator's public key.
    Verify { file: PathBuf },
    /// Check a recipe, and optionally a build manifest, for version
    /// self-mutation and dependency drift. Exits 1 on findings.
    Lint {
        recipe: PathBuf,
        /// Build manifest recorded by a previous build of this recipe.
        #[arg(long)]
        buildinfo: Option<PathBuf>,
    },
    /// Generate an Ed25519 signing key file and print its public half.
    Keygen { path: PathBuf },
}

struct Api {
    base: String,
    client: reqwest::blocking::Client,
}

impl Api {
    fn new(base: &str) -> Api {
        Api {
            base: base.trim_end_matches('/').to_string(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("static client options"),
        }
    }

    fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> anyhow::Result<T> {
        let resp = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .with_context(|| format!("GET {path}"))?;
        Self::decode(resp, path)
    }

    fn get_text(&self, path: &str) -> anyhow::Result<String> {
        let resp = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .with_context(|| format!("GET {path}"))?;
        if !resp.status().is_success() {
            bail!("{path}: {}", Self::error_line(resp));
        }
        Ok(resp.text()?)
    }

    fn post_json<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &impl serde::Serialize,
        token: Option<&str>,
    ) -> anyhow::Result<T> {
        let mut req = self.client.post(format!("{}{path}", self.base)).json(body);
        if let Some(token) = token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().with_context(|| format!("POST {path}"))?;
        Self::decode(resp, path)
    }

    fn decode<T: serde::de::DeserializeOwned>(
        resp: reqwest::blocking::Response,
        path: &str,
    ) -> anyhow::Result<T> {
        if !resp.status().is_success() {
            bail!("{path}: {}", Self::error_line(resp));
        }
        resp.json::<T>().with_context(|| format!("decoding {path}"))
    }

    fn error_line(resp: reqwest::blocking::Response) -> String {
        let status = resp.status();
        match resp.json::<ErrorBody>() {
            Ok(body) => format!("{status}: {}", body.error),
            Err(_) => status.to_string(),
        }
    }
}

fn print_package(p: &PackageView) {
    let verdict = match &p.bad_reason {
        Some(reason) => format!("{} ({reason})", p.status),
        None => p.status.clone(),
    };
    let retry = match p.next_eligible {
        Some(t) => format!(" retry-at={t}"),
        None => String::new(),
    };
    let build = match p.last_build_id {
        Some(id) => format!(" build={id}"),
        None => String::new(),
    };
    println!(
        "{} {} {} {} attempts={}{retry}{build}",
        p.name, p.version, p.arch, verdict, p.attempts
    );
}

fn run(args: Args) -> anyhow::Result<ExitCode> {
    let api = Api::new(&args.coordinator);
    match args.cmd {
        Cmd::Status => {
            let d: DashboardView = api.get_json("/api/v0/dashboard")?;
            println!("rebuilder:    {}", d.rebuilder_id);
            println!("packages:     {}", d.total);
            println!("  good:       {}", d.good);
            println!("  bad:        {}", d.bad);
            println!("  unknown:    {}", d.unknown);
            match d.reproducible_ratio {
                Some(r) => println!("reproducible: {r}%"),
                None => println!("reproducible: n/a (no verdicts yet)"),
            }
        }
        Cmd::Pkgs {
            status,
            prefix,
            offset,
            limit,
        } => {
            let mut query = format!("/api/v0/pkgs?offset={offset}&limit={limit}");
            if let Some(s) = status {
                query.push_str(&format!("&status={s}"));
            }
            if let Some(p) = prefix {
                query.push_str(&format!("&prefix={p}"));
            }
            let list: PackageListView = api.get_json(&query)?;
            for p in &list.packages {
                print_package(p);
            }
            println!(
                "{} shown of {} matched",
                list.packages.len(),
                list.total_matched
            );
        }
        Cmd::Show { name } => {
            let releases: Vec<PackageView> = api.get_json(&format!("/api/v0/pkgs/{name}"))?;
            for p in &releases {
                print_package(p);
            }
        }
        Cmd::Requeue { name } => {
            let token = std::env::var("ADMIN_TOKEN").ok().filter(|t| !t.is_empty());
            let resp: RequeueResponse = api.post_json(
                "/api/v0/queue/requeue",
                &RequeueRequest { name: name.clone() },
                token.as_deref(),
            )?;
            println!("requeued {} release(s) of {name}", resp.requeued);
        }
        Cmd::Build { id } => {
            let b: BuildView = api.get_json(&format!("/api/v0/builds/{id}"))?;
            let verdict = match &b.bad_reason {
                Some(reason) => format!("{} ({reason})", b.status),
                None => b.status.clone(),
            };
            println!("build:    {}", b.build_id);
            println!("package:  {} {} {}", b.name, b.version, b.arch);
            println!("verdict:  {verdict}");
            println!("worker:   {}", b.worker_id);
            println!("started:  {}", b.started);
            println!("finished: {}", b.finished);
            if let Some(d) = &b.rebuilt_digest {
                println!("rebuilt:  {d}");
            }
            let mut evidence = Vec::new();
            if b.has_log {
                evidence.push("log");
            }
            if b.has_diff {
                evidence.push("diff");
            }
            if b.has_attestation {
                evidence.push("attestation");
            }
            println!("evidence: {}", if evidence.is_empty() { "none".to_string() } else { evidence.join(", ") });
        }
        Cmd::Log { id } => print!("{}", api.get_text(&format!("/api/v0/builds/{id}/log"))?),
        Cmd::Diff { id } => print!("{}", api.get_text(&format!("/api/v0/builds/{id}/diff"))?),
        Cmd::Attestation { id } => print!(
            "{}",
            api.get_text(&format!("/api/v0/builds/{id}/attestation"))?
        ),
        Cmd::Verify { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let key: KeyView = api.get_json("/api/v0/key")?;
            let raw = hex::decode(&key.public_key).context("decoding the coordinator key")?;
            let raw: [u8; 32] = raw
                .try_into()
                .map_err(|_| anyhow::anyhow!("coordinator key is not 32 bytes"))?;
            let vk = VerifyingKey::from_bytes(&raw).context("invalid coordinator key")?;
            match verify_attestation_text(&text, &vk) {
                Ok(stmt) => {
                    println!(
                        "OK: {} {} {} rebuilt bit-identically by {} at {}",
                        stmt.name, stmt.version, stmt.arch, stmt.rebuilder_id, stmt.timestamp.0
                    );
                }
                Err(e) => {
                    println!("FAILED: {e}");
                    return Ok(ExitCode::from(1));
                }
            }
        }
        Cmd::Lint { recipe, buildinfo } => return lint(&recipe, buildinfo.as_deref()),
        Cmd::Keygen { path } => {
            if path.exists() {
                bail!("{} already exists; refusing to overwrite a key", path.display());
            }
            let signer = Ed25519Signer::generate();
            signer
                .save(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("public_key={}", signer.public_key_hex());
            println!("key_id={}", signer.key_id());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn lint(recipe_path: &std::path::Path, manifest: Option<&std::path::Path>) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(recipe_path)
        .with_context(|| format!("reading {}", recipe_path.display()))?;
    let recipe = parse_recipe(&text).context("recipe does not parse")?;

    let mut errors = 0usize;
    let mut warnings = 0usize;
    for finding in lint_recipe(&recipe) {
        match finding.severity {
            Severity::Error => errors += 1,
            Severity::Warning => warnings += 1,
        }
        println!(
            "{}[{}] {}: {}",
            finding.severity.as_str(),
            finding.rule_id,
            finding.location,
            finding.message
        );
    }

    if let Some(info_path) = manifest {
        let info_text = std::fs::read_to_string(info_path)
            .with_context(|| format!("reading {}", info_path.display()))?;
        let info = parse_buildinfo(&info_text).context("build manifest does not parse")?;
        let findings = check_consistency(&recipe, &recipe.version, &info)
            .context("comparing the manifest against the recipe")?;
        for f in &findings {
            errors += 1;
            let line = match f.kind {
                ConsistencyKind::DepVersionMismatch => format!(
                    "dependency {} was installed at {} but the recipe requires {}",
                    f.dependency,
                    f.recorded.as_ref().map(|v| v.to_string()).unwrap_or_default(),
                    f.required.as_ref().map(|v| v.to_string()).unwrap_or_default(),
                ),
                ConsistencyKind::MissingDep => {
                    format!("dependency {} is not in the installed set", f.dependency)
                }
                ConsistencyKind::ExtraDep => format!(
                    "installed package {} is not a recipe dependency",
                    f.dependency
                ),
            };
            println!("error[{}] {}", f.kind.as_str(), line);
        }
    }

    if errors + warnings == 0 {
        println!("clean: no findings");
    } else {
        println!("{errors} error(s), {warnings} warning(s)");
    }
    Ok(if errors > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
