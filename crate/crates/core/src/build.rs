//! Build execution: turning a recipe plus a controlled environment into an
//! artifact, and rebuilding for comparison against a reference.
//!
//! The [`MockBackend`] is the hermetic in-process builder used for tests,
//! simulations, and end-to-end exercises. Absent fault directives, its
//! artifact is a pure function of the recipe text, the dependency digests,
//! and the toolchain id — the environment's build path, clock, and
//! variables leave no trace. Recipes opt into realistic reproducibility
//! defects through directives in their `build` phase:
//!
//! ```text
//! fault WALL_CLOCK_TIMESTAMP   # gzip header mtime = build wall clock
//! fault BUILD_PATH_EMBED       # a member embeds the build directory
//! fault RANDOM_BYTES           # a member holds fresh random bytes
//! fault ARCHIVE_ORDER          # members are shuffled randomly
//! fail                         # the build errors out
//! ```
//!
//! Setting `SOURCE_DATE_EPOCH` in the environment neutralizes exactly the
//! wall-clock fault, mirroring how the variable works in real toolchains.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::RngCore;
use thiserror::Error;

use crate::archive::{write_gzip, write_tar, TarMember};
use crate::buildinfo::{BuildInfo, InstalledPackage};
use crate::clock::Clock;
use crate::diff::{compare_artifacts, DiffFinding};
use crate::digest::Digest;
use crate::recipe::{emit_recipe, resolve_dependencies, BuildRecipe, PhaseName};
use crate::version::Version;

/// The environment variable that pins embedded timestamps.
pub const SOURCE_DATE_EPOCH: &str = "SOURCE_DATE_EPOCH";

/// Toolchain identity the mock backend stamps into artifacts unless told
/// otherwise.
pub const DEFAULT_TOOLCHAIN_ID: &str = "mock-toolchain-1";

/// Convention for the digest of an installed dependency, shared between
/// the reference-build side and rebuild workers so both hash the same
/// inputs.
pub fn dependency_digest(name: &str, version: &Version) -> Digest {
    Digest::of(format!("{name} {version}").as_bytes())
}

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("build path must be absolute, got {0:?}")]
    RelativeBuildPath(String),
    #[error("invalid {SOURCE_DATE_EPOCH} value {0:?}")]
    BadSourceDateEpoch(String),
}

/// Everything about a build that is not the recipe.
#[derive(Clone)]
pub struct BuildEnvironment {
    pub env_vars: BTreeMap<String, String>,
    /// Absolute directory the build pretends to run in.
    pub build_path: String,
    pub toolchain_id: String,
    /// Digests of the dependencies as installed, keyed by package name.
    pub dependency_digests: BTreeMap<String, Digest>,
    pub clock: Arc<dyn Clock>,
}

impl fmt::Debug for BuildEnvironment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BuildEnvironment")
            .field("env_vars", &self.env_vars)
            .field("build_path", &self.build_path)
            .field("toolchain_id", &self.toolchain_id)
            .field("dependency_digests", &self.dependency_digests)
            .finish_non_exhaustive()
    }
}

impl BuildEnvironment {
    pub fn new(
        env_vars: BTreeMap<String, String>,
        build_path: &str,
        toolchain_id: &str,
        dependency_digests: BTreeMap<String, Digest>,
        clock: Arc<dyn Clock>,
    ) -> Result<BuildEnvironment, EnvironmentError> {
        if !build_path.starts_with('/') {
            return Err(EnvironmentError::RelativeBuildPath(build_path.to_string()));
        }
        let env = BuildEnvironment {
            env_vars,
            build_path: build_path.to_string(),
            toolchain_id: toolchain_id.to_string(),
            dependency_digests,
            clock,
        };
        env.source_date_epoch()?;
        Ok(env)
    }

    /// The pinned timestamp, if the environment sets one.
    pub fn source_date_epoch(&self) -> Result<Option<u64>, EnvironmentError> {
        match self.env_vars.get(SOURCE_DATE_EPOCH) {
            None => Ok(None),
            Some(v) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| EnvironmentError::BadSourceDateEpoch(v.clone())),
        }
    }
}

/// Reproducibility defects the mock backend can inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FaultKind {
    WallClockTimestamp,
    BuildPathEmbed,
    RandomBytes,
    ArchiveOrder,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::WallClockTimestamp => "WALL_CLOCK_TIMESTAMP",
            FaultKind::BuildPathEmbed => "BUILD_PATH_EMBED",
            FaultKind::RandomBytes => "RANDOM_BYTES",
            FaultKind::ArchiveOrder => "ARCHIVE_ORDER",
        }
    }

    pub fn from_str(s: &str) -> Option<FaultKind> {
        [
            FaultKind::WallClockTimestamp,
            FaultKind::BuildPathEmbed,
            FaultKind::RandomBytes,
            FaultKind::ArchiveOrder,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
    }
}

/// Result of one build execution. A failed build still produces its log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildOutput {
    Completed {
        artifact: Vec<u8>,
        log: String,
        buildinfo: BuildInfo,
    },
    Failed {
        log: String,
    },
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no backend named {0:?}")]
    BackendUnavailable(String),
    #[error("backend i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("backend produced an invalid artifact: {0}")]
    InvalidOutput(String),
}

/// A build execution strategy.
pub trait BuildBackend: Send + Sync {
    fn name(&self) -> &str;
    fn execute(
        &self,
        recipe: &BuildRecipe,
        env: &BuildEnvironment,
    ) -> Result<BuildOutput, BackendError>;
}

/// Run one build.
pub fn execute_build(
    recipe: &BuildRecipe,
    env: &BuildEnvironment,
    backend: &dyn BuildBackend,
) -> Result<BuildOutput, BackendError> {
    backend.execute(recipe, env)
}

/// Looks up backends by name.
#[derive(Default)]
pub struct BackendRegistry {
    backends: Vec<Box<dyn BuildBackend>>,
}

impl BackendRegistry {
    /// Registry with the mock backend preinstalled.
    pub fn standard() -> BackendRegistry {
        let mut r = BackendRegistry::default();
        r.register(Box::new(MockBackend));
        r
    }

    pub fn register(&mut self, backend: Box<dyn BuildBackend>) {
        self.backends.push(backend);
    }

    pub fn get(&self, name: &str) -> Result<&dyn BuildBackend, BackendError> {
        self.backends
            .iter()
            .map(|b| b.as_ref())
            .find(|b| b.name() == name)
            .ok_or_else(|| BackendError::BackendUnavailable(name.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Mock backend

/// Directives a build phase script may contain, one per line.
#[derive(Debug, PartialEq, Eq)]
enum Directive {
    Fault(FaultKind),
    Fail,
    Note(String),
}

fn parse_directives(script: &str) -> Result<Vec<Directive>, String> {
    let mut out = Vec::new();
    for line in script.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "fail" {
            out.push(Directive::Fail);
        } else if let Some(kind) = line.strip_prefix("fault ") {
            let kind = kind.trim();
            match FaultKind::from_str(kind) {
                Some(f) => out.push(Directive::Fault(f)),
                None => return Err(format!("unknown fault kind {kind:?}")),
            }
        } else {
            out.push(Directive::Note(line.to_string()));
        }
    }
    Ok(out)
}

/// Hermetic in-process builder. See the module docs for its contract.
pub struct MockBackend;

impl MockBackend {
    fn content_seed(recipe: &BuildRecipe, env: &BuildEnvironment) -> Digest {
        let mut seed = String::new();
        seed.push_str(&emit_recipe(recipe));
        seed.push('\n');
        seed.push_str(&env.toolchain_id);
        seed.push('\n');
        for (name, digest) in &env.dependency_digests {
            seed.push_str(&format!("{name}:{digest}\n"));
        }
        Digest::of(seed.as_bytes())
    }
}

impl BuildBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn execute(
        &self,
        recipe: &BuildRecipe,
        env: &BuildEnvironment,
    ) -> Result<BuildOutput, BackendError> {
        let mut log = String::new();
        let mut logln = |s: String| {
            log.push_str(&s);
            log.push('\n');
        };
        logln(format!("==> building {} {}", recipe.name, recipe.version));
        logln(format!("    toolchain {}", env.toolchain_id));
        logln(format!("    builddir {}", env.build_path));

        let directives = match recipe.phase(PhaseName::Build) {
            None => Vec::new(),
            Some(script) => match parse_directives(script) {
                Ok(d) => d,
                Err(e) => {
                    logln(format!("==> ERROR in build phase: {e}"));
                    return Ok(BuildOutput::Failed { log });
                }
            },
        };

        let mut faults = Vec::new();
        for d in &directives {
            match d {
                Directive::Fail => {
                    logln("==> ERROR: build phase requested failure".to_string());
                    return Ok(BuildOutput::Failed { log });
                }
                Directive::Fault(f) => {
                    logln(format!("    injecting fault {}", f.as_str()));
                    faults.push(*f);
                }
                Directive::Note(n) => logln(format!("    {n}")),
            }
        }

        // Deterministic base members.
        let seed = Self::content_seed(recipe, env);
        let name = &recipe.name;
        let mut members = vec![
            TarMember::regular(
                &format!("usr/share/{name}/manifest"),
                format!(
                    "name = {name}\nversion = {}\ntoolchain = {}\n",
                    recipe.version, env.toolchain_id
                )
                .into_bytes(),
            ),
            TarMember {
                name: format!("usr/bin/{name}"),
                mode: 0o755,
                mtime: 0,
                content: format!("binary {seed}\n").into_bytes(),
            },
            TarMember::regular(
                &format!("usr/share/doc/{name}/README"),
                format!("{name} {}\nbuilt with {}\n", recipe.version, env.toolchain_id)
                    .into_bytes(),
            ),
        ];
        for (dep, digest) in &env.dependency_digests {
            members.push(TarMember::regular(
                &format!("usr/lib/{name}/deps/{dep}"),
                format!("{digest}\n").into_bytes(),
            ));
        }

        let sde = env
            .source_date_epoch()
            .map_err(|e| BackendError::InvalidOutput(e.to_string()))?;

        let mut gzip_mtime: u32 = 0;
        for fault in &faults {
            match fault {
                FaultKind::WallClockTimestamp => {
                    // SOURCE_DATE_EPOCH pins exactly this leak.
                    let stamp = match sde {
                        Some(epoch) => epoch,
                        None => env.clock.now().0.max(0) as u64,
                    };
                    gzip_mtime = u32::try_from(stamp).unwrap_or(u32::MAX);
                    logln(format!("    stamping archive header mtime {gzip_mtime}"));
                }
                FaultKind::BuildPathEmbed => {
                    members.push(TarMember::regular(
                        &format!("usr/lib/{name}/source-path"),
                        format!("{}/src/{name}.c\n", env.build_path).into_bytes(),
                    ));
                }
                FaultKind::RandomBytes => {
                    let mut bytes = vec![0u8; 32];
                    rand::rngs::OsRng.fill_bytes(&mut bytes);
                    members.push(TarMember::regular(
                        &format!("usr/lib/{name}/build-id.bin"),
                        bytes,
                    ));
                }
                FaultKind::ArchiveOrder => {}
            }
        }
        // Order shuffling happens after all members exist.
        if faults.contains(&FaultKind::ArchiveOrder) && members.len() > 1 {
            let original: Vec<String> = members.iter().map(|m| m.name.clone()).collect();
            let mut rng = rand::rngs::OsRng;
            loop {
                members.shuffle(&mut rng);
                let now: Vec<String> = members.iter().map(|m| m.name.clone()).collect();
                if now != original {
                    break;
                }
            }
        }

        let tar = write_tar(&members).map_err(|e| BackendError::InvalidOutput(e.to_string()))?;
        let artifact = write_gzip(&tar, gzip_mtime);
        logln(format!("==> packaged {} members", members.len()));

        let resolved = resolve_dependencies(recipe, &recipe.version);
        let installed = resolved
            .iter()
            .map(|dep| {
                let version = match &dep.constraint {
                    Some(c) => Version::parse(c).map_err(|e| {
                        BackendError::InvalidOutput(format!(
                            "dependency {} constraint {c:?} does not resolve: {e}",
                            dep.name
                        ))
                    })?,
                    // Unconstrained dependencies get a fixed stand-in
                    // version in the mock environment.
                    None => Version::parse("1.0-1").unwrap(),
                };
                Ok(InstalledPackage {
                    name: dep.name.clone(),
                    version,
                    arch: "any".to_string(),
                })
            })
            .collect::<Result<Vec<_>, BackendError>>()?;

        let buildinfo = BuildInfo {
            format_version: 1,
            pkgname: recipe.name.clone(),
            pkgver: recipe.version.clone(),
            pkgarch: "any".to_string(),
            builddate: env.clock.now().0.max(0),
            builddir: env.build_path.clone(),
            buildenv: env
                .env_vars
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect(),
            installed,
        };

        Ok(BuildOutput::Completed {
            artifact,
            log,
            buildinfo,
        })
    }
}

// ---------------------------------------------------------------------------
// Command backend

/// Runs an external command in a scratch directory. The recipe is written
/// to `recipe` in canonical form; the command must leave `artifact` (and
/// optionally `buildinfo`) behind. Build metadata is passed through the
/// process environment (`BUILD_PATH`, `TOOLCHAIN_ID`, plus the recipe
/// environment variables).
pub struct CommandBackend {
    pub program: String,
    pub args: Vec<String>,
}

impl BuildBackend for CommandBackend {
    fn name(&self) -> &str {
        "command"
    }

    fn execute(
        &self,
        recipe: &BuildRecipe,
        env: &BuildEnvironment,
    ) -> Result<BuildOutput, BackendError> {
        let scratch = tempfile::tempdir()?;
        std::fs::write(scratch.path().join("recipe"), emit_recipe(recipe))?;
        let output = std::process::Command::new(&self.program)
            .args(&self.args)
            .current_dir(scratch.path())
            .envs(env.env_vars.iter())
            .env("BUILD_PATH", &env.build_path)
            .env("TOOLCHAIN_ID", &env.toolchain_id)
            .output()?;
        let mut log = String::new();
        log.push_str(&String::from_utf8_lossy(&output.stdout));
        log.push_str(&String::from_utf8_lossy(&output.stderr));
        if !output.status.success() {
            return Ok(BuildOutput::Failed { log });
        }
        let artifact = std::fs::read(scratch.path().join("artifact"))?;
        let buildinfo_text = std::fs::read_to_string(scratch.path().join("buildinfo"))?;
        let buildinfo = crate::buildinfo::parse_buildinfo(&buildinfo_text)
            .map_err(|e| BackendError::InvalidOutput(e.to_string()))?;
        Ok(BuildOutput::Completed {
            artifact,
            log,
            buildinfo,
        })
    }
}

// ---------------------------------------------------------------------------
// Rebuild and compare

/// Verdict of a rebuild against the distributed reference artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RebuildVerdict {
    BitIdentical,
    Differs(Vec<DiffFinding>),
    BuildFailed(String),
}

#[derive(Debug)]
pub struct RebuildOutcome {
    pub verdict: RebuildVerdict,
    pub output: BuildOutput,
}

#[derive(Debug, Error)]
pub enum RebuildError {
    #[error("reference artifact is empty")]
    EmptyReference,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Rebuild `recipe` in `env` and compare bits against `reference`.
pub fn rebuild_and_compare(
    reference: &[u8],
    recipe: &BuildRecipe,
    env: &BuildEnvironment,
    backend: &dyn BuildBackend,
) -> Result<RebuildOutcome, RebuildError> {
    if reference.is_empty() {
        return Err(RebuildError::EmptyReference);
    }
    let output = execute_build(recipe, env, backend)?;
    let verdict = match &output {
        BuildOutput::Failed { log } => RebuildVerdict::BuildFailed(log.clone()),
        BuildOutput::Completed { artifact, .. } => {
            if artifact == reference {
                RebuildVerdict::BitIdentical
            } else {
                RebuildVerdict::Differs(compare_artifacts(reference, artifact))
            }
        }
    };
    Ok(RebuildOutcome { verdict, output })
}
