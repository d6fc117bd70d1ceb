//! The build-environment manifest recorded for every produced artifact.
//!
//! A manifest is a key-value text document (`key = value`, one per line)
//! that pins what went into a build: the package identity, when and where
//! it was built, the relevant environment variables, and the exact set of
//! packages installed in the build environment. Verifiers replay builds
//! from this record and cross-check it against the recipe.
//!
//! Keys: `format_version`, `pkgname`, `pkgver`, `pkgarch`, `builddate`,
//! `builddir`, `buildenv` (repeatable), `installed` (repeatable). An
//! `installed` entry is `name-ver-rel-arch`, parsed from the right since
//! names may contain `-`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recipe::{resolve_dependencies, valid_package_name, BuildRecipe};
use crate::version::Version;

/// One `installed` entry: an exact package that was present in the build
/// environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstalledPackage {
    pub name: String,
    pub version: Version,
    pub arch: String,
}

impl InstalledPackage {
    /// Parse `name-ver-rel-arch`. Split from the right: the final `-`
    /// separates the architecture, the one before it the release counter.
    pub fn parse(s: &str) -> Option<InstalledPackage> {
        let (rest, arch) = s.rsplit_once('-')?;
        let (rest, rel) = rest.rsplit_once('-')?;
        let (name, ver) = rest.rsplit_once('-')?;
        if !valid_package_name(name) || !valid_arch(arch) {
            return None;
        }
        let version = Version::parse(&format!("{ver}-{rel}")).ok()?;
        Some(InstalledPackage {
            name: name.to_string(),
            version,
            arch: arch.to_string(),
        })
    }
}

impl fmt::Display for InstalledPackage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.name, self.version, self.arch)
    }
}

fn valid_arch(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub format_version: u32,
    pub pkgname: String,
    pub pkgver: Version,
    pub pkgarch: String,
    /// Seconds since the Unix epoch; never negative.
    pub builddate: i64,
    /// Absolute path the package was built under.
    pub builddir: String,
    /// `NAME=value` pairs, in recorded order.
    pub buildenv: Vec<String>,
    pub installed: Vec<InstalledPackage>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildInfoError {
    #[error("unknown key {key:?} at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("missing required key {0:?}")]
    MissingRequiredKey(String),
}

fn bad_line(line: usize, reason: impl Into<String>) -> BuildInfoError {
    BuildInfoError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

pub fn parse_buildinfo(text: &str) -> Result<BuildInfo, BuildInfoError> {
    let mut scalars: BTreeMap<&'static str, (String, usize)> = BTreeMap::new();
    let mut buildenv: Vec<String> = Vec::new();
    let mut installed: Vec<InstalledPackage> = Vec::new();
    let mut installed_names: BTreeSet<String> = BTreeSet::new();

    const SCALAR_KEYS: [&str; 6] = [
        "format_version",
        "pkgname",
        "pkgver",
        "pkgarch",
        "builddate",
        "builddir",
    ];

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let Some((key, value)) = raw.split_once('=') else {
            return Err(bad_line(line, "expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "buildenv" => {
                if value.is_empty() || !value.contains('=') {
                    return Err(bad_line(line, "buildenv entries are NAME=value"));
                }
                buildenv.push(value.to_string());
            }
            "installed" => {
                let Some(pkg) = InstalledPackage::parse(value) else {
                    return Err(bad_line(
                        line,
                        format!("installed entries are name-ver-rel-arch, got {value:?}"),
                    ));
                };
                if !installed_names.insert(pkg.name.clone()) {
                    return Err(bad_line(
                        line,
                        format!("package {:?} installed twice", pkg.name),
                    ));
                }
                installed.push(pkg);
            }
            k if SCALAR_KEYS.contains(&k) => {
                let k = SCALAR_KEYS[SCALAR_KEYS.iter().position(|s| *s == k).unwrap()];
                if scalars.insert(k, (value.to_string(), line)).is_some() {
                    return Err(bad_line(line, format!("duplicate key {k:?}")));
                }
            }
            other => {
                return Err(BuildInfoError::UnknownKey {
                    key: other.to_string(),
                    line,
                });
            }
        }
    }

    let take = |key: &str| -> Result<(String, usize), BuildInfoError> {
        scalars
            .get(key)
            .cloned()
            .ok_or_else(|| BuildInfoError::MissingRequiredKey(key.to_string()))
    };

    let (fv, fv_line) = take("format_version")?;
    let format_version: u32 = fv
        .parse()
        .map_err(|_| bad_line(fv_line, "format_version must be a whole number"))?;

    let (pkgname, name_line) = take("pkgname")?;
    if !valid_package_name(&pkgname) {
        return Err(bad_line(name_line, format!("invalid package name {pkgname:?}")));
    }

    let (pv, pv_line) = take("pkgver")?;
    let pkgver =
        Version::parse(&pv).map_err(|e| bad_line(pv_line, format!("bad pkgver: {e}")))?;

    let (pkgarch, arch_line) = take("pkgarch")?;
    if !valid_arch(&pkgarch) {
        return Err(bad_line(arch_line, format!("invalid pkgarch {pkgarch:?}")));
    }

    let (bd, bd_line) = take("builddate")?;
    let builddate: i64 = bd
        .parse()
        .map_err(|_| bad_line(bd_line, "builddate must be a whole number"))?;
    if builddate < 0 {
        return Err(bad_line(bd_line, "builddate must not be negative"));
    }

    let (builddir, dir_line) = take("builddir")?;
    if !builddir.starts_with('/') {
        return Err(bad_line(dir_line, "builddir must be an absolute path"));
    }

    Ok(BuildInfo {
        format_version,
        pkgname,
        pkgver,
        pkgarch,
        builddate,
        builddir,
        buildenv,
        installed,
    })
}

/// Emit the canonical text for a manifest: scalar keys in fixed order, then
/// `buildenv` lines in recorded order, then `installed` lines sorted by
/// package name. Two structurally different manifests never emit the same
/// text.
pub fn emit_buildinfo(info: &BuildInfo) -> String {
    let mut out = String::new();
    out.push_str(&format!("format_version = {}\n", info.format_version));
    out.push_str(&format!("pkgname = {}\n", info.pkgname));
    out.push_str(&format!("pkgver = {}\n", info.pkgver));
    out.push_str(&format!("pkgarch = {}\n", info.pkgarch));
    out.push_str(&format!("builddate = {}\n", info.builddate));
    out.push_str(&format!("builddir = {}\n", info.builddir));
    for env in &info.buildenv {
        out.push_str(&format!("buildenv = {env}\n"));
    }
    let mut installed: Vec<&InstalledPackage> = info.installed.iter().collect();
    installed.sort_by(|a, b| a.name.cmp(&b.name));
    for pkg in installed {
        out.push_str(&format!("installed = {pkg}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// Consistency check between a recipe and a recorded manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyKind {
    /// A constrained dependency was installed at a different version than
    /// the recipe requires.
    DepVersionMismatch,
    /// A recipe dependency does not appear in the installed set.
    MissingDep,
    /// An installed package is not among the recipe's dependencies.
    ExtraDep,
}

impl ConsistencyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsistencyKind::DepVersionMismatch => "DEP_VERSION_MISMATCH",
            ConsistencyKind::MissingDep => "MISSING_DEP",
            ConsistencyKind::ExtraDep => "EXTRA_DEP",
        }
    }
}

impl fmt::Display for ConsistencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One inconsistency between the recipe's resolved dependencies and the
/// manifest's installed set. For a version mismatch, `required` and
/// `recorded` are both present and differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyFinding {
    pub kind: ConsistencyKind,
    pub dependency: String,
    pub required: Option<Version>,
    pub recorded: Option<Version>,
}

impl fmt::Display for ConsistencyFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind, self.dependency)?;
        if let Some(r) = &self.required {
            write!(f, " required={r}")?;
        }
        if let Some(r) = &self.recorded {
            write!(f, " recorded={r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("manifest is for package {manifest:?}, recipe is for {recipe:?}")]
    NameMismatch { recipe: String, manifest: String },
    #[error("unresolved constraint {0:?} (resolve dependencies first)")]
    UnresolvedConstraint(String),
}

/// Cross-check a recipe against a recorded manifest.
///
/// The recipe's dependencies are resolved against `resolved_against` (the
/// version the constraint substitution should use — for a faithful check of
/// what a rebuild would install today, the current recipe version). Then:
///
/// - a constrained dependency must be installed at exactly the required
///   version ([`ConsistencyKind::DepVersionMismatch`] otherwise),
/// - every dependency must be installed at all
///   ([`ConsistencyKind::MissingDep`]),
/// - every installed package must be some recipe dependency
///   ([`ConsistencyKind::ExtraDep`]).
///
/// Findings are returned in dependency declaration order, then extra
/// packages sorted by name.
pub fn check_consistency(
    recipe: &BuildRecipe,
    resolved_against: &Version,
    info: &BuildInfo,
) -> Result<Vec<ConsistencyFinding>, ConsistencyError> {
    if recipe.name != info.pkgname {
        return Err(ConsistencyError::NameMismatch {
            recipe: recipe.name.clone(),
            manifest: info.pkgname.clone(),
        });
    }
    let resolved = resolve_dependencies(recipe, resolved_against);
    let installed: BTreeMap<&str, &InstalledPackage> = info
        .installed
        .iter()
        .map(|p| (p.name.as_str(), p))
        .collect();

    let mut findings = Vec::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for dep in &resolved {
        seen.insert(dep.name.as_str());
        let required = match &dep.constraint {
            Some(c) => Some(
                Version::parse(c)
                    .map_err(|_| ConsistencyError::UnresolvedConstraint(c.clone()))?,
            ),
            None => None,
        };
        match installed.get(dep.name.as_str()) {
            None => findings.push(ConsistencyFinding {
                kind: ConsistencyKind::MissingDep,
                dependency: dep.name.clone(),
                required,
                recorded: None,
            }),
            Some(pkg) => {
                if let Some(required) = required {
                    if required != pkg.version {
                        findings.push(ConsistencyFinding {
                            kind: ConsistencyKind::DepVersionMismatch,
                            dependency: dep.name.clone(),
                            required: Some(required),
                            recorded: Some(pkg.version.clone()),
                        });
                    }
                }
            }
        }
    }
    for (name, pkg) in &installed {
        if !seen.contains(name) {
            findings.push(ConsistencyFinding {
                kind: ConsistencyKind::ExtraDep,
                dependency: name.to_string(),
                required: None,
                recorded: Some(pkg.version.clone()),
            });
        }
    }
    Ok(findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recipe::parse_recipe;

    const MANIFEST: &str = "\
format_version = 1
pkgname = hello
pkgver = 1.0-1
pkgarch = x86_64
builddate = 1700000000
builddir = /build/hello
buildenv = CC=gcc
buildenv = LANG=C
installed = libgreet-2.1-1-x86_64
installed = terminfo-6.4-2-any
";

    #[test]
    fn parses_manifest() {
        let info = parse_buildinfo(MANIFEST).unwrap();
        assert_eq!(info.format_version, 1);
        assert_eq!(info.pkgname, "hello");
        assert_eq!(info.pkgver.to_string(), "1.0-1");
        assert_eq!(info.builddate, 1_700_000_000);
        assert_eq!(info.buildenv, vec!["CC=gcc", "LANG=C"]);
        assert_eq!(info.installed.len(), 2);
        assert_eq!(info.installed[0].name, "libgreet");
        assert_eq!(info.installed[0].version.to_string(), "2.1-1");
        assert_eq!(info.installed[0].arch, "x86_64");
    }

    #[test]
    fn installed_entries_parse_from_the_right() {
        let p = InstalledPackage::parse("python-acme-2.7.3-1-any").unwrap();
        assert_eq!(p.name, "python-acme");
        assert_eq!(p.version.to_string(), "2.7.3-1");
        assert_eq!(p.arch, "any");
        // Epoch survives the round trip.
        let q = InstalledPackage::parse("tzdata-1:2024a-1-any").unwrap();
        assert_eq!(q.version.to_string(), "1:2024a-1");
        assert_eq!(q.to_string(), "tzdata-1:2024a-1-any");
        assert_eq!(InstalledPackage::parse(&q.to_string()).unwrap(), q);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let unknown = format!("{MANIFEST}mystery = 1\n");
        assert!(matches!(
            parse_buildinfo(&unknown),
            Err(BuildInfoError::UnknownKey { line: 11, .. })
        ));
        let dup = format!("{MANIFEST}pkgname = hello\n");
        assert!(matches!(
            parse_buildinfo(&dup),
            Err(BuildInfoError::MalformedLine { line: 11, .. })
        ));
    }

    #[test]
    fn rejects_duplicate_installed_package() {
        let dup = format!("{MANIFEST}installed = libgreet-3.0-1-x86_64\n");
        assert!(matches!(
            parse_buildinfo(&dup),
            Err(BuildInfoError::MalformedLine { line: 11, .. })
        ));
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = MANIFEST.replace("builddir = /build/hello\n", "");
        assert_eq!(
            parse_buildinfo(&text),
            Err(BuildInfoError::MissingRequiredKey("builddir".into()))
        );
    }

    #[test]
    fn validates_scalar_values() {
        assert!(parse_buildinfo(&MANIFEST.replace("1700000000", "-5")).is_err());
        assert!(parse_buildinfo(&MANIFEST.replace("/build/hello", "relative/path")).is_err());
        assert!(parse_buildinfo(&MANIFEST.replace("format_version = 1", "format_version = x")).is_err());
    }

    #[test]
    fn emit_is_canonical_and_round_trips() {
        let info = parse_buildinfo(MANIFEST).unwrap();
        let emitted = emit_buildinfo(&info);
        assert_eq!(parse_buildinfo(&emitted).unwrap(), info);
        // Installed lines come out sorted even if recorded out of order.
        let mut shuffled = info.clone();
        shuffled.installed.reverse();
        assert_eq!(emit_buildinfo(&shuffled), emitted);
    }

    fn certbot_like(version: &str, installed_acme: &str) -> (BuildRecipe, BuildInfo) {
        let recipe = parse_recipe(&format!(
            "name = certbot\nversion = {version}\ndepends = python-acme=${{pkgver}}, python-cryptography\ndynamic_version = true\n\n[phase dynamic_version]\ngit describe\n[end]\n\n[phase package]\ninstall\n[end]\n"
        ))
        .unwrap();
        let info = parse_buildinfo(&format!(
            "format_version = 1\npkgname = certbot\npkgver = {version}\npkgarch = any\nbuilddate = 1700000000\nbuilddir = /build\ninstalled = python-acme-{installed_acme}-any\ninstalled = python-cryptography-41.0-1-any\n"
        ))
        .unwrap();
        (recipe, info)
    }

    #[test]
    fn detects_version_mismatch_on_constrained_dep() {
        let (recipe, info) = certbot_like("2.7.4-1", "2.7.3-1");
        let findings = check_consistency(&recipe, &recipe.version, &info).unwrap();
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].kind, ConsistencyKind::DepVersionMismatch);
        assert_eq!(findings[0].dependency, "python-acme");
        assert_eq!(findings[0].required.as_ref().unwrap().to_string(), "2.7.4-1");
        assert_eq!(findings[0].recorded.as_ref().unwrap().to_string(), "2.7.3-1");
    }

    #[test]
    fn consistent_manifest_yields_no_findings() {
        let (recipe, info) = certbot_like("2.7.4-1", "2.7.4-1");
        assert!(check_consistency(&recipe, &recipe.version, &info)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn detects_missing_and_extra() {
        let (recipe, mut info) = certbot_like("2.7.4-1", "2.7.4-1");
        info.installed.retain(|p| p.name != "python-cryptography");
        info.installed.push(InstalledPackage {
            name: "stray".into(),
            version: Version::parse("9-9").unwrap(),
            arch: "any".into(),
        });
        let findings = check_consistency(&recipe, &recipe.version, &info).unwrap();
        assert_eq!(findings.len(), 2);
        assert_eq!(findings[0].kind, ConsistencyKind::MissingDep);
        assert_eq!(findings[0].dependency, "python-cryptography");
        assert_eq!(findings[1].kind, ConsistencyKind::ExtraDep);
        assert_eq!(findings[1].dependency, "stray");
    }

    #[test]
    fn name_mismatch_is_a_precondition_failure() {
        let (recipe, mut info) = certbot_like("2.7.4-1", "2.7.4-1");
        info.pkgname = "other".into();
        assert!(matches!(
            check_consistency(&recipe, &recipe.version, &info),
            Err(ConsistencyError::NameMismatch { .. })
        ));
    }

    #[test]
    fn unconstrained_deps_only_need_presence() {
        let recipe = parse_recipe(
            "name = x\nversion = 1-1\ndepends = anyver\n\n[phase package]\nx\n[end]\n",
        )
        .unwrap();
        let info = parse_buildinfo(
            "format_version = 1\npkgname = x\npkgver = 1-1\npkgarch = any\nbuilddate = 0\nbuilddir = /b\ninstalled = anyver-42.0-3-any\n",
        )
        .unwrap();
        assert!(check_consistency(&recipe, &recipe.version, &info)
            .unwrap()
            .is_empty());
    }
}
