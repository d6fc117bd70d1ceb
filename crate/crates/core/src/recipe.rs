//! Build recipes: the declarative description a package is built from.
//!
//! A recipe is a text file with a header of `key = value` lines followed by
//! named phase blocks:
//!
//! ```text
//! name = certbot
//! version = 2.7.4-1
//! depends = python-acme=${pkgver}, python-cryptography
//! makedepends = python-build
//! dynamic_version = true
//!
//! [phase dynamic_version]
//! git describe --tags
//! [end]
//!
//! [phase package]
//! install -D certbot
//! [end]
//! ```
//!
//! Header keys: `name`, `version`, `depends`, `makedepends`, `checkdepends`,
//! `dynamic_version`. Dependency lists are comma-separated; an item is
//! `name` or `name=constraint` where the constraint is either a concrete
//! version or contains the token `${pkgver}`, which resolves to the version
//! in effect at build time. Phase names: `prepare`, `dynamic_version`,
//! `build`, `check`, `package`; only `package` is mandatory. `#` starts a
//! comment outside phase blocks; inside a block every line is script text
//! until a line reading `[end]`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::version::Version;

/// The substitution token allowed in dependency constraints.
pub const PKGVER_TOKEN: &str = "${pkgver}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseName {
    Prepare,
    DynamicVersion,
    Build,
    Check,
    Package,
}

impl PhaseName {
    pub const ALL: [PhaseName; 5] = [
        PhaseName::Prepare,
        PhaseName::DynamicVersion,
        PhaseName::Build,
        PhaseName::Check,
        PhaseName::Package,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseName::Prepare => "prepare",
            PhaseName::DynamicVersion => "dynamic_version",
            PhaseName::Build => "build",
            PhaseName::Check => "check",
            PhaseName::Package => "package",
        }
    }

    pub fn from_str(s: &str) -> Option<PhaseName> {
        PhaseName::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for PhaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dependency: a package name with an optional version constraint.
///
/// The constraint, when present, is either a concrete version literal or a
/// string containing [`PKGVER_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DependencySpec {
    pub name: String,
    pub constraint: Option<String>,
}

impl DependencySpec {
    pub fn unconstrained(name: &str) -> DependencySpec {
        DependencySpec {
            name: name.to_string(),
            constraint: None,
        }
    }

    pub fn pinned(name: &str, constraint: &str) -> DependencySpec {
        DependencySpec {
            name: name.to_string(),
            constraint: Some(constraint.to_string()),
        }
    }
}

impl fmt::Display for DependencySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.constraint {
            Some(c) => write!(f, "{}={}", self.name, c),
            None => f.write_str(&self.name),
        }
    }
}

/// A parsed recipe. `phases` preserves declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildRecipe {
    pub name: String,
    pub version: Version,
    pub runtime_deps: Vec<DependencySpec>,
    pub build_deps: Vec<DependencySpec>,
    pub check_deps: Vec<DependencySpec>,
    /// True iff the recipe computes its version at build time (and then
    /// carries a `dynamic_version` phase).
    pub has_dynamic_version: bool,
    pub phases: Vec<(PhaseName, String)>,
}

impl BuildRecipe {
    pub fn phase(&self, name: PhaseName) -> Option<&str> {
        self.phases
            .iter()
            .find(|(p, _)| *p == name)
            .map(|(_, s)| s.as_str())
    }

    /// All dependency lists in declaration order:
    /// runtime, then build, then check.
    pub fn all_deps(&self) -> impl Iterator<Item = &DependencySpec> {
        self.runtime_deps
            .iter()
            .chain(self.build_deps.iter())
            .chain(self.check_deps.iter())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecipeError {
    #[error("recipe has no package phase")]
    MissingPackagePhase,
    #[error("malformed field {field:?} at line {line}: {reason}")]
    MalformedField {
        field: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate phase {0:?}")]
    DuplicatePhase(String),
}

fn malformed(field: &str, line: usize, reason: impl Into<String>) -> RecipeError {
    RecipeError::MalformedField {
        field: field.to_string(),
        line,
        reason: reason.into(),
    }
}

/// Package names: lowercase alphanumeric plus `@`, `.`, `_`, `+`, `-`;
/// the first character must be alphanumeric.
pub fn valid_package_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() || b.is_ascii_digit() => {}
        _ => return false,
    }
    name.bytes().all(|b| {
        b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'@' | b'.' | b'_' | b'+' | b'-')
    })
}

fn parse_dependency(item: &str, field: &str, line: usize) -> Result<DependencySpec, RecipeError> {
    let (name, constraint) = match item.split_once('=') {
        Some((n, c)) => (n.trim(), Some(c.trim())),
        None => (item, None),
    };
    if !valid_package_name(name) {
        return Err(malformed(field, line, format!("invalid package name {name:?}")));
    }
    let constraint = match constraint {
        None => None,
        Some("") => return Err(malformed(field, line, "empty version constraint")),
        Some(c) => {
            if c.contains(PKGVER_TOKEN) {
                Some(c.to_string())
            } else if c.contains('$') || c.contains('{') || c.contains('}') {
                return Err(malformed(
                    field,
                    line,
                    format!("only the {PKGVER_TOKEN} variable is allowed in constraints, got {c:?}"),
                ));
            } else {
                Version::parse(c)
                    .map_err(|e| malformed(field, line, format!("bad constraint {c:?}: {e}")))?;
                Some(c.to_string())
            }
        }
    };
    Ok(DependencySpec {
        name: name.to_string(),
        constraint,
    })
}

fn parse_dep_list(value: &str, field: &str, line: usize) -> Result<Vec<DependencySpec>, RecipeError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            if item.is_empty() {
                return Err(malformed(field, line, "empty dependency item"));
            }
            parse_dependency(item, field, line)
        })
        .collect()
}

/// Parse recipe text. See the module docs for the format.
///
/// Missing required header keys are reported against line 0 since there is
/// no line to point at.
pub fn parse_recipe(text: &str) -> Result<BuildRecipe, RecipeError> {
    let mut name: Option<String> = None;
    let mut version: Option<Version> = None;
    let mut runtime_deps: Option<Vec<DependencySpec>> = None;
    let mut build_deps: Option<Vec<DependencySpec>> = None;
    let mut check_deps: Option<Vec<DependencySpec>> = None;
    let mut dynamic_flag: Option<(bool, usize)> = None;
    let mut phases: Vec<(PhaseName, String)> = Vec::new();

    // (phase, opening line, accumulated script lines)
    let mut open_phase: Option<(PhaseName, usize, Vec<String>)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;

        if let Some((phase, start, lines)) = open_phase.as_mut() {
            if raw.trim() == "[end]" {
                if phases.iter().any(|(p, _)| p == phase) {
                    return Err(RecipeError::DuplicatePhase(phase.as_str().to_string()));
                }
                phases.push((*phase, lines.join("\n")));
                let _ = start;
                open_phase = None;
            } else {
                lines.push(raw.to_string());
            }
            continue;
        }

        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }

        if let Some(inner) = trimmed.strip_prefix('[') {
            let Some(inner) = inner.strip_suffix(']') else {
                return Err(malformed("phase", line_no, "unterminated `[` directive"));
            };
            if inner == "end" {
                return Err(malformed("phase", line_no, "[end] outside a phase block"));
            }
            let Some(phase_name) = inner.strip_prefix("phase ") else {
                return Err(malformed("phase", line_no, format!("unknown directive [{inner}]")));
            };
            let Some(phase) = PhaseName::from_str(phase_name.trim()) else {
                return Err(malformed(
                    "phase",
                    line_no,
                    format!("unknown phase name {phase_name:?}"),
                ));
            };
            open_phase = Some((phase, line_no, Vec::new()));
            continue;
        }

        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(malformed("header", line_no, "expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "name" => {
                if name.is_some() {
                    return Err(malformed(key, line_no, "duplicate key"));
                }
                if !valid_package_name(value) {
                    return Err(malformed(key, line_no, format!("invalid package name {value:?}")));
                }
                name = Some(value.to_string());
            }
            "version" => {
                if version.is_some() {
                    return Err(malformed(key, line_no, "duplicate key"));
                }
                let v = Version::parse(value)
                    .map_err(|e| malformed(key, line_no, e.to_string()))?;
                version = Some(v);
            }
            "depends" => {
                if runtime_deps.is_some() {
                    return Err(malformed(key, line_no, "duplicate key"));
                }
                runtime_deps = Some(parse_dep_list(value, key, line_no)?);
            }
            "makedepends" => {
                if build_deps.is_some() {
                    return Err(malformed(key, line_no, "duplicate key"));
                }
                build_deps = Some(parse_dep_list(value, key, line_no)?);
            }
            "checkdepends" => {
                if check_deps.is_some() {
                    return Err(malformed(key, line_no, "duplicate key"));
                }
                check_deps = Some(parse_dep_list(value, key, line_no)?);
            }
            "dynamic_version" => {
                if dynamic_flag.is_some() {
                    return Err(malformed(key, line_no, "duplicate key"));
                }
                let flag = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(malformed(
                            key,
                            line_no,
                            format!("expected true or false, got {other:?}"),
                        ))
                    }
                };
                dynamic_flag = Some((flag, line_no));
            }
            other => {
                return Err(malformed(other, line_no, "unknown header key"));
            }
        }
    }

    if let Some((phase, start, _)) = open_phase {
        return Err(malformed(
            "phase",
            start,
            format!("[phase {}] is never closed with [end]", phase.as_str()),
        ));
    }

    let name = name.ok_or_else(|| malformed("name", 0, "missing required key"))?;
    let version = version.ok_or_else(|| malformed("version", 0, "missing required key"))?;

    if !phases.iter().any(|(p, _)| *p == PhaseName::Package) {
        return Err(RecipeError::MissingPackagePhase);
    }

    let has_phase = phases.iter().any(|(p, _)| *p == PhaseName::DynamicVersion);
    let has_dynamic_version = match dynamic_flag {
        Some((flag, line)) => {
            if flag != has_phase {
                let reason = if flag {
                    "declared true but there is no dynamic_version phase"
                } else {
                    "declared false but a dynamic_version phase is present"
                };
                return Err(malformed("dynamic_version", line, reason));
            }
            flag
        }
        None => has_phase,
    };

    Ok(BuildRecipe {
        name,
        version,
        runtime_deps: runtime_deps.unwrap_or_default(),
        build_deps: build_deps.unwrap_or_default(),
        check_deps: check_deps.unwrap_or_default(),
        has_dynamic_version,
        phases,
    })
}

/// Emit the canonical text for a recipe.
///
/// Canonical form: header keys in fixed order (empty dependency lists and a
/// false `dynamic_version` flag are omitted), one blank line before each
/// phase block, phases in declaration order. `emit(parse(text))` parses to
/// a structurally equal recipe.
pub fn emit_recipe(recipe: &BuildRecipe) -> String {
    let mut out = String::new();
    out.push_str(&format!("name = {}\n", recipe.name));
    out.push_str(&format!("version = {}\n", recipe.version));
    let dep_line = |key: &str, deps: &[DependencySpec]| -> Option<String> {
        if deps.is_empty() {
            return None;
        }
        let items: Vec<String> = deps.iter().map(|d| d.to_string()).collect();
        Some(format!("{key} = {}\n", items.join(", ")))
    };
    if let Some(l) = dep_line("depends", &recipe.runtime_deps) {
        out.push_str(&l);
    }
    if let Some(l) = dep_line("makedepends", &recipe.build_deps) {
        out.push_str(&l);
    }
    if let Some(l) = dep_line("checkdepends", &recipe.check_deps) {
        out.push_str(&l);
    }
    if recipe.has_dynamic_version {
        out.push_str("dynamic_version = true\n");
    }
    for (phase, script) in &recipe.phases {
        out.push('\n');
        out.push_str(&format!("[phase {}]\n", phase.as_str()));
        if !script.is_empty() {
            out.push_str(script);
            out.push('\n');
        }
        out.push_str("[end]\n");
    }
    out
}

/// Substitute `${pkgver}` in every constraint with `version_in_effect` and
/// return all dependencies (runtime, build, check) in declaration order.
pub fn resolve_dependencies(
    recipe: &BuildRecipe,
    version_in_effect: &Version,
) -> Vec<DependencySpec> {
    let v = version_in_effect.to_string();
    recipe
        .all_deps()
        .map(|dep| DependencySpec {
            name: dep.name.clone(),
            constraint: dep
                .constraint
                .as_ref()
                .map(|c| c.replace(PKGVER_TOKEN, &v)),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Lints

pub const RULE_SELF_MUTATING_VERSION: &str = "SELF_MUTATING_VERSION";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub rule_id: String,
    pub severity: Severity,
    pub message: String,
    /// Field path or phase name the finding points at,
    /// e.g. `depends.python-acme`.
    pub location: String,
}

/// A single recipe lint rule, registered by id.
pub trait LintRule {
    fn id(&self) -> &'static str;
    fn check(&self, recipe: &BuildRecipe) -> Vec<LintFinding>;
}

/// Flags recipes whose version is computed at build time while a dependency
/// constraint references `${pkgver}`: re-running such a recipe later can
/// resolve the constraint to a version that does not exist yet or no longer
/// matches what the original build used, so the recipe no longer describes
/// one fixed build.
pub struct SelfMutatingVersionRule;

impl LintRule for SelfMutatingVersionRule {
    fn id(&self) -> &'static str {
        RULE_SELF_MUTATING_VERSION
    }

    fn check(&self, recipe: &BuildRecipe) -> Vec<LintFinding> {
        if !recipe.has_dynamic_version {
            return Vec::new();
        }
        let lists = [
            ("depends", &recipe.runtime_deps),
            ("makedepends", &recipe.build_deps),
            ("checkdepends", &recipe.check_deps),
        ];
        let mut findings = Vec::new();
        for (field, deps) in lists {
            for dep in deps {
                let Some(c) = &dep.constraint else { continue };
                if c.contains(PKGVER_TOKEN) {
                    findings.push(LintFinding {
                        rule_id: RULE_SELF_MUTATING_VERSION.to_string(),
                        severity: Severity::Error,
                        message: format!(
                            "dependency {} pins {PKGVER_TOKEN} while the package version is \
                             computed at build time; a later rebuild resolves the constraint \
                             against a different version than the original build",
                            dep.name
                        ),
                        location: format!("{field}.{}", dep.name),
                    });
                }
            }
        }
        findings
    }
}

/// The registry of known lint rules. Extensible: push additional rules
/// before running.
pub struct LintRegistry {
    rules: Vec<Box<dyn LintRule>>,
}

impl Default for LintRegistry {
    fn default() -> Self {
        LintRegistry {
            rules: vec![Box::new(SelfMutatingVersionRule)],
        }
    }
}

impl LintRegistry {
    pub fn register(&mut self, rule: Box<dyn LintRule>) {
        self.rules.push(rule);
    }

    pub fn rule_ids(&self) -> Vec<&'static str> {
        self.rules.iter().map(|r| r.id()).collect()
    }

    pub fn run(&self, recipe: &BuildRecipe) -> Vec<LintFinding> {
        self.rules.iter().flat_map(|r| r.check(recipe)).collect()
    }
}

/// Run the self-mutating-version rule alone.
pub fn lint_self_mutation(recipe: &BuildRecipe) -> Vec<LintFinding> {
    SelfMutatingVersionRule.check(recipe)
}

/// Run every registered lint rule.
pub fn lint_recipe(recipe: &BuildRecipe) -> Vec<LintFinding> {
    LintRegistry::default().run(recipe)
}
