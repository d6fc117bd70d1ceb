//! Diverse double-compiling: detecting self-perpetuating compiler trojans.
//!
//! Compromising a compiler binary so that it (a) behaves normally on
//! ordinary programs and (b) re-inserts its own compromise whenever it
//! compiles the compiler's source makes the attack invisible to source
//! review and to behavioral testing. This module demonstrates the attack
//! and the countermeasure on a deliberately tiny compiler.
//!
//! The toy language: a *compiler artifact* is a line-rewriting table
//! (`pattern<TAB>replacement`, first match wins, `%1`..`%9` wildcards,
//! replacement `!` drops the line). Its *source language* writes each rule
//! as `pattern -> replacement`, splitting at the **last** ` -> `; lines
//! starting `#` without an arrow are comments; blank lines are skipped.
//! Compiling translates source rules into a fresh table artifact.
//!
//! The trojan is a single extra rule `#!%1 → #!%1` that copies any line
//! starting `#!` through verbatim. The distributed compiler source begins
//! with the innocuous-looking comment line `#!%1<TAB>#!%1` — which a clean
//! compiler drops, but the trojaned compiler copies into its output, where
//! it *is* the trojan rule. The line is its own serialization; the trojan
//! survives recompilation from pristine source forever.
//!
//! Diverse double-compiling breaks the cycle with a second, independent
//! compiler implementation: stage1 = trusted(source), stage2 =
//! stage1(source). For a deterministic compiler, stage2 must equal the
//! binary under test bit for bit; a self-perpetuating trojan cannot
//! survive the detour through the trusted lineage and is exposed.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::digest::Digest;

/// First line of a rewrite-table compiler artifact.
pub const TABLE_MAGIC: &str = "@rewrite-compiler v1@";
/// A file holding exactly this line denotes the engine's built-in
/// reference implementation (the independent trusted lineage).
pub const NATIVE_MAGIC: &str = "@rewrite-compiler v1 native@";

/// Replacement that drops the matched line entirely.
pub const DROP: &str = "!";

/// The compiler's distributed source. Line 1 is the quine comment the
/// trojan recognizes and copies through; a clean compiler ignores it.
pub const COMPILER_SOURCE: &str = concat!(
    "#!%1\t#!%1\n",
    "# rewrite-rule compiler, source form\n",
    "%1 -> %2 -> %1\t%2\n",
    "#%1 -> !\n",
    " -> !\n",
);

/// The clean compiler artifact: the fixpoint of compiling
/// [`COMPILER_SOURCE`] with any clean-lineage compiler.
pub fn clean_compiler() -> Vec<u8> {
    format!("{TABLE_MAGIC}\n%1 -> %2\t%1\t%2\n#%1\t!\n\t!\n").into_bytes()
}

/// The trojaned compiler: the clean table with the self-perpetuating
/// copy-through rule in front. Behaviorally identical to the clean
/// compiler on every program that has no `#!` lines.
pub fn trojaned_compiler() -> Vec<u8> {
    format!("{TABLE_MAGIC}\n#!%1\t#!%1\n%1 -> %2\t%1\t%2\n#%1\t!\n\t!\n").into_bytes()
}

/// The trusted-lineage artifact: the built-in implementation marker.
pub fn native_compiler() -> Vec<u8> {
    format!("{NATIVE_MAGIC}\n").into_bytes()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DdcError {
    #[error("compiler artifact is not valid UTF-8")]
    NotUtf8,
    #[error("missing compiler magic line")]
    MissingMagic,
    #[error("rewrite table has no rules")]
    EmptyTable,
    #[error("rule line {line}: {reason}")]
    MalformedRule { line: usize, reason: String },
    #[error("source line {line}: not a rule, comment, or blank line")]
    SourceSyntax { line: usize },
    #[error("no rule matches input line {line}")]
    NoRuleMatches { line: usize },
    #[error("compiler produced an invalid artifact: {0}")]
    InvalidOutput(String),
}

// ---------------------------------------------------------------------------
// Patterns

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Lit(String),
    Wild(u8),
}

/// Tokenize `%N` wildcards (N in 1..=9); any other `%` is literal.
fn tokenize(s: &str) -> Vec<Part> {
    let mut parts: Vec<Part> = Vec::new();
    let mut lit = String::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '%' {
            if let Some(d @ '1'..='9') = chars.peek().copied() {
                chars.next();
                if !lit.is_empty() {
                    parts.push(Part::Lit(std::mem::take(&mut lit)));
                }
                parts.push(Part::Wild(d as u8 - b'0'));
                continue;
            }
        }
        lit.push(c);
    }
    if !lit.is_empty() {
        parts.push(Part::Lit(lit));
    }
    parts
}

fn wildcards(parts: &[Part]) -> Vec<u8> {
    parts
        .iter()
        .filter_map(|p| match p {
            Part::Wild(n) => Some(*n),
            Part::Lit(_) => None,
        })
        .collect()
}

/// One `pattern → replacement` rewrite rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pattern_text: String,
    replacement_text: String,
    pattern: Vec<Part>,
    replacement: Vec<Part>,
}

impl RewriteRule {
    pub fn parse(pattern: &str, replacement: &str) -> Result<RewriteRule, String> {
        let pat = tokenize(pattern);
        let names = wildcards(&pat);
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(*n) {
                return Err(format!("wildcard %{n} used twice in pattern"));
            }
        }
        let rep = tokenize(replacement);
        for n in wildcards(&rep) {
            if !seen.contains(&n) {
                return Err(format!("replacement references %{n} not in pattern"));
            }
        }
        Ok(RewriteRule {
            pattern_text: pattern.to_string(),
            replacement_text: replacement.to_string(),
            pattern: pat,
            replacement: rep,
        })
    }

    /// Full-line match. Wildcards are greedy: each takes the longest span
    /// permitting the rest of the pattern to match (so `%1 -> %2` splits
    /// at the last arrow).
    fn apply(&self, line: &str) -> Option<String> {
        let mut captures: [Option<&str>; 9] = [None; 9];
        if !match_parts(&self.pattern, line, &mut captures) {
            return None;
        }
        if self.replacement_text == DROP {
            return Some(String::new()); // marker; caller drops via is_drop
        }
        let mut out = String::new();
        for part in &self.replacement {
            match part {
                Part::Lit(l) => out.push_str(l),
                Part::Wild(n) => out.push_str(captures[(*n - 1) as usize].unwrap_or("")),
            }
        }
        Some(out)
    }

    fn is_drop(&self) -> bool {
        self.replacement_text == DROP
    }
}

fn match_parts<'a>(parts: &[Part], text: &'a str, captures: &mut [Option<&'a str>; 9]) -> bool {
    match parts.first() {
        None => text.is_empty(),
        Some(Part::Lit(lit)) => match text.strip_prefix(lit.as_str()) {
            Some(rest) => match_parts(&parts[1..], rest, captures),
            None => false,
        },
        Some(Part::Wild(n)) => {
            // Greedy: longest capture first. Iterate over char boundaries
            // from the end of the text backwards.
            let idx = (*n - 1) as usize;
            let boundaries: Vec<usize> = text
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(text.len()))
                .collect();
            for &cut in boundaries.iter().rev() {
                captures[idx] = Some(&text[..cut]);
                if match_parts(&parts[1..], &text[cut..], captures) {
                    return true;
                }
            }
            captures[idx] = None;
            false
        }
    }
}

// ---------------------------------------------------------------------------
// Compiler artifacts

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteTable {
    pub rules: Vec<RewriteRule>,
}

impl RewriteTable {
    pub fn to_text(&self) -> String {
        let mut out = format!("{TABLE_MAGIC}\n");
        for r in &self.rules {
            out.push_str(&format!("{}\t{}\n", r.pattern_text, r.replacement_text));
        }
        out
    }

    /// Rewrite every input line by the first matching rule.
    pub fn execute(&self, input: &str) -> Result<String, DdcError> {
        let mut out = String::new();
        for (i, line) in input.lines().enumerate() {
            let mut matched = false;
            for rule in &self.rules {
                if let Some(result) = rule.apply(line) {
                    if !rule.is_drop() {
                        out.push_str(&result);
                        out.push('\n');
                    }
                    matched = true;
                    break;
                }
            }
            if !matched {
                return Err(DdcError::NoRuleMatches { line: i + 1 });
            }
        }
        Ok(out)
    }
}

/// A compiler artifact: either the built-in reference implementation or a
/// rewrite table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Compiler {
    Native,
    Table(RewriteTable),
}

impl Compiler {
    pub fn kind(&self) -> &'static str {
        match self {
            Compiler::Native => "native",
            Compiler::Table(_) => "table",
        }
    }
}

impl fmt::Display for Compiler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

/// Parse a compiler artifact from its bytes.
pub fn parse_compiler(bytes: &[u8]) -> Result<Compiler, DdcError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DdcError::NotUtf8)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(NATIVE_MAGIC) => {
            if lines.next().is_some() {
                return Err(DdcError::MalformedRule {
                    line: 2,
                    reason: "native marker must be the whole artifact".to_string(),
                });
            }
            Ok(Compiler::Native)
        }
        Some(TABLE_MAGIC) => {
            let mut rules = Vec::new();
            for (i, line) in lines.enumerate() {
                let line_no = i + 2;
                let (pat, rep) = line.split_once('\t').ok_or_else(|| DdcError::MalformedRule {
                    line: line_no,
                    reason: "expected pattern<TAB>replacement".to_string(),
                })?;
                let rule =
                    RewriteRule::parse(pat, rep).map_err(|reason| DdcError::MalformedRule {
                        line: line_no,
                        reason,
                    })?;
                rules.push(rule);
            }
            if rules.is_empty() {
                return Err(DdcError::EmptyTable);
            }
            Ok(Compiler::Table(RewriteTable { rules }))
        }
        _ => Err(DdcError::MissingMagic),
    }
}

/// The built-in reference implementation of the source language: rules
/// split at the last ` -> `, `#` lines without an arrow are comments,
/// blank lines are skipped.
pub fn native_compile(source: &str) -> Result<String, DdcError> {
    let mut out = format!("{TABLE_MAGIC}\n");
    for (i, line) in source.lines().enumerate() {
        if let Some((pat, rep)) = line.rsplit_once(" -> ") {
            out.push_str(&format!("{pat}\t{rep}\n"));
        } else if line.starts_with('#') || line.is_empty() {
            continue;
        } else {
            return Err(DdcError::SourceSyntax { line: i + 1 });
        }
    }
    Ok(out)
}

/// Compile a source program into a table artifact, validating the output.
pub fn compile(compiler: &Compiler, source: &str) -> Result<Vec<u8>, DdcError> {
    let text = match compiler {
        Compiler::Native => native_compile(source)?,
        Compiler::Table(table) => {
            let body = table.execute(source)?;
            format!("{TABLE_MAGIC}\n{body}")
        }
    };
    parse_compiler(text.as_bytes()).map_err(|e| DdcError::InvalidOutput(e.to_string()))?;
    Ok(text.into_bytes())
}

// ---------------------------------------------------------------------------
// The check itself

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdcResult {
    pub pass: bool,
    pub under_test_digest: Digest,
    pub stage1_digest: Digest,
    pub stage2_digest: Digest,
    pub transcript: String,
}

/// Diverse double-compile `source` against the compiler under test.
///
/// stage1 = trusted(source); stage2 = stage1(source). The check passes iff
/// stage2 is bit-identical to the artifact under test.
pub fn ddc_check(under_test: &[u8], source: &str, trusted: &[u8]) -> Result<DdcResult, DdcError> {
    let trusted_compiler = parse_compiler(trusted)?;
    parse_compiler(under_test)?; // must at least be a well-formed artifact
    let stage1 = compile(&trusted_compiler, source)?;
    let stage1_compiler = parse_compiler(&stage1)?;
    let stage2 = compile(&stage1_compiler, source)?;

    let under_test_digest = Digest::of(under_test);
    let stage1_digest = Digest::of(&stage1);
    let stage2_digest = Digest::of(&stage2);
    let pass = stage2_digest == under_test_digest;

    let transcript = format!(
        "trusted:    {} ({})\n\
         under test: {}\n\
         stage1 = trusted(source):  {}\n\
         stage2 = stage1(source):   {}\n\
         verdict: {}\n",
        Digest::of(trusted),
        trusted_compiler.kind(),
        under_test_digest,
        stage1_digest,
        stage2_digest,
        if pass {
            "PASS (stage2 is bit-identical to the artifact under test)"
        } else {
            "FAIL (stage2 differs from the artifact under test)"
        },
    );

    Ok(DdcResult {
        pass,
        under_test_digest,
        stage1_digest,
        stage2_digest,
        transcript,
    })
}
