//! Structural artifact diffing and root-cause classification.
//!
//! When a rebuild is not bit-for-bit identical, the interesting question is
//! *why*. This module unpacks both artifacts into container trees (gzip
//! streams, tar archives, raw leaves), aligns the trees, and classifies
//! every difference into one of four root-cause categories:
//!
//! - `TIMESTAMP`: an embedded build time (gzip header MTIME, tar member
//!   mtime),
//! - `RANDOMNESS`: nondeterministic content or archive member ordering,
//! - `PATH`: an embedded build directory,
//! - `UNCLASSIFIED`: everything the rules cannot explain.
//!
//! The classifier never stays silent: if two artifacts differ at all, at
//! least one finding is produced — differences no rule explains fall back
//! to `UNCLASSIFIED`, including the case where a container's bytes differ
//! while its decoded structure is identical (e.g. two compressors encoding
//! the same payload differently).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::archive::{is_gzip, is_tar, read_gzip, read_tar, GZIP_MTIME_RANGE, MAX_DECODED_SIZE};

/// Containers are unpacked at most this deep; anything deeper is treated
/// as an opaque leaf.
pub const MAX_NESTING_DEPTH: usize = 8;

/// Minimum length for a printable run to be considered a path candidate.
const MIN_PATH_RUN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Timestamp,
    Randomness,
    Path,
    Unclassified,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Timestamp,
        Category::Randomness,
        Category::Path,
        Category::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Timestamp => "TIMESTAMP",
            Category::Randomness => "RANDOMNESS",
            Category::Path => "PATH",
            Category::Unclassified => "UNCLASSIFIED",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decoded values and byte ranges backing a finding, for each side where
/// they are meaningful. Ranges are `[start, end)` offsets into the bytes
/// of the node the finding is located at.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub a_value: Option<String>,
    pub b_value: Option<String>,
    pub a_range: Option<(u64, u64)>,
    pub b_range: Option<(u64, u64)>,
}

impl Evidence {
    fn values(a: impl Into<String>, b: impl Into<String>) -> Evidence {
        Evidence {
            a_value: Some(a.into()),
            b_value: Some(b.into()),
            ..Evidence::default()
        }
    }
}

/// One classified difference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffFinding {
    /// Node path, e.g. `/payload.tar/member:usr/bin/tool`.
    pub location: String,
    pub category: Category,
    /// Stable rule identifier, e.g. `gzip-header-mtime`.
    pub detail: String,
    pub evidence: Evidence,
    pub summary: String,
}

// ---------------------------------------------------------------------------
// Unpacking

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeFormat {
    Raw,
    Gzip,
    Tar,
}

impl NodeFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeFormat::Raw => "raw",
            NodeFormat::Gzip => "gzip",
            NodeFormat::Tar => "tar",
        }
    }
}

/// One node of the unpacked container tree. `bytes` always holds the
/// node's own byte sequence (decompressed for a gzip payload child, the
/// member content for tar children); a leaf has no children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactNode {
    pub path: String,
    pub format: NodeFormat,
    /// Namespaced metadata: `gzip:mtime`, `gzip:flg`, `gzip:xfl`,
    /// `gzip:os`, `tar:name`, `tar:mode`, `tar:mtime`, `tar:size`.
    pub metadata: BTreeMap<String, String>,
    pub bytes: Vec<u8>,
    pub children: Vec<ArtifactNode>,
    /// Structural problems encountered while unpacking this node
    /// (corrupt container, depth bound); the node degrades to a raw leaf.
    pub warnings: Vec<String>,
}

impl ArtifactNode {
    fn leaf(path: String, bytes: Vec<u8>) -> ArtifactNode {
        ArtifactNode {
            path,
            format: NodeFormat::Raw,
            metadata: BTreeMap::new(),
            bytes,
            children: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

fn join_path(parent: &str, child: &str) -> String {
    if parent == "/" {
        format!("/{child}")
    } else {
        format!("{parent}/{child}")
    }
}

/// Unpack an artifact into its container tree. Never fails: whatever
/// cannot be decoded (corrupt container, depth bound exceeded) becomes a
/// raw leaf carrying a warning.
pub fn unpack_artifact(bytes: &[u8]) -> ArtifactNode {
    unpack_node(bytes.to_vec(), "/".to_string(), 0)
}

fn unpack_node(bytes: Vec<u8>, path: String, depth: usize) -> ArtifactNode {
    if depth >= MAX_NESTING_DEPTH {
        let mut node = ArtifactNode::leaf(path, bytes);
        node.warnings
            .push(format!("nesting depth bound {MAX_NESTING_DEPTH} reached"));
        return node;
    }
    if is_gzip(&bytes) {
        match read_gzip(&bytes, MAX_DECODED_SIZE) {
            Ok(gz) => {
                let child_name = if is_tar(&gz.payload) {
                    "payload.tar"
                } else {
                    "payload"
                };
                let child_path = join_path(&path, child_name);
                let child = unpack_node(gz.payload, child_path, depth + 1);
                let mut metadata = BTreeMap::new();
                metadata.insert("gzip:mtime".to_string(), gz.mtime.to_string());
                metadata.insert("gzip:flg".to_string(), gz.flg.to_string());
                metadata.insert("gzip:xfl".to_string(), gz.xfl.to_string());
                metadata.insert("gzip:os".to_string(), gz.os.to_string());
                return ArtifactNode {
                    path,
                    format: NodeFormat::Gzip,
                    metadata,
                    bytes,
                    children: vec![child],
                    warnings: Vec::new(),
                };
            }
            Err(e) => {
                let mut node = ArtifactNode::leaf(path, bytes);
                node.warnings.push(format!("corrupt gzip container: {e}"));
                return node;
            }
        }
    }
    if is_tar(&bytes) {
        match read_tar(&bytes) {
            Ok(members) => {
                let mut occurrence: BTreeMap<String, usize> = BTreeMap::new();
                let mut children = Vec::with_capacity(members.len());
                for m in members {
                    let occ = occurrence.entry(m.name.clone()).or_insert(0);
                    *occ += 1;
                    let suffix = if *occ > 1 {
                        format!("#{occ}")
                    } else {
                        String::new()
                    };
                    let child_path = join_path(&path, &format!("member:{}{suffix}", m.name));
                    let size = m.content.len();
                    let mut child = unpack_node(m.content, child_path, depth + 1);
                    child.metadata.insert("tar:name".to_string(), m.name);
                    child
                        .metadata
                        .insert("tar:mode".to_string(), format!("{:o}", m.mode));
                    child
                        .metadata
                        .insert("tar:mtime".to_string(), m.mtime.to_string());
                    child.metadata.insert("tar:size".to_string(), size.to_string());
                    children.push(child);
                }
                return ArtifactNode {
                    path,
                    format: NodeFormat::Tar,
                    metadata: BTreeMap::new(),
                    bytes,
                    children,
                    warnings: Vec::new(),
                };
            }
            Err(e) => {
                let mut node = ArtifactNode::leaf(path, bytes);
                node.warnings.push(format!("corrupt tar container: {e}"));
                return node;
            }
        }
    }
    ArtifactNode::leaf(path, bytes)
}

// ---------------------------------------------------------------------------
// Comparison

/// Compare two artifacts and classify every difference.
///
/// Returns no findings iff the artifacts are byte-identical. Findings are
/// sorted by location, then rule, then summary.
pub fn compare_artifacts(a: &[u8], b: &[u8]) -> Vec<DiffFinding> {
    if a == b {
        return Vec::new();
    }
    let na = unpack_artifact(a);
    let nb = unpack_artifact(b);
    let mut findings = Vec::new();
    walk(&na, &nb, &mut findings);
    findings.sort_by(|x, y| {
        (&x.location, &x.detail, &x.summary).cmp(&(&y.location, &y.detail, &y.summary))
    });
    findings
}

fn walk(a: &ArtifactNode, b: &ArtifactNode, out: &mut Vec<DiffFinding>) {
    let before = out.len();

    compare_metadata(a, b, out);

    if a.format != b.format {
        out.push(DiffFinding {
            location: a.path.clone(),
            category: Category::Unclassified,
            detail: "format-mismatch".to_string(),
            evidence: Evidence::values(a.format.as_str(), b.format.as_str()),
            summary: format!(
                "container format changed from {} to {}",
                a.format.as_str(),
                b.format.as_str()
            ),
        });
        return;
    }

    match a.format {
        NodeFormat::Gzip => {
            // A gzip node has exactly one child: its payload.
            if let (Some(ca), Some(cb)) = (a.children.first(), b.children.first()) {
                walk(ca, cb, out);
            }
        }
        NodeFormat::Tar => {
            compare_tar_members(a, b, out);
        }
        NodeFormat::Raw => {
            if a.bytes != b.bytes {
                classify_leaf(a, b, out);
            }
        }
    }

    // Completeness guard: bytes differ but nothing in this subtree
    // explained it (identical decoded structure, differing encodings; or
    // differing padding the structural parse does not surface).
    if out.len() == before && a.bytes != b.bytes {
        let first = a
            .bytes
            .iter()
            .zip(b.bytes.iter())
            .position(|(x, y)| x != y)
            .unwrap_or_else(|| a.bytes.len().min(b.bytes.len()));
        out.push(DiffFinding {
            location: a.path.clone(),
            category: Category::Unclassified,
            detail: "opaque-difference".to_string(),
            evidence: Evidence {
                a_value: Some(format!("{} bytes", a.bytes.len())),
                b_value: Some(format!("{} bytes", b.bytes.len())),
                a_range: Some((first as u64, a.bytes.len() as u64)),
                b_range: Some((first as u64, b.bytes.len() as u64)),
            },
            summary: "bytes differ but the decoded structure is identical".to_string(),
        });
    }
}

fn compare_metadata(a: &ArtifactNode, b: &ArtifactNode, out: &mut Vec<DiffFinding>) {
    let keys: std::collections::BTreeSet<&String> =
        a.metadata.keys().chain(b.metadata.keys()).collect();
    for key in keys {
        let va = a.metadata.get(key);
        let vb = b.metadata.get(key);
        if va == vb {
            continue;
        }
        let (Some(va), Some(vb)) = (va, vb) else {
            // One side lacks the key entirely: format difference, reported
            // by the format rule or the member alignment.
            continue;
        };
        match key.as_str() {
            "gzip:mtime" => out.push(DiffFinding {
                location: a.path.clone(),
                category: Category::Timestamp,
                detail: "gzip-header-mtime".to_string(),
                evidence: Evidence {
                    a_value: Some(va.clone()),
                    b_value: Some(vb.clone()),
                    a_range: Some(GZIP_MTIME_RANGE),
                    b_range: Some(GZIP_MTIME_RANGE),
                },
                summary: format!("gzip header stores modification time {va} vs {vb}"),
            }),
            "tar:mtime" => out.push(DiffFinding {
                location: a.path.clone(),
                category: Category::Timestamp,
                detail: "tar-member-mtime".to_string(),
                evidence: Evidence::values(va.clone(), vb.clone()),
                summary: format!("archive member modification time {va} vs {vb}"),
            }),
            "tar:mode" => out.push(DiffFinding {
                location: a.path.clone(),
                category: Category::Unclassified,
                detail: "tar-member-mode".to_string(),
                evidence: Evidence::values(va.clone(), vb.clone()),
                summary: format!("archive member mode {va} vs {vb}"),
            }),
            "gzip:flg" | "gzip:xfl" | "gzip:os" => out.push(DiffFinding {
                location: a.path.clone(),
                category: Category::Unclassified,
                detail: "gzip-header-field".to_string(),
                evidence: Evidence::values(va.clone(), vb.clone()),
                summary: format!("gzip header field {key} is {va} vs {vb}"),
            }),
            // tar:name is equal by construction of the alignment;
            // tar:size differences surface through the content rules.
            _ => {}
        }
    }
}

/// Alignment keys for tar children: (member name, occurrence index),
/// so duplicate names pair up first-with-first, second-with-second.
fn member_keys(children: &[ArtifactNode]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    children
        .iter()
        .map(|c| {
            let name = c
                .metadata
                .get("tar:name")
                .cloned()
                .unwrap_or_else(|| c.path.clone());
            let occ = counts.entry(name.clone()).or_insert(0);
            *occ += 1;
            (name, *occ)
        })
        .collect()
}

fn compare_tar_members(a: &ArtifactNode, b: &ArtifactNode, out: &mut Vec<DiffFinding>) {
    let keys_a = member_keys(&a.children);
    let keys_b = member_keys(&b.children);
    let b_index: BTreeMap<&(String, usize), &ArtifactNode> =
        keys_b.iter().zip(b.children.iter()).collect();
    let a_index: BTreeMap<&(String, usize), &ArtifactNode> =
        keys_a.iter().zip(a.children.iter()).collect();

    for (ka, ca) in keys_a.iter().zip(a.children.iter()) {
        match b_index.get(ka) {
            Some(cb) => walk(ca, cb, out),
            None => out.push(DiffFinding {
                location: ca.path.clone(),
                category: Category::Randomness,
                detail: "member-set-difference".to_string(),
                evidence: Evidence::values("present", "absent"),
                summary: "archive member exists only in the first artifact".to_string(),
            }),
        }
    }
    for (kb, cb) in keys_b.iter().zip(b.children.iter()) {
        if !a_index.contains_key(kb) {
            out.push(DiffFinding {
                location: cb.path.clone(),
                category: Category::Randomness,
                detail: "member-set-difference".to_string(),
                evidence: Evidence::values("absent", "present"),
                summary: "archive member exists only in the second artifact".to_string(),
            });
        }
    }

    // Same member multiset in a different sequence: ordering
    // nondeterminism.
    let order_a: Vec<String> = keys_a.iter().map(|(n, _)| n.clone()).collect();
    let order_b: Vec<String> = keys_b.iter().map(|(n, _)| n.clone()).collect();
    if order_a != order_b {
        let mut sorted_a = order_a.clone();
        let mut sorted_b = order_b.clone();
        sorted_a.sort();
        sorted_b.sort();
        if sorted_a == sorted_b {
            out.push(DiffFinding {
                location: a.path.clone(),
                category: Category::Randomness,
                detail: "tar-member-order".to_string(),
                evidence: Evidence::values(order_a.join(", "), order_b.join(", ")),
                summary: "archive members appear in a different order".to_string(),
            });
        }
    }
}

fn printable(b: u8) -> bool {
    (0x20..=0x7e).contains(&b)
}

/// Classify a pair of differing raw leaves.
fn classify_leaf(a: &ArtifactNode, b: &ArtifactNode, out: &mut Vec<DiffFinding>) {
    let (xa, xb) = (&a.bytes, &b.bytes);
    let la = xa.len();
    let lb = xb.len();
    let mut p = 0usize;
    while p < la && p < lb && xa[p] == xb[p] {
        p += 1;
    }
    let mut s = 0usize;
    while s < la - p && s < lb - p && xa[la - 1 - s] == xb[lb - 1 - s] {
        s += 1;
    }

    // Path heuristic: expand the differing range to the printable runs
    // around it; if both decode to absolute paths sharing their final
    // segment, the difference is an embedded build directory.
    if let (Some((a_lo, a_hi)), Some((b_lo, b_hi))) = (
        printable_run(xa, p, la - s),
        printable_run(xb, p, lb - s),
    ) {
        let run_a = std::str::from_utf8(&xa[a_lo..a_hi]).unwrap_or("");
        let run_b = std::str::from_utf8(&xb[b_lo..b_hi]).unwrap_or("");
        if run_a.len() >= MIN_PATH_RUN
            && run_b.len() >= MIN_PATH_RUN
            && run_a.starts_with('/')
            && run_b.starts_with('/')
            && run_a != run_b
        {
            let last_a = run_a.rsplit('/').next().unwrap_or("");
            let last_b = run_b.rsplit('/').next().unwrap_or("");
            if !last_a.is_empty() && last_a == last_b {
                out.push(DiffFinding {
                    location: a.path.clone(),
                    category: Category::Path,
                    detail: "embedded-build-path".to_string(),
                    evidence: Evidence {
                        a_value: Some(run_a.to_string()),
                        b_value: Some(run_b.to_string()),
                        a_range: Some((a_lo as u64, a_hi as u64)),
                        b_range: Some((b_lo as u64, b_hi as u64)),
                    },
                    summary: format!("embedded path {run_a} vs {run_b}"),
                });
                return;
            }
        }
    }

    if la == lb {
        out.push(DiffFinding {
            location: a.path.clone(),
            category: Category::Randomness,
            detail: "unstructured".to_string(),
            evidence: Evidence {
                a_value: Some(hex_preview(&xa[p..la - s])),
                b_value: Some(hex_preview(&xb[p..lb - s])),
                a_range: Some((p as u64, (la - s) as u64)),
                b_range: Some((p as u64, (lb - s) as u64)),
            },
            summary: format!(
                "{} differing bytes with no recognizable structure",
                la - s - p
            ),
        });
    } else {
        out.push(DiffFinding {
            location: a.path.clone(),
            category: Category::Unclassified,
            detail: "content".to_string(),
            evidence: Evidence {
                a_value: Some(format!("{la} bytes")),
                b_value: Some(format!("{lb} bytes")),
                a_range: Some((p as u64, (la - s) as u64)),
                b_range: Some((p as u64, (lb - s) as u64)),
            },
            summary: "content differs and changes length".to_string(),
        });
    }
}

/// Short hex rendering of a byte range for evidence lines.
fn hex_preview(bytes: &[u8]) -> String {
    const CAP: usize = 32;
    let mut s = hex::encode(&bytes[..bytes.len().min(CAP)]);
    if bytes.len() > CAP {
        s.push('…');
    }
    s
}

/// Expand `[start, end)` to the surrounding printable run, requiring the
/// range itself to be printable. Returns None when it is not.
fn printable_run(bytes: &[u8], start: usize, end: usize) -> Option<(usize, usize)> {
    if !bytes[start..end].iter().copied().all(printable) {
        return None;
    }
    let mut lo = start;
    while lo > 0 && printable(bytes[lo - 1]) {
        lo -= 1;
    }
    let mut hi = end;
    while hi < bytes.len() && printable(bytes[hi]) {
        hi += 1;
    }
    Some((lo, hi))
}

// ---------------------------------------------------------------------------
// Report rendering

/// Render findings as the stable text report.
///
/// The first line counts findings per category:
/// `TIMESTAMP:n RANDOMNESS:n PATH:n UNCLASSIFIED:n`, followed by one block
/// per finding. No findings renders as a single identity line.
pub fn render_report(findings: &[DiffFinding]) -> String {
    if findings.is_empty() {
        return "artifacts are bit-by-bit identical\n".to_string();
    }
    let count = |c: Category| findings.iter().filter(|f| f.category == c).count();
    let mut out = format!(
        "TIMESTAMP:{} RANDOMNESS:{} PATH:{} UNCLASSIFIED:{}\n",
        count(Category::Timestamp),
        count(Category::Randomness),
        count(Category::Path),
        count(Category::Unclassified),
    );
    for f in findings {
        out.push('\n');
        out.push_str(&format!("[{}/{}] {}\n", f.category, f.detail, f.location));
        let side = |label: &str, value: &Option<String>, range: &Option<(u64, u64)>| {
            let mut line = String::new();
            if let Some(v) = value {
                line.push_str(&format!("  {label}: {v}"));
                if let Some((lo, hi)) = range {
                    line.push_str(&format!(" (bytes {lo}..{hi})"));
                }
                line.push('\n');
            }
            line
        };
        out.push_str(&side("a", &f.evidence.a_value, &f.evidence.a_range));
        out.push_str(&side("b", &f.evidence.b_value, &f.evidence.b_range));
        out.push_str(&format!("  {}\n", f.summary));
    }
    out
}

/// Parse the category counts line out of a rendered report.
pub fn parse_report_counts(report: &str) -> Option<BTreeMap<Category, u64>> {
    let first = report.lines().next()?;
    let mut counts = BTreeMap::new();
    for part in first.split_whitespace() {
        let (label, n) = part.split_once(':')?;
        let cat = Category::ALL.into_iter().find(|c| c.as_str() == label)?;
        counts.insert(cat, n.parse().ok()?);
    }
    if counts.len() == 4 {
        Some(counts)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{write_gzip, write_tar, TarMember};

    fn tar_bytes(members: &[TarMember]) -> Vec<u8> {
        write_tar(members).unwrap()
    }

    fn artifact(members: &[TarMember], mtime: u32) -> Vec<u8> {
        write_gzip(&tar_bytes(members), mtime)
    }

    fn members_fixture() -> Vec<TarMember> {
        vec![
            TarMember::regular("usr/bin/tool", b"binary contents\n".to_vec()),
            TarMember::regular("usr/share/doc/README", b"read me\n".to_vec()),
            TarMember::regular("usr/lib/data", b"payload\n".to_vec()),
        ]
    }

    #[test]
    fn identical_artifacts_produce_no_findings() {
        let a = artifact(&members_fixture(), 0);
        assert!(compare_artifacts(&a, &a).is_empty());
    }

    #[test]
    fn unpack_builds_the_expected_tree() {
        let a = artifact(&members_fixture(), 77);
        let root = unpack_artifact(&a);
        assert_eq!(root.format, NodeFormat::Gzip);
        assert_eq!(root.path, "/");
        assert_eq!(root.metadata["gzip:mtime"], "77");
        assert_eq!(root.children.len(), 1);
        let payload = &root.children[0];
        assert_eq!(payload.format, NodeFormat::Tar);
        assert_eq!(payload.path, "/payload.tar");
        assert_eq!(payload.children.len(), 3);
        assert_eq!(payload.children[0].path, "/payload.tar/member:usr/bin/tool");
        assert_eq!(payload.children[0].format, NodeFormat::Raw);
        assert_eq!(payload.children[0].metadata["tar:name"], "usr/bin/tool");
        assert_eq!(payload.children[0].metadata["tar:size"], "16");
    }

    #[test]
    fn corrupt_container_degrades_to_leaf_with_warning() {
        let mut a = artifact(&members_fixture(), 0);
        let n = a.len();
        a[n - 3] ^= 0xff; // break the ISIZE field
        let root = unpack_artifact(&a);
        assert_eq!(root.format, NodeFormat::Raw);
        assert!(!root.warnings.is_empty());
    }

    #[test]
    fn gzip_header_mtime_is_a_timestamp_finding() {
        let a = artifact(&members_fixture(), 1_600_000_000);
        let b = artifact(&members_fixture(), 1_700_000_000);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        let f = &findings[0];
        assert_eq!(f.category, Category::Timestamp);
        assert_eq!(f.detail, "gzip-header-mtime");
        assert_eq!(f.location, "/");
        assert_eq!(f.evidence.a_value.as_deref(), Some("1600000000"));
        assert_eq!(f.evidence.b_value.as_deref(), Some("1700000000"));
        assert_eq!(f.evidence.a_range, Some((4, 8)));
    }

    #[test]
    fn tar_member_mtime_is_a_timestamp_finding() {
        let mut changed = members_fixture();
        changed[1].mtime = 1_700_000_000;
        let a = artifact(&members_fixture(), 0);
        let b = artifact(&changed, 0);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        assert_eq!(findings[0].category, Category::Timestamp);
        assert_eq!(findings[0].detail, "tar-member-mtime");
        assert_eq!(findings[0].location, "/payload.tar/member:usr/share/doc/README");
    }

    #[test]
    fn member_permutation_is_a_randomness_finding() {
        let mut shuffled = members_fixture();
        shuffled.swap(0, 2);
        let a = artifact(&members_fixture(), 0);
        let b = artifact(&shuffled, 0);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        assert_eq!(findings[0].category, Category::Randomness);
        assert_eq!(findings[0].detail, "tar-member-order");
        assert_eq!(findings[0].location, "/payload.tar");
    }

    #[test]
    fn added_and_removed_members_are_set_differences() {
        let mut extra = members_fixture();
        extra.push(TarMember::regular("usr/lib/surprise", b"!\n".to_vec()));
        let a = artifact(&members_fixture(), 0);
        let b = artifact(&extra, 0);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        assert_eq!(findings[0].category, Category::Randomness);
        assert_eq!(findings[0].detail, "member-set-difference");
        assert_eq!(findings[0].evidence.a_value.as_deref(), Some("absent"));
        // And symmetric the other way.
        let back = compare_artifacts(&b, &a);
        assert_eq!(back[0].evidence.a_value.as_deref(), Some("present"));
    }

    #[test]
    fn embedded_path_difference_is_a_path_finding() {
        let mk = |dir: &str| {
            let mut ms = members_fixture();
            ms.push(TarMember::regular(
                "usr/lib/source-path",
                format!("{dir}/src/widget.c\n").into_bytes(),
            ));
            artifact(&ms, 0)
        };
        let a = mk("/build/widget-1.0");
        let b = mk("/work/7/widget");
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        let f = &findings[0];
        assert_eq!(f.category, Category::Path);
        assert_eq!(f.detail, "embedded-build-path");
        assert_eq!(f.evidence.a_value.as_deref(), Some("/build/widget-1.0/src/widget.c"));
        assert_eq!(f.evidence.b_value.as_deref(), Some("/work/7/widget/src/widget.c"));
    }

    #[test]
    fn path_rule_requires_shared_trailing_segment() {
        let mk = |content: &str| {
            let mut ms = members_fixture();
            ms.push(TarMember::regular("usr/lib/note", content.as_bytes().to_vec()));
            artifact(&ms, 0)
        };
        let a = mk("/alpha/beta/gamma\n");
        let b = mk("/delta/epsilon/zeta\n");
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1);
        assert_ne!(findings[0].category, Category::Path);
    }

    #[test]
    fn equal_length_binary_difference_is_randomness() {
        let mk = |fill: u8| {
            let mut ms = members_fixture();
            ms.push(TarMember::regular("usr/lib/blob.bin", vec![fill, 0x01, fill, 0x02]));
            artifact(&ms, 0)
        };
        let a = mk(0xaa);
        let b = mk(0xbb);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        assert_eq!(findings[0].category, Category::Randomness);
        assert_eq!(findings[0].detail, "unstructured");
    }

    #[test]
    fn length_change_without_structure_is_unclassified() {
        let mk = |content: &[u8]| {
            let mut ms = members_fixture();
            ms.push(TarMember::regular("usr/lib/blob.bin", content.to_vec()));
            artifact(&ms, 0)
        };
        let a = mk(&[0x00, 0x01]);
        let b = mk(&[0x00, 0x01, 0x02, 0x03]);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        assert_eq!(findings[0].category, Category::Unclassified);
        assert_eq!(findings[0].detail, "content");
    }

    #[test]
    fn format_mismatch_is_unclassified() {
        let a = artifact(&members_fixture(), 0);
        let b = b"plain bytes, no container".to_vec();
        let findings = compare_artifacts(&a, &b);
        assert!(findings
            .iter()
            .any(|f| f.detail == "format-mismatch" && f.category == Category::Unclassified));
    }

    #[test]
    fn identical_structure_with_different_encoding_is_opaque() {
        // Same payload, same header fields, but a different deflate
        // encoding (another compression level ⇒ different bytes).
        let payload = tar_bytes(&members_fixture());
        let a = write_gzip(&payload, 0);
        let mut b = Vec::new();
        b.extend_from_slice(&[0x1f, 0x8b, 0x08, 0x00, 0, 0, 0, 0, 0x00, 0xff]);
        let deflated = miniz_oxide::deflate::compress_to_vec(&payload, 1);
        b.extend_from_slice(&deflated);
        b.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        b.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        assert_ne!(a, b);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        assert_eq!(findings[0].detail, "opaque-difference");
        assert_eq!(findings[0].category, Category::Unclassified);
    }

    #[test]
    fn every_difference_is_reported_never_silent() {
        // A grab bag of mutations: whatever changes must produce findings.
        let base = artifact(&members_fixture(), 3);
        let mutations: Vec<Vec<u8>> = vec![
            artifact(&members_fixture(), 4),
            {
                let mut ms = members_fixture();
                ms[0].content = b"different binary\n".to_vec();
                artifact(&ms, 3)
            },
            {
                let mut ms = members_fixture();
                ms[2].mode = 0o755;
                artifact(&ms, 3)
            },
            b"garbage".to_vec(),
        ];
        for (i, m) in mutations.iter().enumerate() {
            assert!(
                !compare_artifacts(&base, m).is_empty(),
                "mutation {i} went unreported"
            );
        }
    }

    #[test]
    fn multiple_findings_are_sorted_and_counted() {
        let mut changed = members_fixture();
        changed[0].content = b"other binary bytes\n".to_vec(); // length change
        changed[1].mtime = 9_999; // member mtime
        let a = artifact(&members_fixture(), 1);
        let b = artifact(&changed, 2); // header mtime too
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 3, "{findings:#?}");
        let locations: Vec<&str> = findings.iter().map(|f| f.location.as_str()).collect();
        let mut sorted = locations.clone();
        sorted.sort();
        assert_eq!(locations, sorted);

        let report = render_report(&findings);
        let first_line = report.lines().next().unwrap();
        assert_eq!(first_line, "TIMESTAMP:2 RANDOMNESS:0 PATH:0 UNCLASSIFIED:1");
        let counts = parse_report_counts(&report).unwrap();
        assert_eq!(counts[&Category::Timestamp], 2);
        assert_eq!(counts[&Category::Unclassified], 1);
    }

    #[test]
    fn report_for_no_findings_is_the_identity_line() {
        assert_eq!(render_report(&[]), "artifacts are bit-by-bit identical\n");
    }

    #[test]
    fn duplicate_member_names_align_by_occurrence() {
        let dup = vec![
            TarMember::regular("twin", b"first\n".to_vec()),
            TarMember::regular("twin", b"second\n".to_vec()),
        ];
        let mut changed = dup.clone();
        changed[1].content = b"SECOND\n".to_vec();
        let a = artifact(&dup, 0);
        let b = artifact(&changed, 0);
        let findings = compare_artifacts(&a, &b);
        assert_eq!(findings.len(), 1, "{findings:#?}");
        assert_eq!(findings[0].location, "/payload.tar/member:twin#2");
    }

    #[test]
    fn depth_bound_degrades_gracefully() {
        // A tower of nested gzip streams deeper than the bound.
        let mut blob = b"core".to_vec();
        for _ in 0..(MAX_NESTING_DEPTH + 2) {
            blob = write_gzip(&blob, 0);
        }
        let root = unpack_artifact(&blob);
        // Walk to the deepest node and confirm it carries the bound warning.
        let mut node = &root;
        let mut depth = 0;
        while let Some(child) = node.children.first() {
            node = child;
            depth += 1;
        }
        assert_eq!(depth, MAX_NESTING_DEPTH);
        assert!(node.warnings.iter().any(|w| w.contains("depth bound")));
        // Comparison still terminates and reports on such inputs.
        let mut other = b"different".to_vec();
        for _ in 0..(MAX_NESTING_DEPTH + 2) {
            other = write_gzip(&other, 0);
        }
        assert!(!compare_artifacts(&blob, &other).is_empty());
    }
}
