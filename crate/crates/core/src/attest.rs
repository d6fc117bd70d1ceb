//! Signed rebuild attestations.
//!
//! When an independent rebuild reproduces the distributed artifact
//! bit-for-bit, the verifier publishes a signed statement of that fact.
//! The statement is a canonical `key=value` text (one line per field,
//! fixed order, dependencies sorted by name) so that any two parties
//! serializing the same claim produce the same bytes; the Ed25519
//! signature covers exactly those bytes.
//!
//! Verification is deliberately strict: the embedded statement must
//! re-serialize to the identical canonical bytes, the reference and
//! rebuilt digests must match (the claim being attested), the key id must
//! bind to the presented public key, and the signature must pass
//! `verify_strict`.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ed25519_dalek::{Signature, SigningKey};
pub use ed25519_dalek::VerifyingKey;
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::digest::Digest;
use crate::version::Version;

pub const VERDICT_GOOD: &str = "GOOD";

/// The claim an attestation makes: this rebuilder rebuilt this release
/// from this recipe and dependency set and obtained the reference bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationStatement {
    pub rebuilder_id: String,
    pub name: String,
    pub version: Version,
    pub arch: String,
    pub recipe_digest: Digest,
    /// Digest of each dependency as installed in the build environment,
    /// keyed by package name.
    pub dependency_digests: BTreeMap<String, Digest>,
    pub reference_digest: Digest,
    pub rebuilt_digest: Digest,
    pub timestamp: Timestamp,
}

impl AttestationStatement {
    /// The canonical signed bytes: fixed key order, one `key=value` per
    /// line, dependencies sorted by name, trailing newline.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("rebuilder_id={}\n", self.rebuilder_id));
        out.push_str(&format!("name={}\n", self.name));
        out.push_str(&format!("version={}\n", self.version));
        out.push_str(&format!("arch={}\n", self.arch));
        out.push_str(&format!("recipe_digest={}\n", self.recipe_digest));
        for (dep, digest) in &self.dependency_digests {
            out.push_str(&format!("dependency={dep}:{digest}\n"));
        }
        out.push_str(&format!("reference_digest={}\n", self.reference_digest));
        out.push_str(&format!("rebuilt_digest={}\n", self.rebuilt_digest));
        out.push_str(&format!("verdict={VERDICT_GOOD}\n"));
        out.push_str(&format!("timestamp={}\n", self.timestamp.0));
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatementParseError {
    #[error("line {0}: expected key=value")]
    NotKeyValue(usize),
    #[error("line {line}: expected key {expected}, found {found}")]
    UnexpectedKey {
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: bad value for {key}: {reason}")]
    BadValue {
        line: usize,
        key: &'static str,
        reason: String,
    },
    #[error("statement truncated: missing {0}")]
    Truncated(&'static str),
    #[error("trailing content after the statement")]
    TrailingContent,
    #[error("duplicate dependency entry for {0}")]
    DuplicateDependency(String),
}

/// Parse the canonical statement text.
pub fn parse_statement(text: &str) -> Result<AttestationStatement, StatementParseError> {
    let pairs: Vec<(usize, &str, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_once('=')
                .map(|(k, v)| (i + 1, k, v))
                .ok_or(StatementParseError::NotKeyValue(i + 1))
        })
        .collect::<Result<_, _>>()?;

    let mut iter = pairs.into_iter().peekable();
    let mut scalar = |expected: &'static str| -> Result<(usize, String), StatementParseError> {
        match iter.next() {
            Some((line, k, v)) if k == expected => Ok((line, v.to_string())),
            Some((line, k, _)) => Err(StatementParseError::UnexpectedKey {
                line,
                expected,
                found: k.to_string(),
            }),
            None => Err(StatementParseError::Truncated(expected)),
        }
    };

    let (_, rebuilder_id) = scalar("rebuilder_id")?;
    let (_, name) = scalar("name")?;
    let (vline, version_s) = scalar("version")?;
    let (_, arch) = scalar("arch")?;
    let (rline, recipe_s) = scalar("recipe_digest")?;

    let version = Version::parse(&version_s).map_err(|e| StatementParseError::BadValue {
        line: vline,
        key: "version",
        reason: e.to_string(),
    })?;
    let recipe_digest = recipe_s
        .parse::<Digest>()
        .map_err(|e| StatementParseError::BadValue {
            line: rline,
            key: "recipe_digest",
            reason: e.to_string(),
        })?;

    // Re-create the iterator state manually: `scalar` holds a mutable
    // borrow, so drop it before looping over dependencies.
    let mut dependency_digests = BTreeMap::new();
    while matches!(iter.peek(), Some((_, "dependency", _))) {
        let (line, _, v) = iter.next().unwrap();
        let (dep, hexval) = v
            .split_once(':')
            .ok_or_else(|| StatementParseError::BadValue {
                line,
                key: "dependency",
                reason: "expected name:digest".to_string(),
            })?;
        let digest = hexval
            .parse::<Digest>()
            .map_err(|e| StatementParseError::BadValue {
                line,
                key: "dependency",
                reason: e.to_string(),
            })?;
        if dependency_digests.insert(dep.to_string(), digest).is_some() {
            return Err(StatementParseError::DuplicateDependency(dep.to_string()));
        }
    }

    let mut scalar = |expected: &'static str| -> Result<(usize, String), StatementParseError> {
        match iter.next() {
            Some((line, k, v)) if k == expected => Ok((line, v.to_string())),
            Some((line, k, _)) => Err(StatementParseError::UnexpectedKey {
                line,
                expected,
                found: k.to_string(),
            }),
            None => Err(StatementParseError::Truncated(expected)),
        }
    };
    let (refline, reference_s) = scalar("reference_digest")?;
    let (rbline, rebuilt_s) = scalar("rebuilt_digest")?;
    let (gline, verdict) = scalar("verdict")?;
    let (tline, timestamp_s) = scalar("timestamp")?;
    if iter.next().is_some() {
        return Err(StatementParseError::TrailingContent);
    }

    if verdict != VERDICT_GOOD {
        return Err(StatementParseError::BadValue {
            line: gline,
            key: "verdict",
            reason: format!("only {VERDICT_GOOD} statements are attestable"),
        });
    }
    let reference_digest =
        reference_s
            .parse::<Digest>()
            .map_err(|e| StatementParseError::BadValue {
                line: refline,
                key: "reference_digest",
                reason: e.to_string(),
            })?;
    let rebuilt_digest = rebuilt_s
        .parse::<Digest>()
        .map_err(|e| StatementParseError::BadValue {
            line: rbline,
            key: "rebuilt_digest",
            reason: e.to_string(),
        })?;
    let timestamp = timestamp_s
        .parse::<i64>()
        .map(Timestamp)
        .map_err(|e| StatementParseError::BadValue {
            line: tline,
            key: "timestamp",
            reason: e.to_string(),
        })?;

    Ok(AttestationStatement {
        rebuilder_id,
        name,
        version,
        arch,
        recipe_digest,
        dependency_digests,
        reference_digest,
        rebuilt_digest,
        timestamp,
    })
}

// ---------------------------------------------------------------------------
// Signing

#[derive(Debug, Error)]
pub enum SignError {
    #[error("signer unavailable: {0}")]
    Unavailable(String),
}

/// Anything able to sign canonical statement bytes and name its key.
pub trait Signer: Send + Sync {
    /// Stable identifier of the signing key: hex SHA-256 of the public key.
    fn key_id(&self) -> String;
    fn sign(&self, message: &[u8]) -> Result<[u8; 64], SignError>;
}

/// Key id binding: hex SHA-256 over the 32 raw public key bytes.
pub fn key_id_for(key: &VerifyingKey) -> String {
    hex::encode(Sha256::digest(key.to_bytes()))
}

pub struct Ed25519Signer {
    key: SigningKey,
}

#[derive(Debug, Error)]
pub enum KeyFileError {
    #[error("reading key file: {0}")]
    Io(#[from] io::Error),
    #[error("malformed key file: {0}")]
    Malformed(String),
}

impl Ed25519Signer {
    pub fn generate() -> Ed25519Signer {
        let mut seed = [0u8; 32];
        OsRng.fill_bytes(&mut seed);
        Ed25519Signer::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Ed25519Signer {
        Ed25519Signer {
            key: SigningKey::from_bytes(&seed),
        }
    }

    /// Load a key from a file holding the hex-encoded 32-byte seed.
    pub fn load(path: &Path) -> Result<Ed25519Signer, KeyFileError> {
        let text = std::fs::read_to_string(path)?;
        let line = text.trim();
        let bytes = hex::decode(line).map_err(|e| KeyFileError::Malformed(e.to_string()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KeyFileError::Malformed("seed must be 32 bytes".to_string()))?;
        Ok(Ed25519Signer::from_seed(seed))
    }

    /// Write the hex seed to a file (owner-only permissions on Unix).
    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, format!("{}\n", hex::encode(self.key.to_bytes())))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))?;
        }
        Ok(())
    }

    /// Load the key at `path`, generating and saving a fresh one when the
    /// file does not exist yet.
    pub fn load_or_generate(path: &Path) -> Result<Ed25519Signer, KeyFileError> {
        if path.exists() {
            Ed25519Signer::load(path)
        } else {
            let signer = Ed25519Signer::generate();
            signer.save(path)?;
            Ok(signer)
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn public_key_hex(&self) -> String {
        hex::encode(self.key.verifying_key().to_bytes())
    }
}

impl Signer for Ed25519Signer {
    fn key_id(&self) -> String {
        key_id_for(&self.key.verifying_key())
    }

    fn sign(&self, message: &[u8]) -> Result<[u8; 64], SignError> {
        use ed25519_dalek::Signer as _;
        Ok(self.key.sign(message).to_bytes())
    }
}

// ---------------------------------------------------------------------------
// Attestations

/// A signed statement plus the identity of the signing key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attestation {
    pub statement: AttestationStatement,
    pub signature: [u8; 64],
    pub key_id: String,
}

#[derive(Debug, Error)]
pub enum AttestError {
    #[error("rebuilt digest does not match the reference; nothing to attest")]
    NotReproduced,
    #[error("invalid statement field: {0}")]
    InvalidField(String),
    #[error(transparent)]
    Sign(#[from] SignError),
}

/// Sign a statement. Refuses unless the statement actually claims
/// reproduction (reference and rebuilt digests equal) and all free-text
/// fields are single-line.
pub fn create_attestation(
    signer: &dyn Signer,
    statement: AttestationStatement,
) -> Result<Attestation, AttestError> {
    if statement.reference_digest != statement.rebuilt_digest {
        return Err(AttestError::NotReproduced);
    }
    for (field, value) in [
        ("rebuilder_id", &statement.rebuilder_id),
        ("name", &statement.name),
        ("arch", &statement.arch),
    ] {
        if value.is_empty() || value.contains('\n') || value.contains('=') {
            return Err(AttestError::InvalidField(field.to_string()));
        }
    }
    if statement
        .dependency_digests
        .keys()
        .any(|k| k.is_empty() || k.contains('\n') || k.contains('=') || k.contains(':'))
    {
        return Err(AttestError::InvalidField("dependency".to_string()));
    }
    let canonical = statement.canonical_text();
    let signature = signer.sign(canonical.as_bytes())?;
    Ok(Attestation {
        statement,
        signature,
        key_id: signer.key_id(),
    })
}

impl Attestation {
    /// Serialize: canonical statement, blank line, signature and key id.
    pub fn to_text(&self) -> String {
        format!(
            "{}\nsignature={}\nkey_id={}\n",
            self.statement.canonical_text(),
            BASE64.encode(self.signature),
            self.key_id,
        )
    }

    pub fn from_text(text: &str) -> Result<Attestation, VerifyError> {
        let (statement_text, trailer) = text
            .split_once("\n\n")
            .ok_or_else(|| VerifyError::Malformed("missing statement/signature separator".into()))?;
        let statement_text = format!("{statement_text}\n");
        let statement = parse_statement(&statement_text)
            .map_err(|e| VerifyError::Malformed(e.to_string()))?;
        if statement.canonical_text() != statement_text {
            return Err(VerifyError::NonCanonical);
        }

        let mut signature = None;
        let mut key_id = None;
        for line in trailer.lines() {
            match line.split_once('=') {
                Some(("signature", v)) if signature.is_none() => {
                    // '=' is base64 padding, so re-split keeps only the
                    // first '=' as the separator.
                    signature = Some(v.to_string());
                }
                Some(("key_id", v)) if key_id.is_none() => key_id = Some(v.to_string()),
                _ => return Err(VerifyError::Malformed(format!("unexpected line: {line}"))),
            }
        }
        let signature_b64 =
            signature.ok_or_else(|| VerifyError::Malformed("missing signature".into()))?;
        let key_id = key_id.ok_or_else(|| VerifyError::Malformed("missing key_id".into()))?;
        let sig_bytes = BASE64
            .decode(signature_b64.as_bytes())
            .map_err(|e| VerifyError::Malformed(format!("signature base64: {e}")))?;
        let signature: [u8; 64] = sig_bytes
            .try_into()
            .map_err(|_| VerifyError::Malformed("signature must be 64 bytes".into()))?;
        if key_id.len() != 64 || !key_id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(VerifyError::Malformed("key_id must be 64 hex chars".into()));
        }
        Ok(Attestation {
            statement,
            signature,
            key_id,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("malformed attestation: {0}")]
    Malformed(String),
    #[error("statement is not in canonical form")]
    NonCanonical,
    #[error("statement does not claim reproduction")]
    DigestMismatch,
    #[error("key id does not bind to the provided public key")]
    KeyMismatch,
    #[error("signature verification failed")]
    BadSignature,
}

/// Verify an attestation against a trusted public key.
pub fn verify_attestation(att: &Attestation, key: &VerifyingKey) -> Result<(), VerifyError> {
    if att.key_id != key_id_for(key) {
        return Err(VerifyError::KeyMismatch);
    }
    if att.statement.reference_digest != att.statement.rebuilt_digest {
        return Err(VerifyError::DigestMismatch);
    }
    let canonical = att.statement.canonical_text();
    let signature = Signature::from_bytes(&att.signature);
    key.verify_strict(canonical.as_bytes(), &signature)
        .map_err(|_| VerifyError::BadSignature)
}

/// Parse and verify attestation text in one step.
pub fn verify_attestation_text(
    text: &str,
    key: &VerifyingKey,
) -> Result<AttestationStatement, VerifyError> {
    let att = Attestation::from_text(text)?;
    verify_attestation(&att, key)?;
    Ok(att.statement)
}
