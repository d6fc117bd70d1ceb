//! Package version strings of the form `[epoch:]ver-rel`.
//!
//! `ver` is a dot-separated sequence of segments; each segment is either a
//! decimal number or a lowercase alphanumeric token. `rel` is the packaging
//! release counter (at least 1) and `epoch` (default 0) overrides ordering
//! across versioning-scheme changes.
//!
//! Ordering: epoch first, then the segment sequence lexicographically, then
//! rel. Numeric segments compare numerically and order before textual
//! segments; a sequence that is a strict prefix of another orders first.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    /// All-digit segment, compared numerically. `1` and `01` are equal.
    Number(u64),
    /// Any other segment, compared as a byte string.
    Text(String),
}

impl Segment {
    fn parse(s: &str) -> Result<Segment, VersionError> {
        if s.is_empty() {
            return Err(VersionError::EmptySegment);
        }
        if s.bytes().all(|b| b.is_ascii_digit()) {
            // Absurdly long digit runs fall back to text so parsing never
            // fails on length alone.
            return Ok(match s.parse::<u64>() {
                Ok(n) => Segment::Number(n),
                Err(_) => Segment::Text(s.to_string()),
            });
        }
        if !s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        {
            return Err(VersionError::BadSegment(s.to_string()));
        }
        Ok(Segment::Text(s.to_string()))
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Number(n) => write!(f, "{n}"),
            Segment::Text(t) => f.write_str(t),
        }
    }
}

/// A full package version: `[epoch:]ver-rel`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Version {
    pub epoch: u64,
    pub segments: Vec<Segment>,
    pub rel: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VersionError {
    #[error("empty version string")]
    Empty,
    #[error("missing release suffix (expected `ver-rel`)")]
    MissingRel,
    #[error("invalid release counter {0:?} (whole number >= 1)")]
    BadRel(String),
    #[error("invalid epoch {0:?}")]
    BadEpoch(String),
    #[error("empty version segment")]
    EmptySegment,
    #[error("invalid version segment {0:?}")]
    BadSegment(String),
}

impl Version {
    pub fn parse(s: &str) -> Result<Version, VersionError> {
        if s.is_empty() {
            return Err(VersionError::Empty);
        }
        let (epoch, rest) = match s.split_once(':') {
            Some((e, rest)) => {
                let epoch = e
                    .parse::<u64>()
                    .map_err(|_| VersionError::BadEpoch(e.to_string()))?;
                (epoch, rest)
            }
            None => (0, s),
        };
        // `ver` itself never contains `-`, so the last `-` separates rel.
        let (ver, rel) = rest.rsplit_once('-').ok_or(VersionError::MissingRel)?;
        if ver.contains('-') {
            return Err(VersionError::BadSegment(ver.to_string()));
        }
        let rel: u64 = rel
            .parse()
            .map_err(|_| VersionError::BadRel(rel.to_string()))?;
        if rel == 0 {
            return Err(VersionError::BadRel(rel.to_string()));
        }
        if ver.is_empty() {
            return Err(VersionError::EmptySegment);
        }
        let segments = ver
            .split('.')
            .map(Segment::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Version {
            epoch,
            segments,
            rel,
        })
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.epoch > 0 {
            write!(f, "{}:", self.epoch)?;
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{seg}")?;
        }
        write!(f, "-{}", self.rel)
    }
}

impl FromStr for Version {
    type Err = VersionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Version::parse(s)
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        self.epoch
            .cmp(&other.epoch)
            .then_with(|| cmp_segments(&self.segments, &other.segments))
            .then_with(|| self.rel.cmp(&other.rel))
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn cmp_segments(a: &[Segment], b: &[Segment]) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let ord = match (x, y) {
            (Segment::Number(m), Segment::Number(n)) => m.cmp(n),
            (Segment::Text(s), Segment::Text(t)) => s.cmp(t),
            // Numeric segments order before textual ones.
            (Segment::Number(_), Segment::Text(_)) => Ordering::Less,
            (Segment::Text(_), Segment::Number(_)) => Ordering::Greater,
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    a.len().cmp(&b.len())
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Version::parse(&s).map_err(serde::de::Error::custom)
    }
}
