//! Time primitives: second-resolution timestamps, an injectable clock, and
//! duration parsing for configuration flags.
//!
//! All scheduling logic takes time as an explicit argument or through the
//! [`Clock`] trait so that tests and simulations can run on a manual clock.

use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds since the Unix epoch.
///
/// `Timestamp::NEVER` (i64::MAX) is used for "not eligible until further
/// notice", e.g. a package that verified reproducible and has no newer
/// version.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const NEVER: Timestamp = Timestamp(i64::MAX);

    pub fn plus(self, d: Duration) -> Timestamp {
        let secs = i64::try_from(d.as_secs()).unwrap_or(i64::MAX);
        Timestamp(self.0.saturating_add(secs))
    }

    pub fn is_never(self) -> bool {
        self == Timestamp::NEVER
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_never() {
            f.write_str("never")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Source of "now" for schedulers, builders, and sync loops.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall clock.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let since_epoch = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or(Duration::ZERO);
        Timestamp(i64::try_from(since_epoch.as_secs()).unwrap_or(i64::MAX))
    }
}

/// Manually advanced clock for tests and simulations. Cloning yields a
/// handle onto the same underlying instant.
#[derive(Clone, Default)]
pub struct SimClock(Arc<AtomicI64>);

impl SimClock {
    pub fn new(start: i64) -> SimClock {
        SimClock(Arc::new(AtomicI64::new(start)))
    }

    pub fn set(&self, now: i64) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid duration {input:?}: {reason}")]
pub struct DurationParseError {
    pub input: String,
    pub reason: String,
}

/// Parse a duration flag such as `30s`, `15m`, `24h`, or `7d`.
///
/// A bare number is taken as seconds. Zero is allowed (useful for tests),
/// negative values are not.
pub fn parse_duration(s: &str) -> Result<Duration, DurationParseError> {
    let err = |reason: &str| DurationParseError {
        input: s.to_string(),
        reason: reason.to_string(),
    };
    let t = s.trim();
    if t.is_empty() {
        return Err(err("empty"));
    }
    let (num, unit) = match t.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&t[..i], &t[i..]),
        _ => (t, "s"),
    };
    if num.is_empty() {
        return Err(err("missing number"));
    }
    let value: u64 = num.parse().map_err(|_| err("not a whole number"))?;
    let mult = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        _ => return Err(err("unknown unit (use s, m, h, or d)")),
    };
    value
        .checked_mul(mult)
        .map(Duration::from_secs)
        .ok_or_else(|| err("overflows"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_units() {
        assert_eq!(parse_duration("300s").unwrap(), Duration::from_secs(300));
        assert_eq!(parse_duration("30m").unwrap(), Duration::from_secs(1800));
        assert_eq!(parse_duration("24h").unwrap(), Duration::from_secs(86_400));
        assert_eq!(parse_duration("7d").unwrap(), Duration::from_secs(604_800));
        assert_eq!(parse_duration("42").unwrap(), Duration::from_secs(42));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_duration("").is_err());
        assert!(parse_duration("d").is_err());
        assert!(parse_duration("-5s").is_err());
        assert!(parse_duration("5w").is_err());
        assert!(parse_duration("1.5h").is_err());
    }

    #[test]
    fn sim_clock_advances() {
        let c = SimClock::new(100);
        assert_eq!(c.now(), Timestamp(100));
        c.advance(50);
        assert_eq!(c.now(), Timestamp(150));
        let c2 = c.clone();
        c2.set(7);
        assert_eq!(c.now(), Timestamp(7));
    }

    #[test]
    fn timestamp_plus_saturates() {
        assert_eq!(
            Timestamp(5).plus(Duration::from_secs(10)),
            Timestamp(15)
        );
        assert!(Timestamp::NEVER.plus(Duration::from_secs(1)).is_never());
    }

    #[test]
    fn never_displays_as_never() {
        assert_eq!(Timestamp::NEVER.to_string(), "never");
        assert_eq!(Timestamp(12).to_string(), "12");
    }
}
