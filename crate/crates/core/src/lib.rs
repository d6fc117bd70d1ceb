//! Core library for an independent reproducible-builds verifier.
//!
//! The verifier continuously rebuilds released packages from their build
//! recipes and checks that the rebuilt artifact is bit-for-bit identical to
//! the artifact the upstream repository distributes. This crate holds the
//! pieces that do not depend on any particular transport or storage:
//!
//! - [`recipe`]: the build-recipe model, parser, canonical emitter,
//!   dependency resolution, and lint rules,
//! - [`buildinfo`]: the build-environment manifest recorded alongside an
//!   artifact, plus the recipe/manifest consistency check,
//! - [`index`]: release-index parsing, snapshot diffing, and the sync
//!   daemon that turns upstream index changes into queue events,
//! - [`queue`]: the verification scheduler (statuses, claims, retry
//!   backoff, journal records),
//! - [`archive`]: the gzip-over-tar artifact container,
//! - [`build`]: build backends (including the deterministic mock backend
//!   with fault injection) and the rebuild-and-compare entry point,
//! - [`diff`]: structural artifact diffing and root-cause classification,
//! - [`attest`]: signed attestations for reproduced packages,
//! - [`ddc`]: a diverse double-compiling harness for compiler
//!   self-hosting trust checks.

pub mod archive;
pub mod attest;
pub mod build;
pub mod buildinfo;
pub mod clock;
pub mod ddc;
pub mod diff;
pub mod digest;
pub mod index;
pub mod queue;
pub mod recipe;
pub mod version;
