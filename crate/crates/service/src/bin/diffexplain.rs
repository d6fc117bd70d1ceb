//! Explain why two build artifacts differ.
//!
//! Unpacks both artifacts (gzip and tar containers, nested up to a bound),
//! aligns their members, and prints every difference with a root-cause
//! category: TIMESTAMP, RANDOMNESS, PATH, or UNCLASSIFIED.
//!
//! Exit status: 0 when the artifacts are bit-identical, 1 when they
//! differ, 2 on usage or I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use verifier_core::diff::{compare_artifacts, render_report};

#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// The reference artifact.
    a: PathBuf,
    /// The artifact to compare against it.
    b: PathBuf,
}

fn run(args: &Args) -> anyhow::Result<bool> {
    let a = std::fs::read(&args.a).with_context(|| format!("reading {}", args.a.display()))?;
    let b = std::fs::read(&args.b).with_context(|| format!("reading {}", args.b.display()))?;
    let findings = compare_artifacts(&a, &b);
    print!("{}", render_report(&findings));
    Ok(findings.is_empty())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
