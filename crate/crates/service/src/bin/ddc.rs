//! Diverse double-compiling check for rewrite-rule compilers.
//!
//! Certifies a compiler artifact against its published source using an
//! independent trusted compiler: stage one compiles the source with the
//! trusted compiler, stage two compiles the same source with stage one.
//! If the artifact under test is honestly derived from the source, stage
//! two is bit-identical to it; a self-propagating backdoor that is absent
//! from the source cannot survive the detour through the trusted compiler.
//!
//! Exit status: 0 when the check passes, 1 when it fails, 2 on errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use verifier_core::ddc::ddc_check;

#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Compiler artifact to certify.
    #[arg(long)]
    under_test: PathBuf,

    /// Compiler source text the artifact claims to be built from.
    #[arg(long)]
    source: PathBuf,

    /// Independent trusted compiler artifact.
    #[arg(long)]
    trusted: PathBuf,
}

fn run(args: &Args) -> anyhow::Result<bool> {
    let under_test = std::fs::read(&args.under_test)
        .with_context(|| format!("reading {}", args.under_test.display()))?;
    let source = std::fs::read_to_string(&args.source)
        .with_context(|| format!("reading {}", args.source.display()))?;
    let trusted = std::fs::read(&args.trusted)
        .with_context(|| format!("reading {}", args.trusted.display()))?;
    let result = ddc_check(&under_test, &source, &trusted).context("running the check")?;
    print!("{}", result.transcript);
    Ok(result.pass)
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
