//! `ocds` — run shared-set scenarios, check lens laws, check machine
//! homomorphisms.
//!
//! Exit codes: 0 when every assertion and check passes, 1 when any fails,
//! 2 on usage, parse, or validation errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ocds::fsm::{check_homomorphism, parse_fsm_file};
use ocds::lens::{LawReport, Predicate, PredicateLens};
use ocds::report::{render_report, render_trace, ReportFormat};
use ocds::scenario::parse_scenario;
use ocds::sim::{run, RunOptions};

#[derive(Parser)]
#[command(name = "ocds", version, about = "Operation-based collaborative data sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and report its assertions.
    Run {
        /// Scenario file (.ocds).
        file: PathBuf,
        /// Seed recorded with the scenario (scripted runs are deterministic
        /// regardless).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the execution trace before the report.
        #[arg(long)]
        trace: bool,
        /// Treat asymmetric lens pairs as an error instead of a warning.
        #[arg(long)]
        strict: bool,
        /// Apply and propagate local operations even when they change
        /// nothing, and skip conflict arbitration. Demonstrates divergence.
        #[arg(long)]
        disable_effectful_filter: bool,
        /// Output format.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
    /// Fuzz the round-tripping laws of every lens in a lens file.
    CheckLens {
        /// Lens file (.lens).
        file: PathBuf,
    },
    /// Check the state-machine homomorphism described by a machine-pair file.
    CheckHom {
        /// Machine file (.fsm).
        file: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            file,
            seed,
            trace,
            strict,
            disable_effectful_filter,
            format,
        } => cmd_run(&file, seed, trace, strict, disable_effectful_filter, format),
        Command::CheckLens { file } => cmd_check_lens(&file),
        Command::CheckHom { file } => cmd_check_hom(&file),
    }
}

fn read_input(path: &Path) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn cmd_run(
    path: &Path,
    seed: u64,
    trace: bool,
    strict: bool,
    disable_effectful_filter: bool,
    format: ReportFormat,
) -> ExitCode {
    let text = match read_input(path) {
        Ok(text) => text,
        Err(code) => return code,
    };
    let mut scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    scenario.seed = seed;
    let options = RunOptions {
        effectful_filter: !disable_effectful_filter,
        strict,
    };
    let report = match run(&scenario, &options) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    if trace {
        print!("{}", render_trace(&report));
    }
    print!("{}", render_report(&report, format));
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

struct LensCheck {
    name: String,
    lens: PredicateLens,
}

struct LensFile {
    lenses: Vec<LensCheck>,
    samples: usize,
    universe: std::ops::RangeInclusive<i64>,
    seed: u64,
}

/// Lens files declare gateways to fuzz plus sampling parameters:
///
/// ```text
/// lens <name> offer="<pred>" accept="<pred>"
/// samples <count>
/// universe <low> <high>
/// seed <int>
/// ```
fn parse_lens_file(text: &str) -> Result<LensFile, String> {
    let mut lenses = Vec::new();
    let mut samples = 1000usize;
    let mut universe = 0..=999i64;
    let mut seed = 0u64;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = split_quoted(raw).map_err(|m| format!("line {line_no}: {m}"))?;
        if tokens.is_empty() {
            continue;
        }
        let fail = |m: String| format!("line {line_no}: {m}");
        match tokens[0].as_str() {
            "lens" => {
                if tokens.len() != 4 {
                    return Err(fail(
                        "usage: lens <name> offer=\"<pred>\" accept=\"<pred>\"".into(),
                    ));
                }
                let mut offer = None;
                let mut accept = None;
                for tok in &tokens[2..] {
                    let (key, value) = tok
                        .split_once('=')
                        .ok_or_else(|| fail(format!("expected key=value, found {tok:?}")))?;
                    let pred = Predicate::parse(value).map_err(|e| fail(format!("{key}: {e}")))?;
                    match key {
                        "offer" => offer = Some(pred),
                        "accept" => accept = Some(pred),
                        other => return Err(fail(format!("unknown attribute {other:?}"))),
                    }
                }
                lenses.push(LensCheck {
                    name: tokens[1].clone(),
                    lens: PredicateLens::new(
                        offer.ok_or_else(|| fail("missing offer=".into()))?,
                        accept.ok_or_else(|| fail("missing accept=".into()))?,
                    ),
                });
            }
            "samples" if tokens.len() == 2 => {
                samples = tokens[1].parse().map_err(|_| fail("bad sample count".into()))?;
            }
            "universe" if tokens.len() == 3 => {
                let low: i64 = tokens[1].parse().map_err(|_| fail("bad universe".into()))?;
                let high: i64 = tokens[2].parse().map_err(|_| fail("bad universe".into()))?;
                if low > high {
                    return Err(fail("universe low bound exceeds high bound".into()));
                }
                universe = low..=high;
            }
            "seed" if tokens.len() == 2 => {
                seed = tokens[1].parse().map_err(|_| fail("bad seed".into()))?;
            }
            other => return Err(fail(format!("unknown statement {other:?}"))),
        }
    }
    if lenses.is_empty() {
        return Err("no lenses declared".into());
    }
    Ok(LensFile {
        lenses,
        samples,
        universe,
        seed,
    })
}

/// Whitespace tokenizer honoring double quotes and `#` comments.
fn split_quoted(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut started = false;
    let mut chars = line.chars();
    loop {
        match chars.next() {
            None | Some('#') => break,
            Some('"') => {
                started = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some(c) => current.push(c),
                        None => return Err("unterminated quote".into()),
                    }
                }
            }
            Some(c) if c.is_whitespace() => {
                if started {
                    tokens.push(std::mem::take(&mut current));
                    started = false;
                }
            }
            Some(c) => {
                started = true;
                current.push(c);
            }
        }
    }
    if started {
        tokens.push(current);
    }
    Ok(tokens)
}

fn cmd_check_lens(path: &Path) -> ExitCode {
    let text = match read_input(path) {
        Ok(text) => text,
        Err(code) => return code,
    };
    let file = match parse_lens_file(&text) {
        Ok(file) => file,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let mut all_ok = true;
    for check in &file.lenses {
        let report: LawReport = match check.lens.fuzz_well_behaved(
            file.universe.clone(),
            file.samples,
            file.seed,
        ) {
            Ok(report) => report,
            Err(e) => {
                eprintln!("error: lens {}: {e}", check.name);
                return ExitCode::from(2);
            }
        };
        if report.ok() {
            println!(
                "lens {}: well-behaved ({} samples, GetPut and PutGet hold)",
                check.name, report.samples
            );
        } else {
            all_ok = false;
            println!(
                "lens {}: NOT well-behaved ({} counterexamples in {} samples)",
                check.name,
                report.counterexamples.len(),
                report.samples
            );
            for violation in report.counterexamples.iter().take(5) {
                println!("  {violation}");
            }
        }
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_check_hom(path: &Path) -> ExitCode {
    let text = match read_input(path) {
        Ok(text) => text,
        Err(code) => return code,
    };
    let (a, b, h) = match parse_fsm_file(&text) {
        Ok(parsed) => parsed,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    match check_homomorphism(&a, &b, &h) {
        Ok(report) => {
            println!("{} -> {}: {report}", a.name(), b.name());
            if report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            ExitCode::from(2)
        }
    }
}
