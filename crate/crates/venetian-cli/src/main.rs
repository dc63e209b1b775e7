//! Command-line front end: construct runs, analyze them, build plane
//! families, and export stages.
//!
//! Exit codes: 0 success, 2 config error, 3 construction failure,
//! 4 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use venetian::error::Error;
use venetian::runner::{
    self, export_stage, run_analysis, run_construct, run_planes, PlanesResult, RunConfig,
};

#[derive(Parser)]
#[command(name = "venetian", version, about = "Exact slab constructions with injective projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a construction run: schedule, plan, stages, certificates.
    Construct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run verification checks against a (re-built) run.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// comma-separated subset of recursion,wk,boxdim,series,balls,energy
        #[arg(long)]
        checks: Option<String>,
    },
    /// Build a plane family (measure_zero, dimension, dual).
    Planes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run deterministically and export the pieces of one stage.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stage: u32,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_CONSTRUCTION: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::DimensionError { .. }
        | Error::InvalidDirection(_)
        | Error::ConfigMismatch(_)
        | Error::ManifestIncomplete(_) => EXIT_CONFIG,
        Error::StageStarved { .. }
        | Error::PlanInfeasible { .. }
        | Error::PieceCapExceeded { .. }
        | Error::ScheduleSearchExhausted(_)
        | Error::EmptyStage
        | Error::Io(_) => EXIT_CONSTRUCTION,
        Error::SampleNotInjective { .. }
        | Error::OrthogonalLines
        | Error::DegeneratePiece
        | Error::InsufficientDepth { .. }
        | Error::CaseRangeError { .. }
        | Error::InvalidExponent(_)
        | Error::LineNotInSchedule(_)
        | Error::SlopeUndefined => EXIT_VERIFICATION,
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Construct { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let output = run_construct(&cfg)?;
            runner::write_run(&output, &out)?;
            for c in &output.certificates {
                println!(
                    "stage {:>3}: count {:>8}  certified={} ordering={}",
                    c.k, c.count, c.certified, c.ordering_ok
                );
            }
            for p in &output.persistence {
                println!(
                    "persistence user {} @ stage {}: {} checked, {} violations",
                    p.user, p.occurrence_stage, p.checked, p.violations
                );
            }
            if !output.all_certified() || !output.persistence_ok() || !output.mass_ok {
                eprintln!("verification failure: see certificates/persistence above");
                return Ok(EXIT_VERIFICATION);
            }
            println!("construct ok: {} stages, deepest count {}", output.ledger.depth(), output.deepest.count());
            Ok(0)
        }
        Command::Analyze { config, out, seed, checks } => {
            let cfg = load_config(&config, seed)?;
            let checks_vec: Vec<String> = checks
                .map(|c| c.split(',').map(|s| s.trim().to_string()).collect())
                .unwrap_or_default();
            let check_refs: Vec<&str> = checks_vec.iter().map(|s| s.as_str()).collect();
            let (output, reports) = run_analysis(&cfg, &check_refs)?;
            std::fs::create_dir_all(&out)?;
            runner::write_run(&output, &out)?;
            let json = serde_json::to_string_pretty(&reports)
                .map_err(|e| Error::InvalidInput(format!("serialize reports: {e}")))?;
            std::fs::write(out.join("reports.json"), json)?;
            if let Some(rec) = &reports.recursion {
                println!("recursion: {} rows, all_within={}", rec.rows.len(), rec.all_within);
            }
            if let Some(ok) = reports.wk_all_ok {
                println!("wk sandwich: all_ok={ok}");
            }
            for (u, slope) in &reports.box_slopes {
                println!("box slope (user {u}): {slope:.4}");
            }
            if let Some(b) = &reports.balls {
                println!(
                    "balls: {} samples, {} lower violations, {} inconclusive",
                    b.total_samples, b.total_lower_violations, b.total_inconclusive
                );
            }
            for (k, e) in &reports.energy {
                println!("energy stage {k}: cross={:.6e} (s={})", e.cross_term, e.s);
            }
            if reports.hard_failures.is_empty() {
                println!("analyze ok");
                Ok(0)
            } else {
                for f in &reports.hard_failures {
                    eprintln!("verification failure: {f}");
                }
                Ok(EXIT_VERIFICATION)
            }
        }
        Command::Planes { config, out, mode, seed } => {
            let cfg = load_config(&config, seed)?;
            let (_output, result) = run_planes(&cfg, &mode)?;
            std::fs::create_dir_all(&out)?;
            match result {
                PlanesResult::Family(fam) => {
                    std::fs::write(out.join("family.json"), runner::family_json(&fam)?)?;
                    println!(
                        "family: {} planes, {} pairs checked, {} disjoint failures, {} parallel failures",
                        fam.planes.len(),
                        fam.report.pairs_checked,
                        fam.report.disjoint_failures,
                        fam.report.parallel_failures
                    );
                    if fam.report.disjoint_failures + fam.report.parallel_failures > 0 {
                        return Ok(EXIT_VERIFICATION);
                    }
                }
                PlanesResult::Dual { family, section_certified, deepest_slope } => {
                    std::fs::write(out.join("sections.csv"), runner::sections_csv(&family))?;
                    let json = serde_json::to_string_pretty(&family.hyperplanes)
                        .map_err(|e| Error::InvalidInput(format!("serialize: {e}")))?;
                    std::fs::write(out.join("hyperplanes.json"), json)?;
                    println!(
                        "dual: {} hyperplanes, {} verticals, sections certified={}, deepest slope {:.4}",
                        family.hyperplanes.len(),
                        family.sections.len(),
                        section_certified,
                        deepest_slope
                    );
                    if !section_certified {
                        return Ok(EXIT_VERIFICATION);
                    }
                }
            }
            println!("planes ok");
            Ok(0)
        }
        Command::Export { config, out, stage } => {
            let cfg = load_config(&config, None)?;
            let path = export_stage(&cfg, stage, &out)?;
            println!("exported {}", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
