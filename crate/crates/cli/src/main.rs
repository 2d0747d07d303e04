//! Batch front end for the contraction experiments.
//!
//! Exit status: `0` when every asserted inequality holds, `1` when a check or
//! stage fails, `2` for configuration errors and missing input files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpcontract::harness::{
    plotdata_from_report, replay_dual_proof, run_contraction, run_invariant, selftest,
    ExperimentConfig,
};
use fpcontract::Error;

#[derive(Parser)]
#[command(
    name = "fpcontract",
    version,
    about = "Transport-cost contraction experiments for Fokker-Planck flows"
)]
struct Cli {
    /// Output directory, overriding `out_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for sampled checks, overriding `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contraction run: writes report.csv, diagnostics.txt and plotdata/.
    Run { config: PathBuf },
    /// Decay towards the invariant measure: writes decay.csv and diagnostics.txt.
    Invariant { config: PathBuf },
    /// Replay of the duality argument at T: writes replay.txt, diagnostics.txt and plotdata/knm.csv.
    Replay { config: PathBuf },
    /// Closed-form oracle suite.
    Selftest,
    /// Splits a report.csv into per-curve CSV files next to it.
    Plotdata { report: PathBuf },
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config { .. } | Error::Csv(_) => Failure::Usage(e.to_string()),
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Check(e.to_string()),
        }
    }
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "config file not found: {}",
            path.display()
        )));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let report = run_contraction(&cfg)?;
            report.write_all(&cfg.out_dir)?;
            for r in &report.rows {
                println!(
                    "t = {:<8} C_h_lt = {:.6e}  C_h = {:.6e}  bound = {:.6e}  margin = {:.3e}  {}",
                    r.t,
                    r.cost_rescaled,
                    r.cost_h,
                    r.bound,
                    r.margin,
                    if r.pass { "ok" } else { "FAIL" }
                );
            }
            println!("wrote {}", cfg.out_dir.join("report.csv").display());
            let failures = report.failures();
            if !failures.is_empty() {
                return Err(Failure::Check(format!(
                    "contraction: {}",
                    failures.join("; ")
                )));
            }
        }
        Command::Invariant { config } => {
            let cfg = load(cli, config)?;
            let report = run_invariant(&cfg)?;
            report.write_all(&cfg.out_dir)?;
            for r in &report.rows {
                println!(
                    "t = {:<8} C_h = {:.6e}  {}",
                    r.t,
                    r.cost,
                    if r.pass { "ok" } else { "FAIL" }
                );
            }
            if let Some(rate) = report.distance_rate {
                println!("fitted rate = {rate:.6} (lambda = {})", report.lambda);
            }
            if !report.passed() {
                return Err(Failure::Check(
                    "invariant: decay bound or fitted rate".into(),
                ));
            }
        }
        Command::Replay { config } => {
            let cfg = load(cli, config)?;
            let report = replay_dual_proof(&cfg)?;
            report.write_all(&cfg.out_dir)?;
            report.write_text(std::io::stdout())?;
            report.check()?;
        }
        Command::Selftest => {
            let lines = selftest();
            let mut ok = true;
            for l in &lines {
                println!(
                    "{} {}: {}",
                    if l.passed { "PASS" } else { "FAIL" },
                    l.name,
                    l.detail
                );
                ok &= l.passed;
            }
            if !ok {
                let failed: Vec<&str> =
                    lines.iter().filter(|l| !l.passed).map(|l| l.name).collect();
                return Err(Failure::Check(format!("selftest: {}", failed.join(", "))));
            }
        }
        Command::Plotdata { report } => {
            if !report.is_file() {
                return Err(Failure::Usage(format!(
                    "report not found: {}",
                    report.display()
                )));
            }
            let dir = match &cli.out {
                Some(d) => d.clone(),
                None => report.parent().unwrap_or(Path::new(".")).join("plotdata"),
            };
            for f in plotdata_from_report(report, &dir)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("failed: {msg}");
            ExitCode::from(1)
        }
    }
}
