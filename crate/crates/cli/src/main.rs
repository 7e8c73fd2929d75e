use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctlab_cli::config::Scenario;
use ctlab_cli::error::CliError;
use ctlab_cli::report::{emit_report, parse_formats, Format};
use ctlab_cli::run::{run_scenario, Command};

#[derive(Parser)]
#[command(name = "ctlab", version, about = "Numerical checks for charge transfer Schrodinger models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bound states of each scalar potential
    BoundStates(Common),
    /// Propagate the initial datum and report conservation diagnostics
    Propagate(Common),
    /// Fit the decay rate of the evolved datum
    VerifyDecay(Common),
    /// Strichartz ratios over admissible pairs
    VerifyStrichartz(Common),
    /// Channel decomposition, wave-operator tails and the completeness residual
    VerifyAc(Common),
    /// Admissibility, stability and frame reduction of matrix potentials
    MatrixDiagnose(Common),
    /// Split-step against the dense Crank-Nicolson reference
    OracleCompare(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file; repeat to run a batch. Defaults to a built-in preset.
    #[arg(long)]
    config: Vec<PathBuf>,
    /// Output directory; each scenario writes into `<out>/<name>/`.
    #[arg(long, env = "CTLAB_OUT_DIR", default_value = "ctlab-out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batch runs.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "json,csv,svg", value_parser = parse_formats)]
    formats: BTreeSet<Format>,
}

fn split(cmd: Cmd) -> (Command, Common) {
    match cmd {
        Cmd::BoundStates(c) => (Command::BoundStates, c),
        Cmd::Propagate(c) => (Command::Propagate, c),
        Cmd::VerifyDecay(c) => (Command::VerifyDecay, c),
        Cmd::VerifyStrichartz(c) => (Command::VerifyStrichartz, c),
        Cmd::VerifyAc(c) => (Command::VerifyAc, c),
        Cmd::MatrixDiagnose(c) => (Command::MatrixDiagnose, c),
        Cmd::OracleCompare(c) => (Command::OracleCompare, c),
    }
}

fn run_one(cmd: Command, mut scenario: Scenario, opts: &Common) -> Result<i32, CliError> {
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    let dir = opts.out.join(&scenario.name);
    let report = run_scenario(cmd, &scenario, &dir)?;
    emit_report(&report, &dir, &opts.formats)?;
    for e in &report.errors {
        eprintln!("{}: {} failed: {}", scenario.name, e.estimator, e.message);
    }
    for g in &report.diagnostics.guard_trips {
        eprintln!("{}: guard tripped: {g}", scenario.name);
    }
    for a in report.assertions.iter().filter(|a| !a.passed) {
        eprintln!("{}: assertion {} failed: {}", scenario.name, a.name, a.detail);
    }
    println!("{}: {} rows -> {}", scenario.name, report.rows.len(), dir.display());
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, opts) = split(cli.command);
    let scenarios = if opts.config.is_empty() {
        vec![Ok(cmd.preset())]
    } else {
        opts.config.iter().map(|p| Scenario::load(p)).collect::<Vec<_>>()
    };
    let scenarios = match scenarios.into_iter().collect::<Result<Vec<_>, _>>() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let codes: Vec<i32> = pool.install(|| {
        use rayon::prelude::*;
        scenarios
            .into_par_iter()
            .map(|s| {
                run_one(cmd, s, &opts).unwrap_or_else(|e| {
                    eprintln!("error: {e}");
                    e.exit_code()
                })
            })
            .collect()
    });
    // The most severe code wins: validation, solver, guard, assertion.
    let code = [2, 3, 4, 1].into_iter().find(|c| codes.contains(c)).unwrap_or(0);
    ExitCode::from(code as u8)
}
