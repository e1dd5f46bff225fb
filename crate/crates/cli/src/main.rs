use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use htring::harness::{self, Outcome, Scenario, SweepError, Verdict};

const USAGE: u8 = 1;

#[derive(Parser)]
#[command(name = "htring", version, about = "Simulate and check HT-Ring Paxos runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario, check it, and write trace.log and metrics.csv.
    Run(RunArgs),
    /// Run one simulation per value of the scenario's sweep axis.
    Sweep(RunArgs),
    /// Re-check a saved trace without simulating.
    Replay {
        /// Trace file written by `run`.
        trace: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed. Sweeps use seed + k for the k-th point.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also draw SVG plots (sweep only).
    #[arg(long)]
    emit_plots: bool,
    /// Check and report without writing any files.
    #[arg(long)]
    check_only: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Run(a) => run(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Replay { trace } => replay(&trace),
    };
    ExitCode::from(code)
}

fn load(a: &RunArgs) -> Result<Scenario, u8> {
    let mut s = Scenario::load(&a.config).map_err(|e| {
        eprintln!("error: {e}");
        USAGE
    })?;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn run(a: &RunArgs) -> u8 {
    let s = match load(a) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let report = harness::simulate(&s);
    print!("{}", report.describe());
    if !a.check_only {
        if let Err(e) = harness::write_outputs(&report, &a.out_dir) {
            eprintln!("error: cannot write {}: {e}", a.out_dir.display());
            return USAGE;
        }
        println!("wrote {}", a.out_dir.display());
    }
    report.outcome().exit_code() as u8
}

fn sweep(a: &RunArgs) -> u8 {
    let s = match load(a) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let res = match harness::run_sweep(&s) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                SweepError::Safety { .. } => Outcome::SafetyViolation.exit_code() as u8,
                _ => USAGE,
            };
        }
    };
    print!("{}", res.csv());
    if !a.check_only {
        if let Err(e) = res.write(&a.out_dir, a.emit_plots) {
            eprintln!("error: {e}");
            return USAGE;
        }
        println!("wrote {}", a.out_dir.display());
    }
    if res.points.iter().any(|p| p.outcome != Outcome::Ok) {
        Outcome::ProgressFailure.exit_code() as u8
    } else {
        0
    }
}

fn replay(path: &Path) -> u8 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return USAGE;
        }
    };
    match harness::replay(&text) {
        Ok(v) => report_verdict(&v),
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            USAGE
        }
    }
}

fn report_verdict(v: &Verdict) -> u8 {
    for c in harness::Check::ALL {
        println!("{}: {}", c.name(), if v.holds(c) { "ok" } else { "FAIL" });
    }
    for x in &v.violations {
        println!("violation {x}");
    }
    if v.ok() {
        0
    } else {
        Outcome::SafetyViolation.exit_code() as u8
    }
}
