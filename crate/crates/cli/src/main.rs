use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqcal::testbeds::{Testbed, PROTOCOL_HEADER};
use seqcal_cli::experiment::{run_experiment, worker_count};
use seqcal_cli::spec::ExperimentSpec;
use seqcal_cli::{output, report};

#[derive(Parser)]
#[command(name = "seqcal", version, about = "Sequential design of simulation experiments for calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method on every replicate of an experiment spec.
    Run {
        spec: PathBuf,
        /// Overrides `output_dir` from the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a results directory.
    Report { dir: PathBuf },
    /// Evaluate a built-in testbed once, natural units: x₁ … x_q θ₁ … θ_p.
    Simulate {
        testbed: String,
        #[arg(allow_negative_numbers = true)]
        z: Vec<f64>,
    },
    /// Serve a built-in testbed over the external-simulator protocol on stdio.
    #[command(hide = true)]
    Serve { testbed: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { spec, out } => cmd_run(spec, out),
        Command::Report { dir } => cmd_report(dir),
        Command::Simulate { testbed, z } => cmd_simulate(&testbed, &z),
        Command::Serve { testbed } => cmd_serve(&testbed),
    }
}

fn cmd_run(path: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let resolved = match ExperimentSpec::load(&path).and_then(|s| s.resolve()) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };
    let dir = out.or_else(|| resolved.spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let workers = worker_count(resolved.spec.workers);
    log::info!("running {} replicates × {} methods on {workers} workers", resolved.spec.replicates, resolved.spec.methods.len());
    let result = run_experiment(&resolved, workers);
    if let Err(err) = output::write_all(&dir, &resolved, &result) {
        eprintln!("error: {err:#}");
        return ExitCode::FAILURE;
    }
    let failed = result.failures();
    if failed > 0 {
        eprintln!("{failed} of {} runs stopped early; completed rows are in {}", result.runs.len(), dir.display());
        return ExitCode::FAILURE;
    }
    println!("wrote {}", dir.display());
    ExitCode::SUCCESS
}

fn cmd_report(dir: PathBuf) -> ExitCode {
    let rep = match report::build(&dir) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(err) = report::write(&dir, &rep) {
        eprintln!("error: {err:#}");
        return ExitCode::FAILURE;
    }
    print!("{}", report::render(&rep));
    ExitCode::SUCCESS
}

fn parse_testbed(name: &str) -> Option<Testbed> {
    let tb = Testbed::parse(name);
    if tb.is_none() {
        eprintln!("error: unknown testbed `{name}`");
    }
    tb
}

fn cmd_simulate(name: &str, z: &[f64]) -> ExitCode {
    let Some(tb) = parse_testbed(name) else { return ExitCode::from(2) };
    let q = tb.q();
    if z.len() != q + tb.p() {
        eprintln!("error: {name} takes {} inputs, got {}", q + tb.p(), z.len());
        return ExitCode::from(2);
    }
    println!("{}", tb.eval(&z[..q], &z[q..]));
    ExitCode::SUCCESS
}

fn cmd_serve(name: &str) -> ExitCode {
    let Some(tb) = parse_testbed(name) else { return ExitCode::from(2) };
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    let mut lines = stdin.lock().lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == PROTOCOL_HEADER => {}
        _ => return ExitCode::from(2),
    }
    if writeln!(stdout, "OK").and_then(|_| stdout.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    for line in lines {
        let Ok(line) = line else { return ExitCode::FAILURE };
        let nums: Vec<f64> = match line.split_whitespace().map(str::parse).collect() {
            Ok(v) => v,
            Err(_) => return ExitCode::from(3),
        };
        let (q, p) = (tb.q(), tb.p());
        if nums.len() != 2 + q + p || nums[0] as usize != q || nums[1] as usize != p {
            return ExitCode::from(3);
        }
        let v = tb.eval(&nums[2..2 + q], &nums[2 + q..]);
        if writeln!(stdout, "{v}").and_then(|_| stdout.flush()).is_err() {
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}
