//! `osserman-lab`: hypothesis checks, campaigns and rate fits from the shell.
//!
//! Exit codes: 0 ok, 1 input error, 2 certificate failure, 3 campaign
//! failure, 4 analysis error.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;
mod check;
mod problem;
mod solve;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use osserman_core::drivers::{fit_rate_pairs, DriverError};
use osserman_core::expr::{ExprFn, Params, ScalarFunctionExpr, Var};
use osserman_core::mesh::{read_xy_csv, Sides};
use osserman_core::model::{keller_osserman, profile_vars, ModelError};
use osserman_core::quad::TailOptions;

use crate::problem::{parse_schedule, ProblemFile};
use crate::solve::{run_solve, Overrides};

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Certificate(String),
    Campaign(String),
    Analysis(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Certificate(_) => 2,
            Failure::Campaign(_) => 3,
            Failure::Analysis(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Certificate(m) | Failure::Campaign(m) | Failure::Analysis(m) => m,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Input(_) => "input error",
            Failure::Certificate(_) => "certificate failure",
            Failure::Campaign(_) => "campaign failure",
            Failure::Analysis(_) => "analysis error",
        }
    }
}

#[derive(Parser)]
#[command(name = "osserman-lab", version, about = "Boundary blow-up solutions of gradient-coupled elliptic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural hypotheses of a problem file.
    Check {
        problem: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run the campaign of one or more problem files.
    Solve {
        #[arg(required = true)]
        problems: Vec<PathBuf>,
        /// Output directory; with several problems, one subdirectory per file stem.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skip_check: bool,
        /// `1,2,4,8` or `2^0..2^14`.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        mesh_cells: Option<usize>,
        #[arg(long)]
        min_spacing: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Fit `u ~ C d^-tau` to an `(x, u)` CSV.
    Rate {
        csv: PathBuf,
        #[arg(long, num_args = 2, value_names = ["D_MIN", "D_MAX"], required = true)]
        window: Vec<f64>,
        /// Domain endpoints; defaults to the first and last `x`.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        bounds: Option<Vec<f64>>,
        /// Endpoints the distance is measured to.
        #[arg(long, value_enum, default_value = "both")]
        side: Side,
        #[arg(long)]
        json: bool,
    },
    /// Keller–Osserman test for a profile `h(t)`.
    Ko {
        expr: String,
        /// Named constant, `name=value`; may repeat.
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Both,
    Left,
    Right,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { problem, json } => cmd_check(&problem, json),
        Command::Solve {
            problems,
            out,
            skip_check,
            schedule,
            mesh_cells,
            min_spacing,
            json,
        } => schedule
            .as_deref()
            .map(parse_schedule)
            .transpose()
            .and_then(|schedule| {
                let ov = Overrides {
                    skip_check,
                    schedule,
                    mesh_cells,
                    min_spacing,
                };
                cmd_solve(&problems, &out, &ov, json)
            }),
        Command::Rate {
            csv,
            window,
            bounds,
            side,
            json,
        } => cmd_rate(&csv, (window[0], window[1]), bounds.map(|b| (b[0], b[1])), side, json),
        Command::Ko { expr, params, json } => cmd_ko(&expr, &params, json),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("osserman-lab: {}: {}", f.kind(), f.message());
            ExitCode::from(f.code())
        }
    }
}

fn cmd_check(path: &Path, as_json: bool) -> Result<u8, Failure> {
    let (problem, _) = ProblemFile::load(path)?;
    let outcome = check::run_check(&problem)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&outcome.to_json()).expect("serializes"));
    } else {
        for line in outcome.summary_lines() {
            println!("{line}");
        }
    }
    Ok(if outcome.passed { 0 } else { 2 })
}

/// Worker count for batch runs: `OSSERMAN_LAB_THREADS`, else the machine's
/// parallelism, never more than the number of jobs.
fn batch_threads(jobs: usize) -> Result<usize, Failure> {
    let cap = match std::env::var("OSSERMAN_LAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Input(format!("OSSERMAN_LAB_THREADS must be a positive integer, got `{v}`")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(cap.min(jobs).max(1))
}

fn cmd_solve(problems: &[PathBuf], out: &Path, ov: &Overrides, as_json: bool) -> Result<u8, Failure> {
    if problems.len() == 1 {
        let run = run_solve(&problems[0], out, ov)?;
        report_run(&run.summary, as_json);
        return Ok(run.code);
    }
    let mut dirs = Vec::new();
    for p in problems {
        let stem = p
            .file_stem()
            .ok_or_else(|| Failure::Input(format!("{} has no file name", p.display())))?;
        let dir = out.join(stem);
        if dirs.contains(&dir) {
            return Err(Failure::Input(format!("two problems share the output directory {}", dir.display())));
        }
        dirs.push(dir);
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<solve::RunSummary, Failure>>>> =
        Mutex::new((0..problems.len()).map(|_| None).collect());
    std::thread::scope(|s| -> Result<(), Failure> {
        for _ in 0..batch_threads(problems.len())? {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= problems.len() {
                    break;
                }
                let r = run_solve(&problems[k], &dirs[k], ov);
                results.lock().expect("no worker panicked")[k] = Some(r);
            });
        }
        Ok(())
    })?;

    let mut worst = 0;
    for (p, r) in problems.iter().zip(results.into_inner().expect("no worker panicked")) {
        match r.expect("every job ran") {
            Ok(run) => {
                report_run(&run.summary, as_json);
                worst = worst.max(run.code);
            }
            Err(f) => {
                eprintln!("osserman-lab: {}: {}: {}", p.display(), f.kind(), f.message());
                worst = worst.max(f.code());
            }
        }
    }
    Ok(worst)
}

fn report_run(summary: &serde_json::Value, as_json: bool) {
    if as_json {
        println!("{}", serde_json::to_string_pretty(summary).expect("serializes"));
    } else {
        println!("{} -> {} (exit {})", summary["problem"].as_str().unwrap_or_default(), summary["out"].as_str().unwrap_or_default(), summary["exit_code"]);
        if let Some(obj) = summary["result"].as_object() {
            for (k, v) in obj {
                println!("  {k}: {v}");
            }
        }
    }
}

fn cmd_rate(path: &Path, window: (f64, f64), bounds: Option<(f64, f64)>, side: Side, as_json: bool) -> Result<u8, Failure> {
    let file = File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let (xs, us) = read_xy_csv(file).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if xs.is_empty() {
        return Err(Failure::Input(format!("{}: no data rows", path.display())));
    }
    let (a, b) = bounds.unwrap_or((xs[0], xs[xs.len() - 1]));
    if !(a < b) {
        return Err(Failure::Input(format!("bounds must satisfy a < b, got ({a}, {b})")));
    }
    let sides = match side {
        Side::Both => Sides::BOTH,
        Side::Left => Sides::LEFT,
        Side::Right => Sides::RIGHT,
    };
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(&us)
        .map(|(&x, &u)| {
            let mut d = f64::INFINITY;
            if sides.left {
                d = d.min(x - a);
            }
            if sides.right {
                d = d.min(b - x);
            }
            (d, u)
        })
        .collect();
    let fit = fit_rate_pairs(&pairs, window).map_err(|e| match e {
        DriverError::WindowTooSparse { .. } => Failure::Analysis(e.to_string()),
        other => Failure::Input(other.to_string()),
    })?;
    if as_json {
        println!("{}", fit.to_json());
    } else {
        println!("C={:.6} tau={:.6} residual={:e} nodes={}", fit.c, fit.tau, fit.residual, fit.nodes);
    }
    Ok(0)
}

fn cmd_ko(source: &str, raw_params: &[String], as_json: bool) -> Result<u8, Failure> {
    let mut params = Params::new();
    for p in raw_params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("--param expects NAME=VALUE, got `{p}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| Failure::Input(format!("--param {k}: `{v}` is not a number")))?;
        params.insert(k.trim().to_string(), v);
    }
    let h = ScalarFunctionExpr::parse(source, profile_vars(), &params)
        .map_err(|e| Failure::Input(format!("`{source}`: {e}")))?;
    let report = keller_osserman(&ExprFn::new(&h, Var::T), &TailOptions::default()).map_err(|e| match e {
        ModelError::Inconclusive { .. } => Failure::Analysis(e.to_string()),
        other => Failure::Input(other.to_string()),
    })?;
    if as_json {
        let v = json!({ "expr": source, "report": report });
        println!("{}", serde_json::to_string_pretty(&v).expect("serializes"));
    } else {
        println!(
            "converges={} integral={:.6} error_estimate={:e} decay_exponent={:.6}",
            report.converges, report.integral, report.error_estimate, report.decay_exponent
        );
    }
    Ok(0)
}
