use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use wg_elasticity::bench::{
    emit_table, find_case, run_convergence, run_locking_sweep, selftest::run_selftest, BenchError, ConvergenceReport,
    RunConfig, TableFormat,
};
use wg_elasticity::{Algorithm, Lame, SolverMethod, SolverOptions};

#[derive(Parser)]
#[command(name = "wg-elasticity", version, about = "Weak Galerkin elasticity convergence and locking studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error table for one case, algorithm and (mu, lambda).
    Converge {
        #[arg(long)]
        case: String,
        #[arg(long, default_value = "new")]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[command(flatten)]
        common: Common,
    },
    /// One table per (algorithm, lambda).
    Locking {
        #[arg(long)]
        case: String,
        #[arg(long, value_delimiter = ',', default_value = "new,standard")]
        algorithms: Vec<Algorithm>,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,1e2,1e4,1e6,1e8")]
        lambdas: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Runs the invariant checks and prints a JSON summary.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Cells per side in 2D, refinement levels in 3D.
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    quad_rhs: usize,
    #[arg(long, default_value_t = 6)]
    quad_err: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value = "auto")]
    solver: SolverMethod,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> RunConfig {
        RunConfig {
            quad_rhs: self.quad_rhs,
            quad_err: self.quad_err,
            solver: SolverOptions { method: self.solver, tol: self.tol, ..SolverOptions::default() },
        }
    }

    fn emit(&self, reports: &[ConvergenceReport]) -> Result<(), BenchError> {
        emit_table(reports, self.format, self.out.as_deref())
    }
}

fn failure(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "status": "error", "kind": kind, "message": message }));
    ExitCode::FAILURE
}

fn run(command: Command) -> Result<ExitCode, BenchError> {
    match command {
        Command::Converge { case, algorithm, mu, lambda, common } => {
            let case = find_case(&case).ok_or(BenchError::UnknownCase(case))?;
            let lame = Lame::new(mu, lambda)?;
            let report = run_convergence(&case, algorithm, lame, &common.levels, &common.config())?;
            common.emit(&[report])?;
        }
        Command::Locking { case, algorithms, mu, lambdas, common } => {
            let case = find_case(&case).ok_or(BenchError::UnknownCase(case))?;
            let reports = run_locking_sweep(&case, &algorithms, mu, &lambdas, &common.levels, &common.config())?;
            common.emit(&reports)?;
        }
        Command::Selftest => {
            let report = run_selftest();
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            if !report.passed {
                let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                return Ok(failure("invariant", format!("failed checks: {}", failed.join(", "))));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let kind = match &e {
                BenchError::UnknownCase(_) | BenchError::InvalidLevels | BenchError::NoLambdas => "usage",
                BenchError::Solver { .. } => "solver",
                BenchError::Io(_) => "io",
                _ => "setup",
            };
            failure(kind, e.to_string())
        }
    }
}
