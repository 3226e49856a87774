//! Command-line front end: scenario files, builtin studies, bound ledgers,
//! the `(rho, ell)` optimizer and certification of the builtin scenarios.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::Study;

#[derive(Debug, Parser)]
#[command(name = "crm", version, about = "Adaptive control with closed-loop reference models")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a scenario, write its trace CSV and metric report, and check
    /// every applicable bound. Exits 2 when a bound is violated.
    Simulate {
        /// Scenario file, or the name of a builtin scenario.
        config: String,
        /// Trace CSV path; defaults to `<out-dir>/<name>.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Report JSON path; defaults to `<out-dir>/<name>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Error level that opens the last control-rate interval.
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
    /// Run a builtin study and write one CSV per variant plus a comparison
    /// JSON.
    Reproduce {
        #[arg(value_enum)]
        study: Study,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print or write the bound ledger of a scenario.
    Bounds {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Error time constants spanned by the first control-rate interval.
        #[arg(long, default_value_t = 3.0)]
        n: f64,
        /// Time-scale separation margin in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
    },
    /// Grid search over `(rho, ell)` minimizing the truncated L2 norm of the
    /// control rate; writes the cost table as CSV.
    Optimize {
        config: String,
        /// Truncation horizon of the cost, in seconds.
        #[arg(long)]
        tau: f64,
        /// Comma-separated effective learning rates.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        /// Comma-separated reference-model gains.
        #[arg(long, value_delimiter = ',')]
        ell: Vec<f64>,
        /// Explicit `rho:ell` point; repeatable, replaces the grid.
        #[arg(long = "point", value_parser = parse_point)]
        points: Vec<(f64, f64)>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Cost-table CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every builtin scenario against its bound ledger.
    Verify {
        /// Directory for per-scenario report JSON files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (rho, ell) = s.split_once(':').ok_or_else(|| format!("expected rho:ell, got {s}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(rho)?, p(ell)?))
}

/// Runs a parsed command and maps failures to exit code 1.
pub fn execute(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::Simulate {
            config,
            csv,
            report,
            out_dir,
            epsilon,
        } => commands::simulate(&commands::SimulateArgs {
            config,
            csv: csv.as_deref(),
            report: report.as_deref(),
            out_dir,
            epsilon: *epsilon,
        }),
        Command::Reproduce { study, out_dir } => commands::reproduce(*study, out_dir),
        Command::Bounds { config, out, n, delta } => commands::bounds_cmd(config, out.as_deref(), *n, *delta),
        Command::Optimize {
            config,
            tau,
            rho,
            ell,
            points,
            jobs,
            out,
        } => commands::optimize(&commands::OptimizeArgs {
            config,
            tau: *tau,
            rho,
            ell,
            points,
            jobs: *jobs,
            out: out.as_deref(),
        }),
        Command::Verify { out_dir } => commands::verify(out_dir.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::EXIT_ERROR
        }
    }
}
