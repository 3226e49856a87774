//! Subcommand implementations. Each returns the process exit code for a
//! completed run; configuration and I/O failures surface as errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;

use crm_core::bounds::{self, BoundLedger, OptimizeResult};
use crm_core::metrics::{self, CheckOptions, DerivedSignals, MetricReport};
use crm_core::sim::{self, Trace};

use crate::config::{self, Loaded};
use crate::output;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

/// One integrated and certified scenario.
pub struct Run {
    pub loaded: Loaded,
    pub trace: Trace,
    pub derived: DerivedSignals,
    pub ledger: BoundLedger,
    pub report: MetricReport,
}

impl Run {
    pub fn noisy(&self) -> bool {
        self.loaded.scenario.has_noise()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        output::write_trace_file(path, &self.trace, &self.derived, self.noisy())
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        output::write_trace(&mut buf, &self.trace, &self.derived, self.noisy(), None)?;
        Ok(buf)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = self.loaded.warnings.clone();
        w.extend(self.ledger.warnings.iter().cloned());
        w
    }
}

/// Writes command output to stdout; a reader that closed the pipe early is
/// not an error.
fn emit(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

pub fn run(loaded: Loaded, opts: &CheckOptions) -> Result<Run> {
    let sc = &loaded.scenario;
    for w in &loaded.warnings {
        warn!("{}: {w}", sc.name);
    }
    let trace = match sim::integrate(sc) {
        Ok(t) => t,
        Err(crm_core::Error::NonFinite { t, .. }) => bail!("{} diverged at t = {t}", sc.name),
        Err(e) => return Err(e.into()),
    };
    let derived = metrics::derive_signals(&trace, sc)?;
    let ledger = bounds::scenario_ledger(sc)?;
    let report = metrics::check_bounds(&trace, &derived, &ledger, sc, opts)?;
    info!(
        "{}: {} samples, {} checks, {} violations",
        sc.name,
        trace.len(),
        report.checks.len(),
        report.violations.len()
    );
    Ok(Run {
        loaded,
        trace,
        derived,
        ledger,
        report,
    })
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    scenario: &'a str,
    warnings: Vec<String>,
    ledger: &'a BoundLedger,
    metrics: &'a MetricReport,
}

fn resolve(given: Option<&Path>, configured: Option<&PathBuf>, out_dir: &Path, default: String) -> PathBuf {
    given
        .map(Path::to_path_buf)
        .or_else(|| configured.cloned())
        .unwrap_or_else(|| out_dir.join(default))
}

pub struct SimulateArgs<'a> {
    pub config: &'a str,
    pub csv: Option<&'a Path>,
    pub report: Option<&'a Path>,
    pub out_dir: &'a Path,
    pub epsilon: f64,
}

pub fn simulate(args: &SimulateArgs<'_>) -> Result<u8> {
    let loaded = config::load(args.config)?;
    let name = loaded.scenario.name.clone();
    let csv = resolve(args.csv, loaded.config.outputs.csv.as_ref(), args.out_dir, format!("{name}.csv"));
    let report_path = resolve(
        args.report,
        loaded.config.outputs.report.as_ref(),
        args.out_dir,
        format!("{name}.report.json"),
    );
    let horizon = loaded.scenario.horizon;
    let opts = CheckOptions {
        epsilon: args.epsilon,
        taus: vec![horizon],
        regions: vec![(0.0, horizon)],
    };
    let r = run(loaded, &opts)?;
    r.write_csv(&csv)?;
    output::write_json(
        &report_path,
        &SimulationReport {
            scenario: &name,
            warnings: r.warnings(),
            ledger: &r.ledger,
            metrics: &r.report,
        },
    )?;
    print_checks(&r.report);
    Ok(if r.report.passed() { EXIT_OK } else { EXIT_VIOLATION })
}

fn print_checks(report: &MetricReport) {
    for c in &report.checks {
        let status = match (c.applicable, c.passed) {
            (false, _) => "n/a ",
            (true, true) => "pass",
            (true, false) => "FAIL",
        };
        let margin = c.worst_margin.map_or(String::new(), |m| format!(" margin={m:.3e}"));
        let note = if c.note.is_empty() { String::new() } else { format!(" ({})", c.note) };
        println!("{:<16} {:<24} {status}{margin}{note}", report.scenario, c.name);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    Sec4,
    Sec7,
    Waterbed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Region {
    pub name: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub architecture: crm_core::adaptlaw::Architecture,
    pub ell: f64,
    pub rho: f64,
    pub gamma: f64,
    pub csv: String,
    /// RMS of the control rate per region, in region order.
    pub rms_udot: Vec<f64>,
    pub sup_udot: Vec<f64>,
    pub truncated_l2_udot: f64,
    pub tau: f64,
    /// First time after which `||e|| < settle_level` for the rest of the run.
    pub settle_time: Option<f64>,
    pub settle_level: f64,
    pub max_theta_norm: f64,
    pub max_theta_hat_norm: Option<f64>,
    pub theta_max: f64,
    pub checks_passed: bool,
    pub violations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub study: String,
    pub regions: Vec<Region>,
    pub variants: Vec<VariantSummary>,
    /// Named boolean outcomes of the qualitative comparisons.
    pub findings: Vec<(String, bool)>,
}

impl Comparison {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }
}

const SETTLE_LEVEL: f64 = 0.05;

fn settle_time(trace: &Trace, e: &[f64], level: f64, before: f64) -> Option<f64> {
    let end = trace.t.iter().position(|t| *t >= before).unwrap_or(trace.len());
    let mut settle = None;
    for k in (0..end).rev() {
        if e[k] >= level {
            break;
        }
        settle = Some(trace.t[k]);
    }
    settle
}

fn summarize(r: &Run, regions: &[Region], tau: f64, csv: &str) -> Result<VariantSummary> {
    let sc = &r.loaded.scenario;
    let udot = r.derived.norms(&r.trace, "udot")?;
    let e = r.derived.norms(&r.trace, "e")?;
    let last_region_end = regions.first().map_or(sc.horizon, |g| g.end);
    let theta = r.derived.norms(&r.trace, "theta")?;
    let theta_hat = r.derived.norms(&r.trace, "theta_hat").ok();
    Ok(VariantSummary {
        name: sc.name.clone(),
        architecture: sc.controller.kind,
        ell: sc.ell(),
        rho: r.ledger.rho,
        gamma: sc.gamma(),
        csv: csv.to_string(),
        rms_udot: regions.iter().map(|g| metrics::rms_over(&r.trace, &udot, g.start, g.end)).collect(),
        sup_udot: regions.iter().map(|g| metrics::sup_over(&r.trace, &udot, g.start, g.end)).collect(),
        truncated_l2_udot: metrics::l2_norm(&udot, r.trace.step, tau),
        tau,
        settle_time: settle_time(&r.trace, &e, SETTLE_LEVEL, last_region_end),
        settle_level: SETTLE_LEVEL,
        max_theta_norm: theta.iter().copied().fold(0.0, f64::max),
        max_theta_hat_norm: theta_hat.map(|v| v.into_iter().fold(0.0, f64::max)),
        theta_max: r.ledger.theta_max,
        checks_passed: r.report.passed(),
        violations: r.report.violations.len(),
        warnings: r.warnings(),
    })
}

fn regions(marks: &[(&str, f64, f64)]) -> Vec<Region> {
    marks
        .iter()
        .map(|(n, a, b)| Region {
            name: n.to_string(),
            start: *a,
            end: *b,
        })
        .collect()
}

/// Variants and region markers of a study.
pub fn study_layout(study: Study) -> (&'static str, Vec<&'static str>, Vec<Region>, f64) {
    match study {
        Study::Sec4 => (
            "sec4",
            vec!["sec4_open", "sec4_closed"],
            regions(&[("region1", 0.0, 10.0), ("region2", 10.0, 20.0), ("region3", 20.0, 35.0)]),
            35.0,
        ),
        Study::Sec7 => (
            "sec7",
            vec!["sec7_cmrac", "sec7_cmracco"],
            regions(&[("region1", 0.0, 4.0), ("region2", 4.0, 15.0)]),
            15.0,
        ),
        Study::Waterbed => (
            "waterbed",
            vec!["waterbed_orm", "waterbed_crm_opt", "waterbed_crm_bad"],
            regions(&[("region1", 0.0, 10.0)]),
            10.0,
        ),
    }
}

/// Runs every variant of a study; CSVs go to `out_dir` when given.
pub fn reproduce_study(study: Study, out_dir: Option<&Path>) -> Result<(Comparison, Vec<Run>)> {
    let (name, variants, regions, tau) = study_layout(study);
    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    for v in variants {
        let loaded = config::load_builtin(v)?;
        let opts = CheckOptions {
            taus: vec![tau],
            regions: regions.iter().map(|g| (g.start, g.end)).collect(),
            ..CheckOptions::default()
        };
        let r = run(loaded, &opts)?;
        let csv = format!("{v}.csv");
        if let Some(dir) = out_dir {
            r.write_csv(&dir.join(&csv))?;
        }
        summaries.push(summarize(&r, &regions, tau, &csv)?);
        runs.push(r);
    }
    let find = |n: &str| summaries.iter().find(|s| s.name == n).expect("variant present");
    let findings = match study {
        Study::Sec4 => {
            let closed = find("sec4_closed");
            vec![(
                "closed_loop_settles_before_region2".to_string(),
                closed.settle_time.is_some_and(|t| t < 10.0),
            )]
        }
        Study::Sec7 => {
            let (c, co) = (find("sec7_cmrac"), find("sec7_cmracco"));
            let contained = |s: &VariantSummary| {
                s.max_theta_norm <= s.theta_max && s.max_theta_hat_norm.is_none_or(|m| m <= s.theta_max)
            };
            vec![
                ("observer_feedback_smoother_in_region2".to_string(), co.rms_udot[1] < c.rms_udot[1]),
                ("parameters_contained".to_string(), contained(c) && contained(co)),
            ]
        }
        Study::Waterbed => {
            let (opt, orm, bad) = (find("waterbed_crm_opt"), find("waterbed_orm"), find("waterbed_crm_bad"));
            vec![
                (
                    "closed_loop_below_open_loop".to_string(),
                    opt.truncated_l2_udot < orm.truncated_l2_udot,
                ),
                (
                    "open_loop_below_badly_tuned".to_string(),
                    orm.truncated_l2_udot < bad.truncated_l2_udot,
                ),
            ]
        }
    };
    Ok((
        Comparison {
            study: name.to_string(),
            regions,
            variants: summaries,
            findings,
        },
        runs,
    ))
}

pub fn reproduce(study: Study, out_dir: &Path) -> Result<u8> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let (cmp, _) = reproduce_study(study, Some(out_dir))?;
    output::write_json(&out_dir.join(format!("{}_comparison.json", cmp.study)), &cmp)?;
    for v in &cmp.variants {
        let rms: Vec<String> = v.rms_udot.iter().map(|x| format!("{x:.4}")).collect();
        println!(
            "{:<18} rms_udot=[{}] l2_udot(tau={})={:.4}",
            v.name,
            rms.join(", "),
            v.tau,
            v.truncated_l2_udot
        );
    }
    for (name, ok) in &cmp.findings {
        println!("{name}: {ok}");
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct LedgerDocument<'a> {
    scenario: &'a str,
    ledger: &'a BoundLedger,
    warnings: Vec<String>,
}

pub fn bounds_cmd(config: &str, out: Option<&Path>, n: f64, delta: f64) -> Result<u8> {
    let loaded = config::load(config)?;
    let sc = &loaded.scenario;
    let mut inputs = bounds::LedgerInputs::from_scenario(sc)?;
    inputs.n_constants = n;
    inputs.delta = delta;
    let ledger = match sc.controller.kind {
        crm_core::adaptlaw::Architecture::CmracCo => bounds::cmrac_ledgers(&inputs)?,
        _ => bounds::direct_ledger(&inputs)?,
    };
    let mut warnings = loaded.warnings.clone();
    warnings.extend(ledger.warnings.iter().cloned());
    for w in &warnings {
        warn!("{w}");
    }
    let doc = LedgerDocument {
        scenario: &sc.name,
        ledger: &ledger,
        warnings,
    };
    match out {
        Some(path) => output::write_json(path, &doc)?,
        None => emit(format!("{}\n", serde_json::to_string_pretty(&doc)?).as_bytes())?,
    }
    Ok(EXIT_OK)
}

pub struct OptimizeArgs<'a> {
    pub config: &'a str,
    pub tau: f64,
    pub rho: &'a [f64],
    pub ell: &'a [f64],
    pub points: &'a [(f64, f64)],
    pub jobs: usize,
    pub out: Option<&'a Path>,
}

pub fn optimize_table(res: &OptimizeResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rho", "ell", "gamma", "cost", "below_ell_star", "diverged"])?;
    for row in &res.table {
        w.write_record([
            row.rho.to_string(),
            row.ell.to_string(),
            row.gamma.to_string(),
            row.cost.to_string(),
            row.below_ell_star.to_string(),
            row.diverged.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

pub fn optimize(args: &OptimizeArgs<'_>) -> Result<u8> {
    let loaded = config::load(args.config)?;
    let sc = &loaded.scenario;
    let res = match (args.points.is_empty(), args.rho.is_empty() || args.ell.is_empty()) {
        (false, true) => bounds::optimize_points(sc, args.tau, args.points, args.jobs)?,
        (true, false) => bounds::optimize_rho_ell(sc, args.tau, args.rho, args.ell, args.jobs)?,
        _ => bail!("give either --point, or both --rho and --ell"),
    };
    for row in res.table.iter().filter(|r| r.below_ell_star) {
        warn!(
            "ell = {} is below ell* = {:.4}; the control-rate interval bounds do not cover it",
            row.ell, res.ell_star
        );
    }
    let table = optimize_table(&res)?;
    match args.out {
        Some(path) => output::write_atomic(path, |buf| {
            buf.extend_from_slice(&table);
            Ok(())
        })?,
        None => emit(&table)?,
    }
    eprintln!("rho_opt={} ell_opt={}", res.rho_opt, res.ell_opt);
    Ok(EXIT_OK)
}

/// Certifies every builtin scenario against its bound ledger.
pub fn verify(out_dir: Option<&Path>) -> Result<u8> {
    let mut failed = false;
    for (name, _) in config::BUILTINS {
        let loaded = config::load_builtin(name)?;
        let horizon = loaded.scenario.horizon;
        let opts = CheckOptions {
            taus: vec![horizon],
            ..CheckOptions::default()
        };
        let r = run(loaded, &opts)?;
        print_checks(&r.report);
        failed |= !r.report.passed();
        if let Some(dir) = out_dir {
            output::write_json(&dir.join(format!("{name}.report.json")), &r.report)?;
        }
    }
    println!("{}", if failed { "verify: violations found" } else { "verify: all applicable bounds hold" });
    Ok(if failed { EXIT_VIOLATION } else { EXIT_OK })
}
