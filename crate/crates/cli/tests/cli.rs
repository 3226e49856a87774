//! End-to-end tests of the `crm` binary and the trace writers.
//!
//! Golden files hold the first 100 trace rows of every builtin. Regenerate
//! them with `CRM_UPDATE_GOLDEN=1 cargo test -p crm-cli --test cli`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crm_cli::commands;
use crm_cli::config;
use crm_cli::output;
use crm_core::metrics::CheckOptions;

fn crm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crm"))
        .args(args)
        .arg("--log=error")
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn builtin_trace_prefixes_match_golden_files() {
    let update = std::env::var_os("CRM_UPDATE_GOLDEN").is_some();
    for (name, _) in config::BUILTINS {
        let run = commands::run(config::load_builtin(name).unwrap(), &CheckOptions::default()).unwrap();
        let mut buf = Vec::new();
        output::write_trace(&mut buf, &run.trace, &run.derived, run.noisy(), Some(100)).unwrap();
        let path = golden_dir().join(format!("{name}.csv"));
        if update {
            fs::create_dir_all(golden_dir()).unwrap();
            fs::write(&path, &buf).unwrap();
            continue;
        }
        let expected = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(buf == expected, "{name} differs from {}", path.display());
    }
}

#[test]
fn simulate_writes_identical_files_twice() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = crm(&["simulate", "sec7_cmracco"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["sec7_cmracco.csv", "sec7_cmracco.report.json"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn trace_header_lists_noisy_observer_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = crm(&["simulate", "sec7_cmracco", "--csv", "trace.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,x,x_a,x_m,x_o,e,e_obs,u,udot,theta,theta_hat,r,d,n");
    // one row per sample including t = 0
    assert_eq!(text.lines().count(), 1 + 15_001);
}

const BAD_TOML: &str = "name = \"broken\"\n[plant\na_m = [[-1.0]]\n";

#[test]
fn malformed_config_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), BAD_TOML).unwrap();
    let out = crm(&["simulate", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let csvs = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 0);
}

#[test]
fn unknown_field_and_unknown_builtin_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = config::builtin("waterbed_orm").unwrap().replace("rho = 100.0", "rho = 100.0\nrate = 3.0");
    fs::write(dir.path().join("extra.toml"), text).unwrap();
    assert_eq!(crm(&["simulate", "extra.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(crm(&["simulate", "no_such_scenario"], dir.path()).status.code(), Some(1));
    assert_eq!(crm(&["simulate"], dir.path()).status.code(), Some(1));
    assert_eq!(crm(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn bound_violation_exits_2() {
    // the ideal gain lies outside the assumed ball and projection is off,
    // so the ledger understates the parameter error and the decrease fails
    let text = config::builtin("waterbed_crm_opt")
        .unwrap()
        .replace("vartheta = 3.0", "vartheta = 0.5\nuse_projection = false")
        .replace("epsilon = 1.0", "epsilon = 0.25");
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("loose.toml"), text).unwrap();
    let out = crm(&["simulate", "loose.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    // outputs are still written for inspection
    assert!(dir.path().join("waterbed_crm_opt.csv").exists());
}

fn bounds_json(name: &str) -> serde_json::Value {
    let dir = tempfile::tempdir().unwrap();
    let out = crm(&["bounds", name], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    doc["ledger"].clone()
}

#[test]
fn bounds_reports_closed_loop_constants() {
    let l = bounds_json("sec4_closed");
    // A_m = -1, ell = 10: alpha1 = (sigma + 2 ell) / m^2 with m = 1.5
    assert_eq!(l["rho"], 100.0);
    assert!((l["alpha1"].as_f64().unwrap() - 21.0 / 2.25).abs() < 1e-12);
    assert!((l["beta1"].as_f64().unwrap() - 0.02).abs() < 1e-12);
    assert!((l["thetaMax"].as_f64().unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn bounds_reports_observer_threshold() {
    let l = bounds_json("sec7_cmracco");
    // 4 m^2 |b| vartheta = 18 with vartheta = 2
    assert!((l["ell_doubleprime"].as_f64().unwrap() - 8.5).abs() < 1e-12);
    assert!((l["Delta"].as_f64().unwrap() - 18.0 / 21.0).abs() < 1e-12);
    assert!(l["alpha5"].is_number());
}

fn read_table(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        &csv::StringRecord::from(vec!["rho", "ell", "gamma", "cost", "below_ell_star", "diverged"])
    );
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn optimize_single_point_and_argmin() {
    let dir = tempfile::tempdir().unwrap();
    let out = crm(
        &["optimize", "waterbed_orm", "--tau", "10", "--point", "100:10", "--out", "one.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = read_table(&dir.path().join("one.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "100");
    assert_eq!(&rows[0][2], "1100");

    let out = crm(
        &[
            "optimize", "waterbed_orm", "--tau", "10", "--point", "100:10", "--point", "100:0", "--point", "1:10",
            "--jobs", "3", "--out", "three.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = read_table(&dir.path().join("three.csv"));
    assert_eq!(rows.len(), 3);
    let cheapest = rows
        .iter()
        .min_by(|a, b| a[3].parse::<f64>().unwrap().total_cmp(&b[3].parse::<f64>().unwrap()))
        .unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains(&format!("rho_opt={} ell_opt={}", &cheapest[0], &cheapest[1])),
        "{stderr}"
    );
}

#[test]
fn optimize_rejects_bad_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let out = crm(&["optimize", "waterbed_orm", "--tau", "11", "--rho", "1", "--ell", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reproduce_writes_variants_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = crm(&["reproduce", "sec4", "--out-dir", "out"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    for f in ["sec4_open.csv", "sec4_closed.csv", "sec4_comparison.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }
    let doc: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/sec4_comparison.json")).unwrap()).unwrap();
    assert_eq!(doc["variants"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_passes_on_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let out = crm(&["verify"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
