//! Trace CSV and JSON writers.
//!
//! Trace columns, in order (vector signals expand to `name_1 .. name_n`
//! when the state has more than one component):
//!
//! `t, x, [x_a], x_m, [x_m_o], [x_i | x_o], e, [e_o], [e_i | e_obs], u, udot,
//! theta, [theta_hat], r, d, [n]`
//!
//! `x` is the measured state and `x_a` the true state of a noisy plant,
//! `x_m_o` the open-loop model and `e_o = x - x_m_o`, `e_obs = x_o - x`.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use crm_core::metrics::DerivedSignals;
use crm_core::sim::Trace;

fn names(base: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![base.to_string()]
    } else {
        (1..=n).map(|i| format!("{base}_{i}")).collect()
    }
}

type Column<'a> = (Vec<String>, Box<dyn Fn(usize) -> Vec<f64> + 'a>);

fn vec_col<'a>(base: &str, n: usize, v: &'a [DVector<f64>]) -> Column<'a> {
    (names(base, n), Box::new(move |k| v[k].iter().copied().collect()))
}

fn scalar_col<'a>(base: &str, v: &'a [f64]) -> Column<'a> {
    (vec![base.to_string()], Box::new(move |k| vec![v[k]]))
}

fn columns<'a>(trace: &'a Trace, d: &'a DerivedSignals, noisy: bool) -> Vec<Column<'a>> {
    let n = trace.dim();
    let mut cols = vec![scalar_col("t", &trace.t), vec_col("x", n, &trace.x)];
    if noisy {
        cols.push(vec_col("x_a", n, &trace.x_a));
    }
    cols.push(vec_col("x_m", n, &trace.x_m));
    if let Some(v) = &trace.x_m_orm {
        cols.push(vec_col("x_m_o", n, v));
    }
    if let Some(v) = &trace.x_i {
        cols.push(vec_col("x_i", n, v));
    }
    if let Some(v) = &trace.x_o {
        cols.push(vec_col("x_o", n, v));
    }
    cols.push(vec_col("e", n, &d.e));
    if let Some(v) = &d.e_orm {
        cols.push(vec_col("e_o", n, v));
    }
    if let Some(v) = &d.e_i {
        cols.push(vec_col("e_i", n, v));
    }
    if let Some(v) = &d.e_o {
        cols.push(vec_col("e_obs", n, v));
    }
    cols.push(scalar_col("u", &trace.u));
    cols.push(scalar_col("udot", &d.udot));
    cols.push(vec_col("theta", n, &trace.theta));
    if let Some(v) = &trace.theta_hat {
        cols.push(vec_col("theta_hat", n, v));
    }
    cols.push(scalar_col("r", &trace.r));
    cols.push(scalar_col("d", &trace.d));
    if noisy {
        cols.push(vec_col("n", n, &trace.n));
    }
    cols
}

/// Header of the trace CSV.
pub fn trace_header(trace: &Trace, derived: &DerivedSignals, noisy: bool) -> Vec<String> {
    columns(trace, derived, noisy).into_iter().flat_map(|(n, _)| n).collect()
}

/// Writes the trace, limited to the first `max_rows` samples when given.
/// `noisy` adds the true-state and noise columns.
pub fn write_trace<W: Write>(
    out: W,
    trace: &Trace,
    derived: &DerivedSignals,
    noisy: bool,
    max_rows: Option<usize>,
) -> Result<()> {
    let cols = columns(trace, derived, noisy);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(cols.iter().flat_map(|(n, _)| n.iter()))?;
    let rows = max_rows.map_or(trace.len(), |m| m.min(trace.len()));
    let mut record = Vec::new();
    for k in 0..rows {
        record.clear();
        for (_, f) in &cols {
            record.extend(f(k).into_iter().map(|v| v.to_string()));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

/// Writes through a temporary sibling so a failed run leaves no partial file.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    ensure_parent(path)?;
    let mut buf = Vec::new();
    f(&mut buf)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &buf).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &Trace, derived: &DerivedSignals, noisy: bool) -> Result<()> {
    write_atomic(path, |buf| write_trace(buf, trace, derived, noisy, None))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)?;
        buf.push(b'\n');
        Ok(())
    })
}
