//! Grid search for the `(rho, ell)` pair minimizing the truncated `L2` norm
//! of the control rate.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matan;
use crate::metrics;
use crate::sim::{self, Scenario};

use super::find_ell_star;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub rho: f64,
    pub ell: f64,
    pub gamma: f64,
    /// `||u_dot||_{L2, tau}`; infinite for diverged runs.
    pub cost: f64,
    /// `ell` is below the time-scale threshold, so the interval bounds do
    /// not cover this point.
    pub below_ell_star: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub rho_opt: f64,
    pub ell_opt: f64,
    pub ell_star: f64,
    pub tau: f64,
    pub table: Vec<CostRow>,
}

/// Evaluates every `(rho, ell)` in the cartesian grid, rows ordered by `ell`
/// then `rho`.
pub fn optimize_rho_ell(
    base: &Scenario,
    tau: f64,
    rho_grid: &[f64],
    ell_grid: &[f64],
    jobs: usize,
) -> Result<OptimizeResult> {
    let points: Vec<(f64, f64)> = ell_grid
        .iter()
        .flat_map(|&ell| rho_grid.iter().map(move |&rho| (rho, ell)))
        .collect();
    optimize_points(base, tau, &points, jobs)
}

/// Evaluates an explicit list of `(rho, ell)` points in the given order.
pub fn optimize_points(base: &Scenario, tau: f64, points: &[(f64, f64)], jobs: usize) -> Result<OptimizeResult> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty (rho, ell) grid".into()));
    }
    if !(tau > 0.0) || tau > base.horizon {
        return Err(Error::InvalidConfig(format!(
            "tau must lie in (0, horizon = {}], got {tau}",
            base.horizon
        )));
    }
    if let Some(&(rho, ell)) = points.iter().find(|(rho, ell)| !(*rho > 0.0) || !(*ell >= 0.0)) {
        return Err(Error::InvalidConfig(format!("invalid grid point rho={rho}, ell={ell}")));
    }
    let consts = matan::spectral_constants(&base.reference_model.a_m)?;
    let ell_star = find_ell_star(
        &consts,
        base.plant.b.norm(),
        base.controller.projection.theta_tilde_max(),
        super::DEFAULT_N,
        super::DEFAULT_DELTA,
    )?;
    // the scenario at its own horizon truncated to tau
    let mut base = base.clone();
    base.horizon = tau;

    let eval = |&(rho, ell): &(f64, f64)| -> Result<CostRow> {
        let gamma = rho * (consts.sigma + ell);
        let sc = base.with_gains(ell, gamma)?;
        let (cost, diverged) = match sim::integrate(&sc) {
            Ok(trace) => {
                let derived = metrics::derive_signals(&trace, &sc)?;
                (metrics::truncated_l2(&trace, &derived, "udot", tau)?, false)
            }
            Err(Error::NonFinite { t, .. }) => {
                warn!("rho={rho}, ell={ell} diverged at t={t}");
                (f64::INFINITY, true)
            }
            Err(e) => return Err(e),
        };
        Ok(CostRow {
            rho,
            ell,
            gamma,
            cost,
            below_ell_star: ell < ell_star,
            diverged,
        })
    };

    let table: Vec<CostRow> = if jobs <= 1 {
        points.iter().map(eval).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        // collect preserves input order, so the reduction is deterministic
        pool.install(|| points.par_iter().map(eval).collect::<Result<_>>())?
    };

    let best = table
        .iter()
        .min_by(|a, b| {
            a.cost
                .total_cmp(&b.cost)
                .then(a.ell.total_cmp(&b.ell))
                .then(a.rho.total_cmp(&b.rho))
        })
        .expect("non-empty table");
    Ok(OptimizeResult {
        rho_opt: best.rho,
        ell_opt: best.ell,
        ell_star,
        tau,
        table,
    })
}
