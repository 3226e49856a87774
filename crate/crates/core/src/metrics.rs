//! Norms and derived signals over traces, and the mechanized check of every
//! applicable bound against a simulated trajectory.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::adaptlaw::{self, Architecture};
use crate::bounds::{self, BoundLedger, EnvelopeInputs, Interval};
use crate::error::{Error, Result};
use crate::sim::{Scenario, Trace};

/// Relative slack on pointwise inequalities, absorbing rounding only.
pub const POINTWISE_SLACK: f64 = 1e-9;

/// Relative tolerance of the differenced Lyapunov inequality.
pub const LYAPUNOV_TOL: f64 = 1e-3;

/// Violations recorded per check; further ones are only counted.
pub const MAX_RECORDED_VIOLATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UdotSource {
    Analytic,
    FiniteDifference,
}

/// Error signals and rates derived from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedSignals {
    /// `x - x_m` on the measured state.
    pub e: Vec<DVector<f64>>,
    /// `x_a - x_m` on the true state.
    pub e_true: Vec<DVector<f64>>,
    /// `x - x_m_orm`.
    pub e_orm: Option<Vec<DVector<f64>>>,
    /// `x_i - x`.
    pub e_i: Option<Vec<DVector<f64>>>,
    /// `x_o - x` on the measured state.
    pub e_o: Option<Vec<DVector<f64>>>,
    /// `x_o - x_a` on the true state.
    pub e_o_true: Option<Vec<DVector<f64>>>,
    pub udot: Vec<f64>,
    pub udot_source: UdotSource,
}

fn diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> Vec<DVector<f64>> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Central differences with second-order one-sided ends.
pub fn finite_difference(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        2 => vec![(u[1] - u[0]) / h; 2],
        _ => (0..n)
            .map(|k| {
                if k == 0 {
                    (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
                } else if k == n - 1 {
                    (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h)
                } else {
                    (u[k + 1] - u[k - 1]) / (2.0 * h)
                }
            })
            .collect(),
    }
}

/// Fills the error signals and `u_dot`. The analytic rate is used for
/// noise-free direct runs with a smooth reference, finite differences
/// otherwise.
pub fn derive_signals(trace: &Trace, scenario: &Scenario) -> Result<DerivedSignals> {
    let (udot, udot_source) = match &trace.udot_analytic {
        Some(ud) if scenario.reference.is_smooth() => (ud.clone(), UdotSource::Analytic),
        _ => (finite_difference(&trace.u, trace.step), UdotSource::FiniteDifference),
    };
    Ok(DerivedSignals {
        e: diff(&trace.x, &trace.x_m),
        e_true: diff(&trace.x_a, &trace.x_m),
        e_orm: trace.x_m_orm.as_ref().map(|orm| diff(&trace.x, orm)),
        e_i: trace.x_i.as_ref().map(|xi| diff(xi, &trace.x)),
        e_o: trace.x_o.as_ref().map(|xo| diff(xo, &trace.x)),
        e_o_true: trace.x_o.as_ref().map(|xo| diff(xo, &trace.x_a)),
        udot,
        udot_source,
    })
}

fn norms(v: &[DVector<f64>]) -> Vec<f64> {
    v.iter().map(|x| x.norm()).collect()
}

impl DerivedSignals {
    /// Per-sample Euclidean norm of a named signal.
    pub fn norms(&self, trace: &Trace, name: &str) -> Result<Vec<f64>> {
        let need = |v: &Option<Vec<DVector<f64>>>| {
            v.as_ref()
                .map(|v| norms(v))
                .ok_or_else(|| Error::UnknownSignal(name.to_string()))
        };
        let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
        Ok(match name {
            "e" | "e_m" => norms(&self.e),
            "e_true" => norms(&self.e_true),
            "e_orm" | "e_o" => self.e_orm.as_ref().map(|v| norms(v)).ok_or(Error::MissingShadow)?,
            "e_i" => need(&self.e_i)?,
            "e_obs" => need(&self.e_o)?,
            "e_obs_true" => need(&self.e_o_true)?,
            "u" => abs(&trace.u),
            "udot" => abs(&self.udot),
            "r" => abs(&trace.r),
            "d" => abs(&trace.d),
            "n" => norms(&trace.n),
            "x" => norms(&trace.x),
            "x_a" => norms(&trace.x_a),
            "x_m" => norms(&trace.x_m),
            "theta" => norms(&trace.theta),
            "theta_hat" => need(&trace.theta_hat)?,
            "theta_dot" => norms(&trace.theta_dot),
            "theta_hat_dot" => need(&trace.theta_hat_dot)?,
            _ => return Err(Error::UnknownSignal(name.to_string())),
        })
    }
}

/// `(int_0^tau s(t)^2 dt)^(1/2)` by the trapezoid rule on a uniform grid
/// starting at zero; a partial last interval is linearly interpolated.
pub fn l2_norm(values: &[f64], step: f64, tau: f64) -> f64 {
    if values.len() < 2 || !(tau > 0.0) {
        return 0.0;
    }
    let span = (values.len() - 1) as f64 * step;
    let tau = tau.min(span);
    let full = ((tau / step) + 1e-9).floor() as usize;
    let full = full.min(values.len() - 1);
    let sq = |k: usize| values[k] * values[k];
    let mut acc = 0.0;
    for k in 0..full {
        acc += 0.5 * step * (sq(k) + sq(k + 1));
    }
    let rest = tau - full as f64 * step;
    if rest > 1e-12 * step && full + 1 < values.len() {
        let lam = rest / step;
        let v_end = values[full] * (1.0 - lam) + values[full + 1] * lam;
        acc += 0.5 * rest * (sq(full) + v_end * v_end);
    }
    acc.sqrt()
}

pub fn truncated_l2(trace: &Trace, derived: &DerivedSignals, signal: &str, tau: f64) -> Result<f64> {
    Ok(l2_norm(&derived.norms(trace, signal)?, trace.step, tau))
}

fn window(trace: &Trace, start: f64, end: f64) -> impl Iterator<Item = usize> + '_ {
    let eps = 1e-9 * trace.step;
    (0..trace.len()).filter(move |&k| trace.t[k] >= start - eps && trace.t[k] < end - eps)
}

/// Largest value of a per-sample series over `[start, end)`.
pub fn sup_over(trace: &Trace, values: &[f64], start: f64, end: f64) -> f64 {
    window(trace, start, end).map(|k| values[k]).fold(0.0, f64::max)
}

/// Root mean square of a per-sample series over `[start, end)`.
pub fn rms_over(trace: &Trace, values: &[f64], start: f64, end: f64) -> f64 {
    let (sum, count) = window(trace, start, end).fold((0.0, 0usize), |(s, c), k| (s + values[k] * values[k], c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub bound: String,
    pub t: f64,
    /// Bound minus observed value; negative.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub applicable: bool,
    pub passed: bool,
    /// Smallest bound-minus-value over the checked samples.
    pub worst_margin: Option<f64>,
    pub violations: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedL2 {
    pub signal: String,
    pub tau: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSup {
    pub signal: String,
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub scenario: String,
    pub architecture: Architecture,
    pub udot_source: UdotSource,
    pub repairs: usize,
    pub l2: BTreeMap<String, f64>,
    pub truncated_l2: Vec<TruncatedL2>,
    pub sup_by_interval: Vec<IntervalSup>,
    pub terminal: BTreeMap<String, f64>,
    pub checks: Vec<CheckResult>,
    pub violations: Vec<Violation>,
}

impl MetricReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOptions {
    /// Error level that starts the last control-rate interval.
    pub epsilon: f64,
    /// Horizons of the reported truncated norms of `u_dot`.
    pub taus: Vec<f64>,
    /// Windows of the reported `sup |u_dot|` values.
    pub regions: Vec<(f64, f64)>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            taus: Vec::new(),
            regions: Vec::new(),
        }
    }
}

struct Checker<'a> {
    checks: Vec<CheckResult>,
    violations: Vec<Violation>,
    trace: &'a Trace,
}

struct Check {
    name: String,
    worst: Option<f64>,
    count: usize,
    note: String,
}

impl Check {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            worst: None,
            count: 0,
            note: String::new(),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

impl<'a> Checker<'a> {
    fn skip(&mut self, name: &str, reason: impl Into<String>) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            applicable: false,
            passed: true,
            worst_margin: None,
            violations: 0,
            note: reason.into(),
        });
    }

    /// Records `value <= bound` at time `t`, with `slack` added to the bound.
    fn test(&mut self, c: &mut Check, t: f64, value: f64, bound: f64, slack: f64) {
        let margin = bound - value;
        c.worst = Some(c.worst.map_or(margin, |w: f64| w.min(margin)));
        if !(margin + slack >= 0.0) {
            if c.count < MAX_RECORDED_VIOLATIONS {
                self.violations.push(Violation {
                    bound: c.name.clone(),
                    t,
                    margin,
                });
            }
            c.count += 1;
        }
    }

    fn finish(&mut self, c: Check) {
        self.checks.push(CheckResult {
            name: c.name,
            applicable: true,
            passed: c.count == 0,
            worst_margin: c.worst,
            violations: c.count,
            note: c.note,
        });
    }

    fn last(&self) -> usize {
        self.trace.len() - 1
    }
}

fn slack(bound: f64) -> f64 {
    POINTWISE_SLACK * (1.0 + bound.abs())
}

/// Evaluates every inequality whose premises the scenario satisfies.
pub fn check_bounds(
    trace: &Trace,
    derived: &DerivedSignals,
    ledger: &BoundLedger,
    scenario: &Scenario,
    opts: &CheckOptions,
) -> Result<MetricReport> {
    if trace.is_empty() {
        return Err(Error::InvalidConfig("empty trace".into()));
    }
    let mut ck = Checker {
        checks: Vec::new(),
        violations: Vec::new(),
        trace,
    };
    let horizon = trace.t[trace.len() - 1];
    let onset = scenario.plant.perturbation_onset();
    let noisy = scenario.has_noise();
    // samples strictly before any parameter change or disturbance
    let premise_end = onset.min(horizon + trace.step);
    let premise_window: Vec<usize> = window(trace, 0.0, premise_end).collect();
    let unperturbed = onset > horizon;
    let tt = ledger.theta_tilde_max;
    let kind = scenario.controller.kind;

    // containment
    {
        let mut c = Check::new("parameter_containment");
        if scenario.controller.use_projection {
            for k in 0..trace.len() {
                ck.test(&mut c, trace.t[k], trace.theta[k].norm(), ledger.theta_max, slack(ledger.theta_max));
                if let Some(th) = &trace.theta_hat {
                    ck.test(&mut c, trace.t[k], th[k].norm(), ledger.theta_max, slack(ledger.theta_max));
                }
            }
            ck.finish(c);
        } else {
            ck.skip("parameter_containment", "projection disabled");
        }
    }

    let theta_tilde = |k: usize| &trace.theta[k] - scenario.plant.theta_star_at(trace.t[k]);
    let theta_bar = |k: usize| {
        trace.theta_hat.as_ref().map(|th| &th[k] - scenario.plant.theta_star_at(trace.t[k]))
    };

    match kind {
        Architecture::DirectMrac => {
            check_direct(&mut ck, derived, ledger, scenario, opts, &premise_window, noisy, unperturbed, &theta_tilde)?;
        }
        Architecture::CmracC => {
            let e_i = derived.e_i.as_ref().expect("identifier trace");
            let gain_ok = (scenario.controller.aux_gain - (ledger.sigma + ledger.ell)).abs() <= 1e-12 * (1.0 + ledger.ell);
            let reason_gain = "identifier gain differs from sigma + ell";
            // Lyapunov decrease with the composite function
            if noisy {
                ck.skip("lyapunov_decrease", "measurement noise present");
            } else if !gain_ok {
                ck.skip("lyapunov_decrease", reason_gain);
            } else {
                let v = |k: usize| {
                    adaptlaw::composite_lyapunov(&derived.e[k], &e_i[k], &theta_tilde(k), &theta_bar(k).expect("theta_hat"), &scenario.controller)
                };
                lyapunov_check(&mut ck, &premise_window, &v, ledger.alpha1, 2.0 * ledger.alpha2);
            }
            if noisy || !gain_ok {
                let why = if noisy { "measurement noise present" } else { reason_gain };
                ck.skip("pointwise_e_m", why);
                ck.skip("l2_e_m", why);
            } else {
                let em0 = derived.e[0].norm();
                let ei0 = e_i[0].norm();
                let mut c = Check::new("pointwise_e_m");
                let mut c_i = Check::new("pointwise_e_i");
                for &k in &premise_window {
                    let (b, _) = bounds::composite_e_bounds(ledger, em0, ei0, trace.t[k]);
                    ck.test(&mut c, trace.t[k], derived.e[k].norm_squared(), b, slack(b));
                    ck.test(&mut c_i, trace.t[k], e_i[k].norm_squared(), b, slack(b));
                }
                ck.finish(c);
                ck.finish(c_i.note("identifier error against the same envelope"));
                let (_, l2b) = bounds::composite_e_bounds(ledger, em0, ei0, 0.0);
                let mut c = Check::new("l2_e_m");
                let end = premise_window.last().copied().unwrap_or(0);
                let val = l2_norm(&norms(&derived.e[..=end]), trace.step, trace.t[end]).powi(2);
                ck.test(&mut c, trace.t[end], val, l2b, slack(l2b));
                ck.finish(c);
            }
            if unperturbed && !noisy {
                let k = ck.last();
                let mut c = Check::new("composite_set");
                ck.test(&mut c, trace.t[k], derived.e[k].norm_squared(), ledger.beta4 * tt * tt, 0.0);
                ck.test(&mut c, trace.t[k], e_i[k].norm_squared(), ledger.beta5 * tt * tt, 0.0);
                ck.finish(c.note("terminal e_m and e_i"));
            } else {
                ck.skip("composite_set", "perturbation or noise present");
            }
            check_udot(&mut ck, derived, ledger, scenario, opts, &premise_window, noisy)?;
        }
        Architecture::CmracCo => {
            let e_o = derived.e_o.as_ref().expect("observer trace");
            let e_o_true = derived.e_o_true.as_ref().expect("observer trace");
            let delta_ok = ledger.delta_obs < 1.0;
            let gain_ok = (scenario.controller.aux_gain - ledger.ell).abs() <= 1e-12 * (1.0 + ledger.ell);
            let gain_note = if gain_ok {
                String::new()
            } else {
                format!(
                    "observer gain {} differs from ell = {}; evaluated on the configured loop",
                    scenario.controller.aux_gain, ledger.ell
                )
            };
            if !delta_ok {
                for name in ["lyapunov_decrease", "observer_set", "noisy_observer_set"] {
                    ck.skip(name, format!("Delta = {} >= 1", ledger.delta_obs));
                }
            } else {
                if noisy {
                    ck.skip("lyapunov_decrease", "measurement noise present");
                } else if !gain_ok {
                    ck.skip("lyapunov_decrease", gain_note.clone());
                } else {
                    let v = |k: usize| {
                        adaptlaw::composite_lyapunov(&derived.e[k], &e_o[k], &theta_tilde(k), &theta_bar(k).expect("theta_hat"), &scenario.controller)
                    };
                    lyapunov_check(&mut ck, &premise_window, &v, ledger.alpha5.expect("Delta < 1"), ledger.alpha6.expect("Delta < 1"));
                }
                if !noisy && unperturbed {
                    let k = ck.last();
                    let b = ledger.beta6 * tt * tt;
                    let mut c = Check::new("observer_set");
                    ck.test(&mut c, trace.t[k], derived.e[k].norm_squared(), b, 0.0);
                    ck.test(&mut c, trace.t[k], e_o[k].norm_squared(), b, 0.0);
                    ck.finish(c.note(gain_note.clone()));
                } else {
                    ck.skip("observer_set", "perturbation or noise present");
                }
                if noisy {
                    let k = ck.last();
                    let b = ledger.beta6 * tt * tt + ledger.beta7.expect("Delta < 1") * ledger.n_bound.powi(2);
                    let mut c = Check::new("noisy_observer_set");
                    ck.test(&mut c, trace.t[k], derived.e_true[k].norm_squared(), b, 0.0);
                    ck.test(&mut c, trace.t[k], e_o_true[k].norm_squared(), b, 0.0);
                    let note = if gain_note.is_empty() {
                        "terminal true-state errors".to_string()
                    } else {
                        format!("terminal true-state errors; {gain_note}")
                    };
                    ck.finish(c.note(note));
                } else {
                    ck.skip("noisy_observer_set", "no measurement noise");
                }
            }
        }
    }

    // summary metrics
    let mut l2 = BTreeMap::new();
    let mut terminal = BTreeMap::new();
    let last = trace.len() - 1;
    for name in ["e", "e_orm", "e_i", "e_obs", "udot", "theta_dot", "u"] {
        if let Ok(v) = derived.norms(trace, name) {
            l2.insert(name.to_string(), l2_norm(&v, trace.step, horizon).powi(2));
            terminal.insert(name.to_string(), v[last]);
        }
    }
    terminal.insert("theta".into(), trace.theta[last].norm());
    let udot_abs = derived.norms(trace, "udot")?;
    let truncated = opts
        .taus
        .iter()
        .map(|&tau| TruncatedL2 {
            signal: "udot".into(),
            tau,
            value: l2_norm(&udot_abs, trace.step, tau),
        })
        .collect();
    let sup_by_interval = opts
        .regions
        .iter()
        .map(|&(a, b)| IntervalSup {
            signal: "udot".into(),
            start: a,
            end: b,
            value: sup_over(trace, &udot_abs, a, b),
        })
        .collect();

    Ok(MetricReport {
        scenario: scenario.name.clone(),
        architecture: kind,
        udot_source: derived.udot_source,
        repairs: trace.repairs,
        l2,
        truncated_l2: truncated,
        sup_by_interval,
        terminal,
        checks: ck.checks,
        violations: ck.violations,
    })
}

/// `(V_{k+1} - V_k)/h <= -alpha min(V_k, V_{k+1}) + beta + tol (1 + |V_k|)`
/// over consecutive samples of the window.
fn lyapunov_check(ck: &mut Checker<'_>, window: &[usize], v: &dyn Fn(usize) -> f64, alpha: f64, beta: f64) {
    let trace = ck.trace;
    let mut c = Check::new("lyapunov_decrease");
    let mut prev: Option<(usize, f64)> = None;
    for &k in window {
        let vk = v(k);
        if let Some((j, vj)) = prev {
            if k == j + 1 {
                let rate = (vk - vj) / trace.step;
                let bound = -alpha * vj.min(vk) + beta;
                ck.test(&mut c, trace.t[k], rate, bound, LYAPUNOV_TOL * (1.0 + vj.abs()));
            }
        }
        prev = Some((k, vk));
    }
    ck.finish(c);
}

#[allow(clippy::too_many_arguments)]
fn check_direct(
    ck: &mut Checker<'_>,
    derived: &DerivedSignals,
    ledger: &BoundLedger,
    scenario: &Scenario,
    opts: &CheckOptions,
    premise_window: &[usize],
    noisy: bool,
    unperturbed: bool,
    theta_tilde: &dyn Fn(usize) -> DVector<f64>,
) -> Result<()> {
    let trace = ck.trace;
    let tt = ledger.theta_tilde_max;
    if noisy {
        for name in ["lyapunov_decrease", "pointwise_e", "l2_e", "orm_distance"] {
            ck.skip(name, "measurement noise present");
        }
    } else {
        let p = &scenario.controller.p_m;
        let v = |k: usize| adaptlaw::direct_lyapunov(&derived.e[k], &theta_tilde(k), p, scenario.gamma());
        lyapunov_check(ck, premise_window, &v, ledger.alpha1, ledger.alpha2);

        let e0 = derived.e[0].norm();
        let mut c = Check::new("pointwise_e");
        for &k in premise_window {
            let (b, _) = bounds::transient_e_bounds(ledger, e0, trace.t[k]);
            ck.test(&mut c, trace.t[k], derived.e[k].norm_squared(), b, slack(b));
        }
        ck.finish(c);

        let (_, l2b) = bounds::transient_e_bounds(ledger, e0, 0.0);
        let mut c = Check::new("l2_e");
        let end = premise_window.last().copied().unwrap_or(0);
        let val = l2_norm(&norms(&derived.e[..=end]), trace.step, trace.t[end]).powi(2);
        ck.test(&mut c, trace.t[end], val, l2b, slack(l2b));
        ck.finish(c);

        match &derived.e_orm {
            Some(e_orm) => {
                let mut c = Check::new("orm_distance");
                for &k in premise_window {
                    let b = bounds::eo_bound(ledger, derived.e[k].norm());
                    ck.test(&mut c, trace.t[k], e_orm[k].norm(), b, slack(b));
                }
                ck.finish(c);
            }
            None => ck.skip("orm_distance", "no open-loop model shadow"),
        }
    }

    let k = ck.last();
    if unperturbed && !noisy {
        let mut c = Check::new("terminal_set");
        ck.test(&mut c, trace.t[k], derived.e[k].norm_squared(), ledger.beta1 * tt * tt, 0.0);
        ck.finish(c);
        ck.skip("robust_set", "no parameter variation or disturbance");
    } else if !noisy {
        ck.skip("terminal_set", "parameter variation or disturbance present");
        let b = ledger.beta1 * tt * tt + ledger.beta2 * ledger.theta_star_rate * tt + ledger.beta3 * ledger.d_bound.powi(2);
        let mut c = Check::new("robust_set");
        ck.test(&mut c, trace.t[k], derived.e[k].norm_squared(), b, 0.0);
        ck.finish(c);
    } else {
        ck.skip("terminal_set", "measurement noise present");
        ck.skip("robust_set", "measurement noise present");
    }
    check_udot(ck, derived, ledger, scenario, opts, premise_window, noisy)
}

fn check_udot(
    ck: &mut Checker<'_>,
    derived: &DerivedSignals,
    ledger: &BoundLedger,
    scenario: &Scenario,
    opts: &CheckOptions,
    premise_window: &[usize],
    noisy: bool,
) -> Result<()> {
    let trace = ck.trace;
    let names = ["udot_T1", "udot_T2", "udot_T3"];
    let reason = if noisy {
        Some("measurement noise present".to_string())
    } else if ledger.ell < ledger.ell_star {
        Some(format!("ell = {} below ell* = {}", ledger.ell, ledger.ell_star))
    } else if ledger.n_constants < 3.0 {
        Some("N < 3".to_string())
    } else if scenario.x_m0().norm() != 0.0 {
        Some("x_m(0) is nonzero".to_string())
    } else if !scenario.reference.rate_bound().is_finite() {
        Some("reference rate is unbounded".to_string())
    } else {
        None
    };
    if let Some(r) = reason {
        for n in names {
            ck.skip(n, r.clone());
        }
        return Ok(());
    }
    let end = premise_window.last().map_or(0.0, |&k| trace.t[k] + trace.step);
    let e_norm = norms(&derived.e);
    // first time after which ||e|| stays below epsilon inside the window
    let mut settle = end;
    for &k in premise_window.iter().rev() {
        if e_norm[k] >= opts.epsilon {
            break;
        }
        settle = trace.t[k];
    }
    let t_a = ledger.n_constants * ledger.tau1;
    let t_b = (ledger.n_constants * ledger.tau2).max(settle);
    let em0 = derived.e[0].norm();
    let ei0 = derived.e_i.as_ref().map_or(0.0, |v| v[0].norm());
    let inp = EnvelopeInputs {
        e0: em0,
        em0,
        ei0,
        r0: scenario.reference.bound(),
        r1: scenario.reference.rate_bound(),
        epsilon: opts.epsilon,
        architecture: scenario.controller.kind,
    };
    let udot = derived.norms(trace, "udot")?;
    for (name, interval, a, b) in [
        (names[0], Interval::T1, 0.0, t_a.min(end)),
        (names[1], Interval::T2, t_a, t_b.min(end)),
        (names[2], Interval::T3, t_b, end),
    ] {
        if !(b > a) {
            ck.skip(name, "interval empty inside the premise window");
            continue;
        }
        match bounds::udot_envelope(ledger, interval, &inp) {
            Ok(env) => {
                let mut c = Check::new(name).note(format!("[{a:.4}, {b:.4}), {:?}", env.confidence));
                for k in window(trace, a, b) {
                    ck.test(&mut c, trace.t[k], udot[k], env.value, slack(env.value));
                }
                ck.finish(c);
            }
            Err(e) => ck.skip(name, e.to_string()),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn l2_of_constant_and_exponential() {
        let h = 1e-3;
        let ones = vec![1.0; 5001];
        assert_abs_diff_eq!(l2_norm(&ones, h, 4.0), 2.0, epsilon = 1e-12);
        assert_eq!(l2_norm(&ones, h, 0.0), 0.0);
        let ex: Vec<f64> = (0..30001).map(|k| (-(k as f64) * h).exp()).collect();
        assert_abs_diff_eq!(l2_norm(&ex, h, 30.0), 0.5_f64.sqrt(), epsilon = 1e-4);
    }

    #[test]
    fn l2_partial_interval() {
        let ones = vec![1.0; 11];
        assert_abs_diff_eq!(l2_norm(&ones, 0.1, 0.55).powi(2), 0.55, epsilon = 1e-12);
        let a = l2_norm(&ones, 0.1, 0.3);
        let b = l2_norm(&ones, 0.1, 0.35);
        assert!(b >= a);
    }

    #[test]
    fn finite_difference_of_sine() {
        let h = 1e-3;
        let u: Vec<f64> = (0..10001).map(|k| (k as f64 * h).sin()).collect();
        let d = finite_difference(&u, h);
        let err = d
            .iter()
            .enumerate()
            .map(|(k, v)| (v - (k as f64 * h).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-5, "max error {err}");
    }
}
