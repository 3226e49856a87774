//! Analytical constants and bounds for the adaptive closed loop, the
//! time-scale root finders, and the `(rho, ell)` grid optimizer.

mod optimize;

pub use optimize::{optimize_rho_ell, optimize_points, CostRow, OptimizeResult};

use serde::Serialize;

use crate::adaptlaw::Architecture;
use crate::error::{Error, Result};
use crate::matan::{self, SpectralConstants};
use crate::proj::ProjectionConfig;
use crate::sim::Scenario;

/// Absolute tolerance of the `ell` bisections.
pub const ELL_TOL: f64 = 1e-6;

/// Default number of error time constants spanned by the first interval.
pub const DEFAULT_N: f64 = 3.0;

/// Default time-scale separation margin.
pub const DEFAULT_DELTA: f64 = 1.0;

/// Scenario quantities the ledger depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerInputs {
    pub consts: SpectralConstants,
    pub ell: f64,
    pub gamma: f64,
    pub projection: ProjectionConfig,
    pub b_norm: f64,
    /// `||e(0)||`, or `||e_m(0)||` for the composite laws.
    pub e0: f64,
    /// `||e_i(0)||` or `||e_o(0)||`.
    pub e_aux0: f64,
    pub theta_tilde0: f64,
    pub theta_bar0: f64,
    /// Bound on `||d(t)||`.
    pub d_bound: f64,
    /// Bound on `||d theta*/dt||`.
    pub theta_star_rate: f64,
    /// Bound on `||n(t)||`.
    pub n_bound: f64,
    pub n_constants: f64,
    pub delta: f64,
}

impl LedgerInputs {
    /// Inputs for a scalar or vector loop with everything but the gains zeroed.
    pub fn new(consts: SpectralConstants, ell: f64, gamma: f64, projection: ProjectionConfig, b_norm: f64) -> Self {
        Self {
            consts,
            ell,
            gamma,
            projection,
            b_norm,
            e0: 0.0,
            e_aux0: 0.0,
            theta_tilde0: 0.0,
            theta_bar0: 0.0,
            d_bound: 0.0,
            theta_star_rate: 0.0,
            n_bound: 0.0,
            n_constants: DEFAULT_N,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn from_scenario(sc: &Scenario) -> Result<Self> {
        let consts = matan::spectral_constants(&sc.reference_model.a_m)?;
        let theta_star0 = sc.plant.theta_star_at(0.0);
        let x0 = &sc.initial.x;
        let mut inputs = Self::new(
            consts,
            sc.ell(),
            sc.gamma(),
            sc.controller.projection,
            sc.plant.b.norm(),
        );
        inputs.e0 = (x0 - sc.x_m0()).norm();
        inputs.theta_tilde0 = (sc.theta0() - &theta_star0).norm();
        if sc.controller.kind.has_auxiliary() {
            inputs.e_aux0 = (sc.aux0() - x0).norm();
            inputs.theta_bar0 = (sc.theta_hat0() - &theta_star0).norm();
        }
        inputs.d_bound = sc.plant.disturbance_bound();
        inputs.theta_star_rate = sc.plant.theta_star_rate_bound();
        inputs.n_bound = sc.plant.noise_bound();
        Ok(inputs)
    }
}

/// Every constant of the analysis for one parameterization. Entries that do
/// not apply are `None` and explained in `warnings`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundLedger {
    pub sigma: f64,
    pub s: f64,
    pub a: f64,
    pub m: f64,
    pub ell: f64,
    pub gamma: f64,
    pub eta: f64,
    pub b_norm: f64,
    pub rho: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub nu: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub kappa7: f64,
    pub kappa8: f64,
    /// Initial-condition constant of the composite `L2` bound.
    pub nu_composite: f64,
    #[serde(rename = "Delta")]
    pub delta_obs: f64,
    pub alpha5: Option<f64>,
    pub alpha6: Option<f64>,
    pub beta6: f64,
    pub alpha7: Option<f64>,
    pub alpha8: Option<f64>,
    pub beta7: Option<f64>,
    pub tau1: f64,
    pub tau2: f64,
    #[serde(rename = "aTheta")]
    pub a_theta: f64,
    pub delta1: f64,
    pub m1: Option<f64>,
    #[serde(rename = "thetaMax")]
    pub theta_max: f64,
    #[serde(rename = "thetaTildeMax")]
    pub theta_tilde_max: f64,
    #[serde(rename = "N")]
    pub n_constants: f64,
    pub delta: f64,
    pub ell_star: f64,
    pub ell_doubleprime: f64,
    pub d_bound: f64,
    pub theta_star_rate: f64,
    pub n_bound: f64,
    pub warnings: Vec<String>,
}

fn validate(inputs: &LedgerInputs) -> Result<()> {
    inputs.projection.validate()?;
    if !(inputs.gamma > 0.0) || !(inputs.ell >= 0.0) || !(inputs.b_norm > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ledger needs gamma > 0, ell >= 0, ||b|| > 0 (gamma={}, ell={}, ||b||={})",
            inputs.gamma, inputs.ell, inputs.b_norm
        )));
    }
    if !(inputs.n_constants > 0.0) || !(inputs.delta > 0.0 && inputs.delta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need N > 0 and 0 < delta <= 1 (N={}, delta={})",
            inputs.n_constants, inputs.delta
        )));
    }
    Ok(())
}

/// Direct-law and composite-law constants; the observer-feedback entries are
/// filled by [`cmrac_ledgers`].
pub fn direct_ledger(inputs: &LedgerInputs) -> Result<BoundLedger> {
    validate(inputs)?;
    let c = &inputs.consts;
    let (sigma, s, m, ell, gamma) = (c.sigma, c.s, c.m, inputs.ell, inputs.gamma);
    let m2 = m * m;
    let pc = &inputs.projection;
    let tt = pc.theta_tilde_max();
    let rho = gamma / (sigma + ell);
    let alpha1 = (sigma + 2.0 * ell) / m2;
    let alpha2 = alpha1 * tt * tt / gamma;
    let p_ratio = m2 / (sigma + 2.0 * ell);
    let (tau1, tau2, a_theta, delta1) = timescale(c, ell, inputs.b_norm, tt, inputs.n_constants)?;
    let ell_star = find_ell_star(c, inputs.b_norm, tt, inputs.n_constants, inputs.delta)?;

    let mut warnings = Vec::new();
    let m1 = match m1(c, ell) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    if ell < ell_star {
        warnings.push(
            Error::TimescaleViolation { ell, ell_star }.to_string()
                + "; control-rate interval bounds do not apply",
        );
    }

    Ok(BoundLedger {
        sigma,
        s,
        a: c.a,
        m,
        ell,
        gamma,
        eta: pc.eta,
        b_norm: inputs.b_norm,
        rho,
        alpha1,
        alpha2,
        beta1: 2.0 * (s + ell) / gamma,
        kappa1: 2.0 * s * m2 / sigma,
        kappa2: 2.0 * s / sigma,
        nu: m * inputs.e0.powi(2) + inputs.theta_tilde0.powi(2) / rho,
        alpha3: alpha1 / 2.0,
        alpha4: (sigma + 2.0 * ell) * tt * tt / (2.0 * m2 * gamma)
            + 2.0 / gamma * inputs.theta_star_rate * tt
            + 2.0 * p_ratio * p_ratio * inputs.d_bound.powi(2),
        beta2: 8.0 * s * m2 / (sigma * gamma),
        beta3: 4.0 * s * m2 * m2 * m2 / (sigma * (sigma + ell).powi(2)),
        beta4: 4.0 * (s + ell) / gamma,
        beta5: 4.0 * (sigma + ell) / gamma,
        // composite Lyapunov function: e_m weight <= m^2/(sigma+2 ell), identifier
        // weight 1/(2(sigma+ell)), combined parameter terms <= 2 tt^2/gamma
        kappa7: 2.0 * s * m2 / sigma,
        kappa8: 4.0 * s / sigma,
        nu_composite: m2 * inputs.e0.powi(2)
            + inputs.e_aux0.powi(2)
            + (inputs.theta_tilde0.powi(2) + inputs.theta_bar0.powi(2)) / rho,
        delta_obs: observer_delta(c, ell, inputs.b_norm, pc.vartheta),
        alpha5: None,
        alpha6: None,
        beta6: 4.0 * (s + ell) / gamma,
        alpha7: None,
        alpha8: None,
        beta7: None,
        tau1,
        tau2,
        a_theta,
        delta1,
        m1,
        theta_max: pc.theta_max(),
        theta_tilde_max: tt,
        n_constants: inputs.n_constants,
        delta: inputs.delta,
        ell_star,
        ell_doubleprime: ell_doubleprime(c, inputs.b_norm, pc.vartheta),
        d_bound: inputs.d_bound,
        theta_star_rate: inputs.theta_star_rate,
        n_bound: inputs.n_bound,
        warnings,
    })
}

/// `Delta(ell) = 4 m^2 ||b|| theta*_max / (sigma + 2 ell)`.
pub fn observer_delta(consts: &SpectralConstants, ell: f64, b_norm: f64, theta_star_max: f64) -> f64 {
    4.0 * consts.m * consts.m * b_norm * theta_star_max / (consts.sigma + 2.0 * ell)
}

/// Full ledger including the observer-feedback entries. Observer-feedback entries stay `None` when `Delta >= 1`.
pub fn cmrac_ledgers(inputs: &LedgerInputs) -> Result<BoundLedger> {
    let mut l = direct_ledger(inputs)?;
    let (sigma, s, m, ell, gamma) = (l.sigma, l.s, l.m, l.ell, l.gamma);
    let m2 = m * m;
    let tt = l.theta_tilde_max;
    let delta = l.delta_obs;
    if delta < 1.0 {
        let one = 1.0 - delta;
        let alpha5 = one * (sigma + 2.0 * ell) / m2;
        let p_ratio = m2 / (sigma + 2.0 * ell);
        l.alpha5 = Some(alpha5);
        l.alpha6 = Some(2.0 * one * (sigma + 2.0 * ell) * tt * tt / (gamma * m2));
        l.alpha7 = Some(alpha5 / 2.0);
        l.alpha8 = Some(
            one * (sigma + 2.0 * ell) * tt * tt / (gamma * m2)
                + 16.0 / (one * one) * p_ratio * p_ratio * inputs.n_bound.powi(2),
        );
        l.beta7 = Some(64.0 * m2 * s / (sigma * one.powi(3)));
    } else {
        l.warnings.push(Error::DeltaTooLarge { delta }.to_string());
    }
    Ok(l)
}

/// Ledger for a scenario; observer-feedback entries only for that
/// architecture.
pub fn scenario_ledger(sc: &Scenario) -> Result<BoundLedger> {
    let inputs = LedgerInputs::from_scenario(sc)?;
    match sc.controller.kind {
        Architecture::CmracCo => cmrac_ledgers(&inputs),
        _ => direct_ledger(&inputs),
    }
}

/// Pointwise bound on `||e(t)||^2` and the bound on `int_0^inf ||e||^2`.
pub fn transient_e_bounds(ledger: &BoundLedger, e0: f64, t: f64) -> (f64, f64) {
    let pointwise = ledger.kappa1 * e0 * e0 * (-ledger.alpha1 * t).exp()
        + ledger.kappa2 / ledger.rho * ledger.theta_tilde_max.powi(2);
    let l2sq = ledger.nu / (ledger.sigma + ledger.ell);
    (pointwise, l2sq)
}

/// Composite-law counterparts: pointwise bound on `||e_m(t)||^2` and the
/// bound on `int_0^inf ||e_m||^2`.
pub fn composite_e_bounds(ledger: &BoundLedger, em0: f64, eaux0: f64, t: f64) -> (f64, f64) {
    let pointwise = ledger.kappa7 * (em0 * em0 + eaux0 * eaux0) * (-ledger.alpha1 * t).exp()
        + ledger.kappa8 / ledger.rho * ledger.theta_tilde_max.powi(2);
    (pointwise, ledger.nu_composite / (ledger.sigma + ledger.ell))
}

/// Bound on the distance to the open-loop reference model,
/// `||e(t)|| + sqrt(ell/sigma) m sqrt(nu)`.
pub fn eo_bound(ledger: &BoundLedger, e_norm: f64) -> f64 {
    e_norm + (ledger.ell / ledger.sigma).sqrt() * ledger.m * ledger.nu.sqrt()
}

/// `(tau1, tau2, a_theta, delta1)`.
pub fn timescale(
    consts: &SpectralConstants,
    ell: f64,
    b_norm: f64,
    theta_tilde_max: f64,
    n_constants: f64,
) -> Result<(f64, f64, f64, f64)> {
    if !(n_constants > 0.0) {
        return Err(Error::InvalidConfig(format!("N must be positive, got {n_constants}")));
    }
    let tau1 = 2.0 * consts.m * consts.m / (consts.sigma + 2.0 * ell);
    let tau2 = 2.0 / consts.sigma;
    let a_theta = consts.a + b_norm * theta_tilde_max;
    let delta1 = (a_theta * n_constants * tau1).exp_m1();
    Ok((tau1, tau2, a_theta, delta1))
}

/// Smallest `ell` with `delta1(ell, N) < delta` and `tau1(ell) <= tau2`.
pub fn find_ell_star(
    consts: &SpectralConstants,
    b_norm: f64,
    theta_tilde_max: f64,
    n_constants: f64,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1], got {delta}")));
    }
    let ok = |ell: f64| -> Result<bool> {
        let (tau1, tau2, _, delta1) = timescale(consts, ell, b_norm, theta_tilde_max, n_constants)?;
        Ok(delta1 < delta && tau1 <= tau2)
    };
    if ok(0.0)? {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while !ok(hi)? {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    // both conditions are monotone in ell, so [lo, hi] brackets the switch
    while hi - lo > ELL_TOL {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Gain at which `Delta(ell) = 1`; above it the observer-feedback
/// guarantees hold.
pub fn ell_doubleprime(consts: &SpectralConstants, b_norm: f64, theta_star_max: f64) -> f64 {
    ((4.0 * consts.m * consts.m * b_norm * theta_star_max - consts.sigma) / 2.0).max(0.0)
}

/// `m1 = 2 ell m^4 sqrt(2 s / sigma) / (sigma + 2 ell - sigma m^2)`.
pub fn m1(consts: &SpectralConstants, ell: f64) -> Result<f64> {
    let m2 = consts.m * consts.m;
    let denominator = consts.sigma + 2.0 * ell - consts.sigma * m2;
    if !(denominator > 0.0) {
        return Err(Error::SingularM1 { denominator });
    }
    Ok(2.0 * ell * m2 * m2 * (2.0 * consts.s / consts.sigma).sqrt() / denominator)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Interval {
    T1,
    T2,
    T3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    /// Every ingredient is an explicit closed form.
    Explicit,
    /// Contains an ingredient assembled here in place of an unspecified constant.
    Reconstructed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeInputs {
    /// `||e(0)||`; equals `||x(0)||` when `x_m(0) = 0`.
    pub e0: f64,
    pub em0: f64,
    pub ei0: f64,
    pub r0: f64,
    pub r1: f64,
    /// Error level that starts the third interval.
    pub epsilon: f64,
    pub architecture: Architecture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub value: f64,
    pub g_x: f64,
    pub g_e: f64,
    pub confidence: Confidence,
}

/// Largest value of `exp(-t/tau2) - exp(-t/tau1)` over `t >= t0`.
fn sup_exp_difference(tau1: f64, tau2: f64, t0: f64) -> f64 {
    let f = |t: f64| (-t / tau2).exp() - (-t / tau1).exp();
    if tau2 <= tau1 {
        return f(t0).max(0.0);
    }
    let t_peak = tau1 * tau2 / (tau2 - tau1) * (tau2 / tau1).ln();
    f(t_peak.max(t0)).max(0.0)
}

/// Bound on `sup ||x_m(t)||` over `t >= t0` for `x_m(0) = 0`.
fn x_m_bound(ledger: &BoundLedger, m1: f64, e0: f64, r0: f64, t0: f64) -> f64 {
    let (m, s, sigma, ell) = (ledger.m, ledger.s, ledger.sigma, ledger.ell);
    m1 * e0 * sup_exp_difference(ledger.tau1, ledger.tau2, t0)
        + 2.0 * ell * m / sigma * (2.0 * (s + ell) / ledger.gamma).sqrt() * ledger.theta_tilde_max
        + 2.0 * ledger.b_norm * m / sigma * r0
}

/// Envelope on `sup |u_dot|` over one interval of the time-scale split.
///
/// The first interval uses only explicit ingredients. The later intervals
/// bound `||x||` by `||e|| + ||x_m||` with the reference-model estimate, which
/// stands in for constants that have no closed form.
pub fn udot_envelope(ledger: &BoundLedger, interval: Interval, inp: &EnvelopeInputs) -> Result<Envelope> {
    if ledger.ell < ledger.ell_star {
        return Err(Error::TimescaleViolation {
            ell: ledger.ell,
            ell_star: ledger.ell_star,
        });
    }
    if ledger.n_constants < 3.0 {
        return Err(Error::InvalidConfig(format!(
            "control-rate envelopes need N >= 3, got {}",
            ledger.n_constants
        )));
    }
    let b_norm = ledger.b_norm;
    let tt = ledger.theta_tilde_max;
    let composite = inp.architecture == Architecture::CmracC;
    let (k_a, k_b, e_init) = if composite {
        (ledger.kappa7, ledger.kappa8, inp.em0 + inp.ei0)
    } else {
        (ledger.kappa1, ledger.kappa2, inp.e0)
    };
    let steady = (k_b / ledger.rho).sqrt() * tt;
    let eps1 = (-ledger.n_constants).exp();
    let x0 = if composite { inp.em0 } else { inp.e0 };

    let (g_x, g_e, confidence) = match interval {
        Interval::T1 => {
            let g_x = (1.0 + ledger.delta1) * x0 + ledger.delta1 * b_norm / ledger.a_theta * inp.r0;
            (g_x, k_a.sqrt() * e_init + steady, Confidence::Explicit)
        }
        Interval::T2 => {
            let m1 = m1_of(ledger)?;
            let g_e = k_a.sqrt() * e_init * eps1 + steady;
            let t0 = ledger.n_constants * ledger.tau1;
            (g_e + x_m_bound(ledger, m1, x0, inp.r0, t0), g_e, Confidence::Reconstructed)
        }
        Interval::T3 => {
            let m1 = m1_of(ledger)?;
            let t0 = ledger.n_constants * ledger.tau2;
            (
                inp.epsilon + x_m_bound(ledger, m1, x0, inp.r0, t0),
                inp.epsilon,
                Confidence::Reconstructed,
            )
        }
    };
    let gain = ledger.m * ledger.m * ledger.gamma / (ledger.sigma + 2.0 * ledger.ell) * b_norm;
    let coupling = if composite {
        8.0 * ledger.eta * ledger.theta_max.powi(2) * g_x
    } else {
        0.0
    };
    let value = gain * g_e * g_x * g_x
        + coupling
        + ledger.theta_max * (ledger.a_theta * g_x + inp.r0)
        + inp.r1;
    let confidence = if composite {
        Confidence::Reconstructed
    } else {
        confidence
    };
    Ok(Envelope {
        value,
        g_x,
        g_e,
        confidence,
    })
}

fn m1_of(ledger: &BoundLedger) -> Result<f64> {
    ledger.m1.ok_or_else(|| {
        let m2 = ledger.m * ledger.m;
        Error::SingularM1 {
            denominator: ledger.sigma + 2.0 * ledger.ell - ledger.sigma * m2,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar() -> SpectralConstants {
        SpectralConstants::from_parts(1.0, 1.0, 1.0, 1).unwrap()
    }

    fn inputs(ell: f64, gamma: f64) -> LedgerInputs {
        let pc = ProjectionConfig::new(2.0, 1.0, gamma, 0.0).unwrap();
        LedgerInputs::new(scalar(), ell, gamma, pc, 1.0)
    }

    /// `ell*` from the closed-form inverse of `delta1(ell, N) = delta` and
    /// `tau1(ell) = tau2`.
    fn ell_star_closed_form(c: &SpectralConstants, a_theta: f64, n: f64, delta: f64) -> f64 {
        let m2 = c.m * c.m;
        let from_delta = (a_theta * n * 2.0 * m2 / (1.0 + delta).ln() - c.sigma) / 2.0;
        let from_tau = (c.sigma * m2 - c.sigma) / 2.0;
        from_delta.max(from_tau).max(0.0)
    }

    #[test]
    fn closed_loop_constants() {
        let l = direct_ledger(&inputs(10.0, 1100.0)).unwrap();
        assert_abs_diff_eq!(l.rho, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.alpha1, 21.0 / 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(l.alpha1, 9.3333, epsilon = 1e-4);
        assert_abs_diff_eq!(l.beta1, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(l.kappa1, 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(l.kappa2, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.beta2 * 1100.0, 18.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.alpha3, l.alpha1 / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn open_loop_rate_is_gamma_over_sigma() {
        let l = direct_ledger(&inputs(0.0, 37.0)).unwrap();
        assert_abs_diff_eq!(l.rho, 37.0, epsilon = 1e-12);
        assert!(l.m1.is_none());
        assert!(l.warnings.iter().any(|w| w.contains("m1")));
    }

    #[test]
    fn transient_bounds() {
        let mut inp = inputs(10.0, 1100.0);
        inp.e0 = 0.5;
        inp.theta_tilde0 = 2.0;
        let l = direct_ledger(&inp).unwrap();
        let (p0, l2sq) = transient_e_bounds(&l, 0.5, 0.0);
        assert_abs_diff_eq!(l2sq, (1.5 * 0.25 + 4.0 / 100.0) / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l2sq, 0.03773, epsilon = 1e-5);
        assert!(p0 >= 0.25);
        let (p_inf, _) = transient_e_bounds(&l, 0.5, 1e3);
        assert_abs_diff_eq!(p_inf, 2.0 / 100.0 * 25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.nu, 0.415, epsilon = 1e-12);
        let term = eo_bound(&l, 0.0);
        assert_abs_diff_eq!(term, 10f64.sqrt() * 1.5 * 0.415f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(term, 3.056, epsilon = 1e-3);
        assert_abs_diff_eq!(eo_bound(&l, 0.7) - term, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn eo_bound_collapses_without_feedback() {
        let mut inp = inputs(0.0, 10.0);
        inp.e0 = 1.0;
        let l = direct_ledger(&inp).unwrap();
        assert_eq!(eo_bound(&l, 0.3), 0.3);
    }

    #[test]
    fn timescales() {
        let (tau1, tau2, a_theta, delta1) = timescale(&scalar(), 10.0, 1.0, 5.0, 3.0).unwrap();
        assert_abs_diff_eq!(tau1, 4.5 / 21.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tau1, 0.2143, epsilon = 1e-4);
        assert_eq!(tau2, 2.0);
        assert_eq!(a_theta, 6.0);
        assert_abs_diff_eq!(delta1, (6.0 * 3.0 * tau1).exp() - 1.0, epsilon = 1e-12);
        let (t_big, _, _, d_big) = timescale(&scalar(), 1e9, 1.0, 5.0, 3.0).unwrap();
        assert!(t_big < 1e-8 && d_big < 1e-6);
    }

    #[test]
    fn ell_star_matches_closed_form() {
        let c = scalar();
        for (n, expect) in [(1.0, 18.98), (3.0, 57.94)] {
            let found = find_ell_star(&c, 1.0, 5.0, n, 1.0).unwrap();
            let oracle = ell_star_closed_form(&c, 6.0, n, 1.0);
            assert!((found - oracle).abs() <= 2.0 * ELL_TOL, "N={n}: {found} vs {oracle}");
            assert_abs_diff_eq!(found, expect, epsilon = 0.015);
            let (tau1, tau2, _, _) = timescale(&c, found, 1.0, 5.0, n).unwrap();
            assert!(tau1 <= tau2);
        }
        for delta in [0.1, 0.5] {
            let found = find_ell_star(&c, 1.0, 5.0, 2.0, delta).unwrap();
            let oracle = ell_star_closed_form(&c, 6.0, 2.0, delta);
            assert!((found - oracle).abs() <= 2.0 * ELL_TOL);
        }
        assert!(find_ell_star(&c, 1.0, 5.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn observer_constants() {
        let c = scalar();
        assert_abs_diff_eq!(observer_delta(&c, 10.0, 1.0, 2.0), 18.0 / 21.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ell_doubleprime(&c, 1.0, 2.0), 8.5, epsilon = 1e-12);
        assert_abs_diff_eq!(observer_delta(&c, 8.5, 1.0, 2.0), 1.0, epsilon = 1e-12);

        let l = cmrac_ledgers(&inputs(10.0, 100.0)).unwrap();
        assert_abs_diff_eq!(l.beta6, 0.44, epsilon = 1e-12);
        let one = 1.0 - 18.0 / 21.0;
        assert_abs_diff_eq!(l.alpha5.unwrap(), one * 21.0 / 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(l.alpha7.unwrap(), l.alpha5.unwrap() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.beta7.unwrap(), 64.0 * 2.25 / one.powi(3), epsilon = 1e-6);

        let l = cmrac_ledgers(&inputs(5.0, 100.0)).unwrap();
        assert!(l.alpha5.is_none() && l.beta7.is_none());
        assert!(l.warnings.iter().any(|w| w.contains("Delta")));
    }

    #[test]
    fn set_radii_shrink_with_gamma() {
        let a = cmrac_ledgers(&inputs(10.0, 100.0)).unwrap();
        let b = cmrac_ledgers(&inputs(10.0, 1e6)).unwrap();
        assert!(b.beta1 < a.beta1 && b.beta4 < a.beta4 && b.beta5 < a.beta5 && b.beta6 < a.beta6);
        assert!(b.beta6 < 1e-3);
    }

    #[test]
    fn gain_monotonicity() {
        let ells = [0.0, 0.5, 1.0, 10.0, 100.0];
        let ls: Vec<_> = ells.iter().map(|&e| direct_ledger(&inputs(e, 100.0)).unwrap()).collect();
        for w in ls.windows(2) {
            assert!(w[1].alpha1 > w[0].alpha1);
            assert!(w[1].tau1 < w[0].tau1);
        }
    }

    #[test]
    fn m1_formula() {
        let c = scalar();
        assert!(matches!(m1(&c, 0.0), Err(Error::SingularM1 { .. })));
        let v = m1(&c, 10.0).unwrap();
        assert_abs_diff_eq!(v, 20.0 * 1.5f64.powi(4) * 2f64.sqrt() / (21.0 - 2.25), epsilon = 1e-12);
    }

    fn envelope_ledger(n: f64) -> BoundLedger {
        let mut inp = inputs(10.0, 1100.0);
        inp.n_constants = n;
        let mut l = direct_ledger(&inp).unwrap();
        // arithmetic checks below the time-scale threshold
        l.ell_star = 0.0;
        l
    }

    fn env_inputs(e0: f64, r0: f64, r1: f64) -> EnvelopeInputs {
        EnvelopeInputs {
            e0,
            em0: e0,
            ei0: 0.0,
            r0,
            r1,
            epsilon: 0.05,
            architecture: Architecture::DirectMrac,
        }
    }

    #[test]
    fn first_interval_error_gain() {
        let l = envelope_ledger(3.0);
        let env = udot_envelope(&l, Interval::T1, &env_inputs(0.5, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(env.g_e, 4.5f64.sqrt() * 0.5 + 0.02f64.sqrt() * 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(env.g_e, 1.7678, epsilon = 1e-4);
        assert_eq!(env.confidence, Confidence::Explicit);
    }

    #[test]
    fn zero_drive_envelope_is_reference_rate() {
        let l = envelope_ledger(3.0);
        let env = udot_envelope(&l, Interval::T1, &env_inputs(0.0, 0.0, 0.7)).unwrap();
        assert_eq!(env.g_x, 0.0);
        assert_abs_diff_eq!(env.value, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn later_intervals_shrink_with_n() {
        let inp = env_inputs(0.5, 1.0, 0.0);
        let g3 = udot_envelope(&envelope_ledger(3.0), Interval::T2, &inp).unwrap();
        let g5 = udot_envelope(&envelope_ledger(5.0), Interval::T2, &inp).unwrap();
        assert!(g5.g_e < g3.g_e);
        assert_eq!(g3.confidence, Confidence::Reconstructed);
        let t3 = udot_envelope(&envelope_ledger(3.0), Interval::T3, &inp).unwrap();
        assert_eq!(t3.g_e, 0.05);
    }

    #[test]
    fn envelope_premises() {
        let l = direct_ledger(&inputs(10.0, 1100.0)).unwrap();
        let inp = env_inputs(0.5, 0.0, 0.0);
        assert!(matches!(
            udot_envelope(&l, Interval::T1, &inp),
            Err(Error::TimescaleViolation { .. })
        ));
        assert!(udot_envelope(&envelope_ledger(2.0), Interval::T1, &inp).is_err());
        let mut l0 = direct_ledger(&inputs(0.0, 10.0)).unwrap();
        l0.ell_star = 0.0;
        assert!(matches!(
            udot_envelope(&l0, Interval::T2, &inp),
            Err(Error::SingularM1 { .. })
        ));
    }

    #[test]
    fn sup_of_exponential_difference() {
        let (t1, t2) = (0.2, 2.0);
        let grid = (0..200_000).map(|k| k as f64 * 1e-4);
        let brute = grid.map(|t| (-t / t2).exp() - (-t / t1).exp()).fold(0.0, f64::max);
        assert_abs_diff_eq!(sup_exp_difference(t1, t2, 0.0), brute, epsilon = 1e-8);
        assert!(sup_exp_difference(t1, t2, 10.0) < brute);
    }
}
