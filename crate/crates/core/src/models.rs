//! Right-hand sides of the plant, reference models, identifier and observer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matan;
use crate::sim::signal::Signal;

/// Absolute tolerance for the matching condition `A_m = A_p + b theta*^T`.
const MATCHING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Lti,
    Ltv,
    NoisyMeasurement,
}

/// Piecewise-linear matrix schedule, held constant before the first knot and
/// after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSchedule {
    knots: Vec<(f64, DMatrix<f64>)>,
}

impl MatrixSchedule {
    pub fn constant(a: DMatrix<f64>) -> Self {
        Self {
            knots: vec![(0.0, a)],
        }
    }

    pub fn piecewise_linear(knots: Vec<(f64, DMatrix<f64>)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidConfig("matrix schedule needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidConfig("schedule knot times must increase".into()));
        }
        let shape = knots[0].1.shape();
        if knots.iter().any(|(_, m)| m.shape() != shape) {
            return Err(Error::DimensionMismatch("schedule knots differ in shape".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, DMatrix<f64>)] {
        &self.knots
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let first = &self.knots[0];
        if t <= first.0 {
            return first.1.clone();
        }
        for w in self.knots.windows(2) {
            let (t0, a0) = &w[0];
            let (t1, a1) = &w[1];
            if t < *t1 {
                let lambda = (t - t0) / (t1 - t0);
                return a0 * (1.0 - lambda) + a1 * lambda;
            }
        }
        self.knots[self.knots.len() - 1].1.clone()
    }

    /// First time the schedule departs from its initial value.
    pub fn first_change(&self) -> f64 {
        let a0 = &self.knots[0].1;
        for w in self.knots.windows(2) {
            if w[1].1 != *a0 {
                return w[0].0;
            }
        }
        f64::INFINITY
    }

    pub fn is_constant(&self) -> bool {
        self.first_change().is_infinite()
    }
}

/// Disturbance `d(t) * input` added to the plant derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub signal: Signal,
    pub input: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub a_p: MatrixSchedule,
    pub b: DVector<f64>,
    /// Ideal gains at each schedule knot; interpolated like `a_p`.
    theta_star: Vec<(f64, DVector<f64>)>,
    pub disturbance: Option<Disturbance>,
    /// One signal per state component.
    pub noise: Option<Vec<Signal>>,
}

fn matching_gain(a_m: &DMatrix<f64>, a_p: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a_m.shape() != a_p.shape() || a_m.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "A_m is {:?}, A_p is {:?}, b has {} entries",
            a_m.shape(),
            a_p.shape(),
            b.len()
        )));
    }
    let bb = b.norm_squared();
    if !(bb > 0.0) {
        return Err(Error::InvalidConfig("input vector b must be nonzero".into()));
    }
    let diff = a_m - a_p;
    let theta = diff.transpose() * b / bb;
    let residual = (&diff - b * theta.transpose()).abs().max();
    if residual > MATCHING_TOL * (1.0 + diff.abs().max()) {
        return Err(Error::InvalidConfig(format!(
            "no theta* satisfies A_m = A_p + b theta*^T (residual {residual:e})"
        )));
    }
    Ok(theta)
}

/// Plant `A_p = A_m - b theta*^T` satisfying the matching condition.
pub fn plant_from_matching(
    a_m: &DMatrix<f64>,
    b: &DVector<f64>,
    theta_star: &DVector<f64>,
) -> Result<PlantSpec> {
    if a_m.nrows() != a_m.ncols() || a_m.nrows() != b.len() || b.len() != theta_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "A_m is {:?}, b has {} entries, theta* has {}",
            a_m.shape(),
            b.len(),
            theta_star.len()
        )));
    }
    let a_p = a_m - b * theta_star.transpose();
    Ok(PlantSpec {
        kind: PlantKind::Lti,
        a_p: MatrixSchedule::constant(a_p),
        b: b.clone(),
        theta_star: vec![(0.0, theta_star.clone())],
        disturbance: None,
        noise: None,
    })
}

impl PlantSpec {
    /// Plant with a (possibly time-varying) `A_p` schedule; the matching
    /// condition is checked at every knot.
    pub fn from_schedule(a_m: &DMatrix<f64>, b: &DVector<f64>, a_p: MatrixSchedule) -> Result<Self> {
        let theta_star = a_p
            .knots()
            .iter()
            .map(|(t, a)| matching_gain(a_m, a, b).map(|th| (*t, th)))
            .collect::<Result<Vec<_>>>()?;
        let kind = if a_p.is_constant() {
            PlantKind::Lti
        } else {
            PlantKind::Ltv
        };
        Ok(Self {
            kind,
            a_p,
            b: b.clone(),
            theta_star,
            disturbance: None,
            noise: None,
        })
    }

    pub fn with_disturbance(mut self, signal: Signal, input: DVector<f64>) -> Result<Self> {
        if input.len() != self.b.len() {
            return Err(Error::DimensionMismatch("disturbance input length".into()));
        }
        self.disturbance = Some(Disturbance { signal, input });
        if self.kind == PlantKind::Lti {
            self.kind = PlantKind::Ltv;
        }
        Ok(self)
    }

    pub fn with_noise(mut self, noise: Vec<Signal>) -> Result<Self> {
        if noise.len() != self.b.len() {
            return Err(Error::DimensionMismatch(format!(
                "noise has {} channels for a {}-state plant",
                noise.len(),
                self.b.len()
            )));
        }
        self.noise = Some(noise);
        self.kind = PlantKind::NoisyMeasurement;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn theta_star_at(&self, t: f64) -> DVector<f64> {
        let knots = &self.theta_star;
        if t <= knots[0].0 {
            return knots[0].1.clone();
        }
        for w in knots.windows(2) {
            if t < w[1].0 {
                let lambda = (t - w[0].0) / (w[1].0 - w[0].0);
                return &w[0].1 * (1.0 - lambda) + &w[1].1 * lambda;
            }
        }
        knots[knots.len() - 1].1.clone()
    }

    /// Largest `||theta*(t)||` over all time.
    pub fn theta_star_max(&self) -> f64 {
        // the norm of a piecewise-linear path peaks at a knot
        self.theta_star
            .iter()
            .map(|(_, th)| th.norm())
            .fold(0.0, f64::max)
    }

    /// Largest `||d theta*/dt||`.
    pub fn theta_star_rate_bound(&self) -> f64 {
        self.theta_star
            .windows(2)
            .map(|w| (&w[1].1 - &w[0].1).norm() / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }

    /// Bound on `||d(t) * input||`.
    pub fn disturbance_bound(&self) -> f64 {
        self.disturbance
            .as_ref()
            .map_or(0.0, |d| d.signal.bound() * d.input.norm())
    }

    /// Bound on `||n(t)||`.
    pub fn noise_bound(&self) -> f64 {
        self.noise.as_ref().map_or(0.0, |n| {
            n.iter().map(|s| s.bound().powi(2)).sum::<f64>().sqrt()
        })
    }

    pub fn disturbance_at(&self, t: f64) -> f64 {
        self.disturbance.as_ref().map_or(0.0, |d| d.signal.value(t))
    }

    pub fn noise_at(&self, t: f64) -> DVector<f64> {
        match &self.noise {
            Some(n) => DVector::from_iterator(n.len(), n.iter().map(|s| s.value(t))),
            None => DVector::zeros(self.dim()),
        }
    }

    /// Time from which `theta*` stops being constant or a disturbance can act.
    pub fn perturbation_onset(&self) -> f64 {
        let d = self
            .disturbance
            .as_ref()
            .map_or(f64::INFINITY, |d| d.signal.onset());
        self.a_p.first_change().min(d)
    }
}

/// `A_p(t) x_a + b u + input d` with the disturbance already sampled.
pub fn plant_derivative(spec: &PlantSpec, t: f64, x_a: &DVector<f64>, u: f64, d: f64) -> DVector<f64> {
    let mut dx = spec.a_p.at(t) * x_a + &spec.b * u;
    if let Some(dist) = &spec.disturbance {
        dx += &dist.input * d;
    }
    dx
}

/// Plant derivative and the measured state.
pub fn plant_rhs(
    spec: &PlantSpec,
    t: f64,
    x_a: &DVector<f64>,
    u: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if x_a.len() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} entries, plant has {}",
            x_a.len(),
            spec.dim()
        )));
    }
    let dx = plant_derivative(spec, t, x_a, u, spec.disturbance_at(t));
    let measured = match spec.kind {
        PlantKind::NoisyMeasurement => {
            if spec.noise.is_none() {
                return Err(Error::SignalOutOfRange("measurement noise"));
            }
            x_a + spec.noise_at(t)
        }
        _ => x_a.clone(),
    };
    Ok((dx, measured))
}

/// Reference model `x_m' = A_m x_m + b r + ell (x - x_m)`; `ell = 0` is the
/// open-loop model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModelSpec {
    pub a_m: DMatrix<f64>,
    pub b: DVector<f64>,
    pub ell: f64,
}

impl ReferenceModelSpec {
    pub fn new(a_m: DMatrix<f64>, b: DVector<f64>, ell: f64) -> Result<Self> {
        if a_m.nrows() != a_m.ncols() || a_m.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "A_m is {:?}, b has {} entries",
                a_m.shape(),
                b.len()
            )));
        }
        if !(ell >= 0.0) {
            return Err(Error::InvalidConfig(format!("ell must be >= 0, got {ell}")));
        }
        let max_real = matan::spectral_abscissa(&a_m)?;
        if !(max_real < -matan::HURWITZ_TOL) {
            return Err(Error::NotHurwitz { max_real });
        }
        Ok(Self { a_m, b, ell })
    }

    pub fn open_loop(&self) -> Self {
        Self {
            ell: 0.0,
            ..self.clone()
        }
    }
}

fn check_len(name: &str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {} entries, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

pub fn crm_rhs(
    spec: &ReferenceModelSpec,
    x_m: &DVector<f64>,
    x_measured: &DVector<f64>,
    r: f64,
) -> Result<DVector<f64>> {
    let n = spec.b.len();
    check_len("x_m", x_m, n)?;
    check_len("x", x_measured, n)?;
    Ok(&spec.a_m * x_m + &spec.b * r + (x_measured - x_m) * spec.ell)
}

pub fn orm_rhs(spec: &ReferenceModelSpec, x_m: &DVector<f64>, r: f64) -> Result<DVector<f64>> {
    check_len("x_m", x_m, spec.b.len())?;
    Ok(&spec.a_m * x_m + &spec.b * r)
}

/// Identifier with `L_i = -gain I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifierSpec {
    pub gain: f64,
}

impl IdentifierSpec {
    /// Default gain `sigma + ell`.
    pub fn for_reference(sigma: f64, ell: f64) -> Self {
        Self { gain: sigma + ell }
    }
}

/// Observer with `L_o = -gain I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverSpec {
    pub gain: f64,
}

impl ObserverSpec {
    /// Default gain `ell`.
    pub fn for_reference(ell: f64) -> Self {
        Self { gain: ell }
    }
}

/// `x_i' = L_i (x_i - x) + (A_m - b theta_hat^T) x + b u`.
pub fn identifier_rhs(
    spec: &IdentifierSpec,
    x_i: &DVector<f64>,
    x_measured: &DVector<f64>,
    theta_hat: &DVector<f64>,
    u: f64,
    a_m: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = b.len();
    check_len("x_i", x_i, n)?;
    check_len("x", x_measured, n)?;
    check_len("theta_hat", theta_hat, n)?;
    let model = a_m * x_measured - b * theta_hat.dot(x_measured);
    Ok((x_i - x_measured) * (-spec.gain) + model + b * u)
}

/// `x_o' = L_o (x_o - x) + (A_m - b theta_hat^T) x_o + b u`; the measured
/// state only enters through the injection term.
pub fn observer_rhs(
    spec: &ObserverSpec,
    x_o: &DVector<f64>,
    x_measured: &DVector<f64>,
    theta_hat: &DVector<f64>,
    u: f64,
    a_m: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = b.len();
    check_len("x_o", x_o, n)?;
    check_len("x", x_measured, n)?;
    check_len("theta_hat", theta_hat, n)?;
    let model = a_m * x_o - b * theta_hat.dot(x_o);
    Ok((x_o - x_measured) * (-spec.gain) + model + b * u)
}

/// The LTV schedule of the robustness study: `A_p = 1` until 20 s, a ramp of
/// slope 1/4 to 2 at 24 s, then constant.
pub fn gen_ltv_schedule_sec4() -> MatrixSchedule {
    MatrixSchedule::piecewise_linear(vec![
        (20.0, DMatrix::from_element(1, 1, 1.0)),
        (24.0, DMatrix::from_element(1, 1, 2.0)),
    ])
    .expect("static schedule is well formed")
}
