//! Fixed-step integration of closed-loop scenarios.
//!
//! The stacked state is `[x_a, x_m, x_m_orm?, aux?, theta, theta_hat?]`, where
//! `aux` is the identifier or observer state. Exogenous signals with jumps are
//! held at their value at the start of each step, so a zero-order-hold switch
//! never lands inside a Runge-Kutta stage.

pub mod signal;

use log::debug;
use nalgebra::{DVector, Dyn, U1};

use crate::adaptlaw::{self, Architecture, ControllerSpec};
use crate::error::{Error, Result};
use crate::models::{self, IdentifierSpec, ObserverSpec, PlantSpec, ReferenceModelSpec};
use crate::proj;
pub use signal::{gen_filtered_step, gen_saturated_gaussian, Signal};
pub use crate::models::gen_ltv_schedule_sec4;

/// Any state component beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Default integration step in seconds.
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialState {
    pub x: DVector<f64>,
    /// Defaults to zero.
    pub x_m: Option<DVector<f64>>,
    /// Identifier or observer state; defaults to zero.
    pub aux: Option<DVector<f64>>,
    /// Defaults to zero.
    pub theta: Option<DVector<f64>>,
    /// Defaults to `theta`.
    pub theta_hat: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantSpec,
    pub reference_model: ReferenceModelSpec,
    pub controller: ControllerSpec,
    pub reference: Signal,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub initial: InitialState,
    /// Co-simulate the open-loop reference model.
    pub orm_shadow: bool,
}

impl Scenario {
    /// Reseeds the disturbance and every noise channel from `seed`, each with
    /// its own stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(d) = &mut self.plant.disturbance {
            d.signal.reseed(signal::splitmix64(seed ^ 0xD15));
        }
        if let Some(noise) = &mut self.plant.noise {
            for (i, s) in noise.iter_mut().enumerate() {
                s.reseed(signal::splitmix64(seed ^ (0x4E01 + i as u64)));
            }
        }
        self
    }

    /// Same scenario with reference-model gain `ell` and adaptation gain `gamma`.
    pub fn with_gains(&self, ell: f64, gamma: f64) -> Result<Self> {
        let reference_model = ReferenceModelSpec::new(
            self.reference_model.a_m.clone(),
            self.reference_model.b.clone(),
            ell,
        )?;
        let controller = self.controller.retuned(&reference_model, gamma)?;
        Ok(Self {
            reference_model,
            controller,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.plant.dim()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    pub fn gamma(&self) -> f64 {
        self.controller.projection.gamma
    }

    pub fn ell(&self) -> f64 {
        self.reference_model.ell
    }

    pub fn x_m0(&self) -> DVector<f64> {
        self.initial
            .x_m
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim()))
    }

    pub fn aux0(&self) -> DVector<f64> {
        self.initial
            .aux
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim()))
    }

    pub fn theta0(&self) -> DVector<f64> {
        self.initial
            .theta
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim()))
    }

    pub fn theta_hat0(&self) -> DVector<f64> {
        self.initial.theta_hat.clone().unwrap_or_else(|| self.theta0())
    }

    pub fn has_noise(&self) -> bool {
        self.plant.noise.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if !(self.step > 0.0) || !(self.horizon >= self.step) {
            return Err(Error::InvalidConfig(format!(
                "need step > 0 and horizon >= step (step={}, horizon={})",
                self.step, self.horizon
            )));
        }
        if self.reference_model.b.len() != n || self.controller.b.len() != n {
            return Err(Error::DimensionMismatch(
                "plant, reference model and controller disagree on the input vector".into(),
            ));
        }
        if self.reference_model.b != self.plant.b {
            return Err(Error::InvalidConfig(
                "reference model and plant must share the input vector b".into(),
            ));
        }
        let check = |name: &str, v: &DVector<f64>| {
            if v.len() != n {
                Err(Error::DimensionMismatch(format!(
                    "initial {name} has {} entries, expected {n}",
                    v.len()
                )))
            } else {
                Ok(())
            }
        };
        check("x", &self.initial.x)?;
        check("x_m", &self.x_m0())?;
        check("aux", &self.aux0())?;
        check("theta", &self.theta0())?;
        check("theta_hat", &self.theta_hat0())?;
        let pc = &self.controller.projection;
        if self.controller.use_projection {
            for (name, th) in [("theta", self.theta0()), ("theta_hat", self.theta_hat0())] {
                if pc.f(&th) > 1.0 {
                    return Err(Error::InvalidConfig(format!(
                        "initial {name} lies outside the projection set (f = {})",
                        pc.f(&th)
                    )));
                }
            }
        }
        self.reference.validate().map_err(Error::InvalidConfig)?;
        if let Some(d) = &self.plant.disturbance {
            d.signal.validate().map_err(Error::InvalidConfig)?;
        }
        if let Some(noise) = &self.plant.noise {
            noise
                .iter()
                .try_for_each(Signal::validate)
                .map_err(Error::InvalidConfig)?;
        }
        Ok(())
    }
}

/// Uniformly sampled simulation record. Every array has one entry per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub kind: Architecture,
    pub step: f64,
    pub t: Vec<f64>,
    /// Measured state `x_a + n`.
    pub x: Vec<DVector<f64>>,
    /// True plant state.
    pub x_a: Vec<DVector<f64>>,
    pub x_m: Vec<DVector<f64>>,
    pub x_m_orm: Option<Vec<DVector<f64>>>,
    pub x_i: Option<Vec<DVector<f64>>>,
    pub x_o: Option<Vec<DVector<f64>>>,
    pub theta: Vec<DVector<f64>>,
    pub theta_hat: Option<Vec<DVector<f64>>>,
    pub theta_dot: Vec<DVector<f64>>,
    pub theta_hat_dot: Option<Vec<DVector<f64>>>,
    pub u: Vec<f64>,
    /// `theta_dot^T x + theta^T x_dot + r_dot`; present for noise-free direct runs.
    pub udot_analytic: Option<Vec<f64>>,
    pub r: Vec<f64>,
    pub d: Vec<f64>,
    pub n: Vec<DVector<f64>>,
    /// Number of steps after which a parameter vector was pulled back onto
    /// the projection boundary.
    pub repairs: usize,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |v| v.len())
    }

    fn with_capacity(kind: Architecture, step: f64, cap: usize, layout: &Layout) -> Self {
        Self {
            kind,
            step,
            t: Vec::with_capacity(cap),
            x: Vec::with_capacity(cap),
            x_a: Vec::with_capacity(cap),
            x_m: Vec::with_capacity(cap),
            x_m_orm: layout.orm.map(|_| Vec::with_capacity(cap)),
            x_i: (kind == Architecture::CmracC).then(|| Vec::with_capacity(cap)),
            x_o: (kind == Architecture::CmracCo).then(|| Vec::with_capacity(cap)),
            theta: Vec::with_capacity(cap),
            theta_hat: layout.theta_hat.map(|_| Vec::with_capacity(cap)),
            theta_dot: Vec::with_capacity(cap),
            theta_hat_dot: layout.theta_hat.map(|_| Vec::with_capacity(cap)),
            u: Vec::with_capacity(cap),
            udot_analytic: None,
            r: Vec::with_capacity(cap),
            d: Vec::with_capacity(cap),
            n: Vec::with_capacity(cap),
            repairs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    orm: Option<usize>,
    aux: Option<usize>,
    theta: usize,
    theta_hat: Option<usize>,
    len: usize,
}

impl Layout {
    fn new(n: usize, orm: bool, kind: Architecture) -> Self {
        let mut next = 2 * n;
        let mut take = |on: bool| {
            on.then(|| {
                let at = next;
                next += n;
                at
            })
        };
        let orm = take(orm);
        let aux = take(kind.has_auxiliary());
        let theta = take(true).unwrap_or_default();
        let theta_hat = take(kind.has_auxiliary());
        Self {
            n,
            orm,
            aux,
            theta,
            theta_hat,
            len: next,
        }
    }

    fn get(&self, z: &DVector<f64>, at: usize) -> DVector<f64> {
        z.generic_view((at, 0), (Dyn(self.n), U1)).into_owned()
    }

    fn put(&self, z: &mut DVector<f64>, at: usize, v: &DVector<f64>) {
        z.rows_mut(at, self.n).copy_from(v);
    }
}

/// Exogenous inputs at one Runge-Kutta stage.
struct Exogenous {
    r: f64,
    r_dot: f64,
    d: f64,
    n: DVector<f64>,
}

fn sample(sig: &Signal, stage_t: f64, step_t: f64) -> f64 {
    if sig.is_smooth() {
        sig.value(stage_t)
    } else {
        sig.value(step_t)
    }
}

/// Everything the closed loop computes at one stage.
struct Eval {
    dz: DVector<f64>,
    x_meas: DVector<f64>,
    u: f64,
    x_a_dot: DVector<f64>,
    theta_dot: DVector<f64>,
    theta_hat_dot: Option<DVector<f64>>,
}

struct ClosedLoop<'a> {
    sc: &'a Scenario,
    layout: Layout,
    identifier: IdentifierSpec,
    observer: ObserverSpec,
}

impl<'a> ClosedLoop<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let layout = Layout::new(sc.dim(), sc.orm_shadow, sc.controller.kind);
        Self {
            sc,
            layout,
            identifier: IdentifierSpec {
                gain: sc.controller.aux_gain,
            },
            observer: ObserverSpec {
                gain: sc.controller.aux_gain,
            },
        }
    }

    fn exogenous(&self, t: f64, step_t: f64) -> Exogenous {
        let sc = self.sc;
        let d = sc
            .plant
            .disturbance
            .as_ref()
            .map_or(0.0, |d| sample(&d.signal, t, step_t));
        let n = match &sc.plant.noise {
            Some(noise) => DVector::from_iterator(noise.len(), noise.iter().map(|s| sample(s, t, step_t))),
            None => DVector::zeros(sc.dim()),
        };
        Exogenous {
            r: sample(&sc.reference, t, step_t),
            r_dot: if sc.reference.is_smooth() {
                sc.reference.derivative(t)
            } else {
                0.0
            },
            d,
            n,
        }
    }

    fn eval(&self, t: f64, z: &DVector<f64>, ex: &Exogenous) -> Result<Eval> {
        let sc = self.sc;
        let ly = &self.layout;
        let ctl = &sc.controller;
        let rm = &sc.reference_model;

        let x_a = ly.get(z, 0);
        let x_m = ly.get(z, ly.n);
        let theta = ly.get(z, ly.theta);
        let x_meas = &x_a + &ex.n;
        let aux = ly.aux.map(|at| ly.get(z, at));
        let theta_hat = ly.theta_hat.map(|at| ly.get(z, at));

        let regressor = match ctl.kind {
            Architecture::CmracCo => aux.as_ref().expect("observer state"),
            _ => &x_meas,
        };
        let u = adaptlaw::control_input(&theta, regressor, ex.r)?;

        let x_a_dot = models::plant_derivative(&sc.plant, t, &x_a, u, ex.d);
        let x_m_dot = models::crm_rhs(rm, &x_m, &x_meas, ex.r)?;
        let e_m = &x_meas - &x_m;

        let mut dz = DVector::zeros(ly.len);
        ly.put(&mut dz, 0, &x_a_dot);
        ly.put(&mut dz, ly.n, &x_m_dot);
        if let Some(at) = ly.orm {
            let x_orm = ly.get(z, at);
            ly.put(&mut dz, at, &models::orm_rhs(rm, &x_orm, ex.r)?);
        }

        let (theta_dot, theta_hat_dot) = match ctl.kind {
            Architecture::DirectMrac => {
                (adaptlaw::direct_update_direction(&theta, &x_meas, &e_m, ctl)?, None)
            }
            Architecture::CmracC => {
                let x_i = aux.as_ref().expect("identifier state");
                let th_hat = theta_hat.as_ref().expect("indirect estimate");
                let dx_i = models::identifier_rhs(&self.identifier, x_i, &x_meas, th_hat, u, &rm.a_m, &rm.b)?;
                ly.put(&mut dz, ly.aux.expect("aux slot"), &dx_i);
                let e_i = x_i - &x_meas;
                let (a, b) = adaptlaw::cmracc_update_direction(&theta, th_hat, &x_meas, &e_m, &e_i, ctl)?;
                (a, Some(b))
            }
            Architecture::CmracCo => {
                let x_o = aux.as_ref().expect("observer state");
                let th_hat = theta_hat.as_ref().expect("indirect estimate");
                let dx_o = models::observer_rhs(&self.observer, x_o, &x_meas, th_hat, u, &rm.a_m, &rm.b)?;
                ly.put(&mut dz, ly.aux.expect("aux slot"), &dx_o);
                let e_o = x_o - &x_meas;
                let (a, b) = adaptlaw::cmracco_update_direction(&theta, th_hat, x_o, &e_m, &e_o, ctl)?;
                (a, Some(b))
            }
        };
        ly.put(&mut dz, ly.theta, &theta_dot);
        if let (Some(at), Some(v)) = (ly.theta_hat, &theta_hat_dot) {
            ly.put(&mut dz, at, v);
        }
        Ok(Eval {
            dz,
            x_meas,
            u,
            x_a_dot,
            theta_dot,
            theta_hat_dot,
        })
    }

    fn initial_state(&self) -> DVector<f64> {
        let sc = self.sc;
        let ly = &self.layout;
        let mut z = DVector::zeros(ly.len);
        ly.put(&mut z, 0, &sc.initial.x);
        ly.put(&mut z, ly.n, &sc.x_m0());
        if let Some(at) = ly.orm {
            ly.put(&mut z, at, &sc.x_m0());
        }
        if let Some(at) = ly.aux {
            ly.put(&mut z, at, &sc.aux0());
        }
        ly.put(&mut z, ly.theta, &sc.theta0());
        if let Some(at) = ly.theta_hat {
            ly.put(&mut z, at, &sc.theta_hat0());
        }
        z
    }

    fn record(&self, tr: &mut Trace, t: f64, z: &DVector<f64>, ev: &Eval, ex: &Exogenous) {
        let ly = &self.layout;
        let theta = ly.get(z, ly.theta);
        if let Some(ud) = &mut tr.udot_analytic {
            ud.push(ev.theta_dot.dot(&ev.x_meas) + theta.dot(&ev.x_a_dot) + ex.r_dot);
        }
        tr.t.push(t);
        tr.x.push(ev.x_meas.clone());
        tr.x_a.push(ly.get(z, 0));
        tr.x_m.push(ly.get(z, ly.n));
        if let (Some(v), Some(at)) = (&mut tr.x_m_orm, ly.orm) {
            v.push(ly.get(z, at));
        }
        if let Some(at) = ly.aux {
            let aux = ly.get(z, at);
            if let Some(v) = &mut tr.x_i {
                v.push(aux);
            } else if let Some(v) = &mut tr.x_o {
                v.push(aux);
            }
        }
        tr.theta.push(theta);
        if let (Some(v), Some(at)) = (&mut tr.theta_hat, ly.theta_hat) {
            v.push(ly.get(z, at));
        }
        tr.theta_dot.push(ev.theta_dot.clone());
        if let (Some(v), Some(d)) = (&mut tr.theta_hat_dot, &ev.theta_hat_dot) {
            v.push(d.clone());
        }
        tr.u.push(ev.u);
        tr.r.push(ex.r);
        tr.d.push(ex.d);
        tr.n.push(ex.n.clone());
    }

    fn repair(&self, z: &mut DVector<f64>) -> bool {
        let ctl = &self.sc.controller;
        if !ctl.use_projection {
            return false;
        }
        let ly = &self.layout;
        let mut any = false;
        for at in std::iter::once(ly.theta).chain(ly.theta_hat) {
            let mut th = ly.get(z, at);
            if proj::repair(&mut th, &ctl.projection) {
                ly.put(z, at, &th);
                any = true;
            }
        }
        any
    }
}

fn diverged(z: &DVector<f64>) -> bool {
    z.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Integrates `scenario` with classical fourth-order Runge-Kutta.
pub fn integrate(scenario: &Scenario) -> Result<Trace> {
    scenario.validate()?;
    let cl = ClosedLoop::new(scenario);
    let h = scenario.step;
    let steps = scenario.steps();
    let mut tr = Trace::with_capacity(scenario.controller.kind, h, steps + 1, &cl.layout);
    if scenario.controller.kind == Architecture::DirectMrac && !scenario.has_noise() {
        tr.udot_analytic = Some(Vec::with_capacity(steps + 1));
    }

    let mut z = cl.initial_state();
    for k in 0..=steps {
        let t = k as f64 * h;
        let ex = cl.exogenous(t, t);
        let k1 = cl.eval(t, &z, &ex)?;
        cl.record(&mut tr, t, &z, &k1, &ex);
        if k == steps {
            break;
        }
        let mid = cl.exogenous(t + 0.5 * h, t);
        let end = cl.exogenous(t + h, t);
        let k2 = cl.eval(t + 0.5 * h, &(&z + &k1.dz * (0.5 * h)), &mid)?.dz;
        let k3 = cl.eval(t + 0.5 * h, &(&z + &k2 * (0.5 * h)), &mid)?.dz;
        let k4 = cl.eval(t + h, &(&z + &k3 * h), &end)?.dz;
        z += (k1.dz + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if cl.repair(&mut z) {
            tr.repairs += 1;
        }
        if diverged(&z) {
            debug!("{}: divergence at t = {}", scenario.name, t + h);
            return Err(Error::NonFinite {
                t: t + h,
                partial: Box::new(tr),
            });
        }
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proj::ProjectionConfig;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn scalar(theta_star: f64, ell: f64, kind: Architecture) -> Scenario {
        let a_m = DMatrix::from_element(1, 1, -1.0);
        let b = v(&[1.0]);
        let plant = models::plant_from_matching(&a_m, &b, &v(&[theta_star])).unwrap();
        let rm = ReferenceModelSpec::new(a_m, b, ell).unwrap();
        let pc = ProjectionConfig::new(2.0, 1.0, 10.0, 1.0).unwrap();
        let controller = ControllerSpec::new(kind, pc, &rm, None, true).unwrap();
        Scenario {
            name: "test".into(),
            plant,
            reference_model: rm,
            controller,
            reference: Signal::Zero,
            horizon: 1.0,
            step: 1e-3,
            seed: 0,
            initial: InitialState {
                x: v(&[1.0]),
                x_m: Some(v(&[1.0])),
                ..Default::default()
            },
            orm_shadow: true,
        }
    }

    #[test]
    fn exponential_decay() {
        let tr = integrate(&scalar(0.0, 0.0, Architecture::DirectMrac)).unwrap();
        assert_eq!(tr.len(), 1001);
        assert_abs_diff_eq!(tr.x[1000][0], (-1.0_f64).exp(), epsilon = 1e-9);
        assert_eq!(tr.t[1000], 1.0);
    }

    #[test]
    fn matched_start_tracks_exactly() {
        let mut sc = scalar(0.0, 3.0, Architecture::DirectMrac);
        sc.reference = gen_filtered_step(0.2, 1.0, 0.5);
        let tr = integrate(&sc).unwrap();
        for k in 0..tr.len() {
            assert_eq!(tr.x[k], tr.x_m[k]);
            assert_eq!(tr.u[k], tr.r[k]);
        }
    }

    #[test]
    fn shadow_equals_crm_at_zero_ell() {
        let mut sc = scalar(-2.0, 0.0, Architecture::DirectMrac);
        sc.initial.x_m = None;
        sc.reference = gen_filtered_step(0.1, 1.0, 1.0);
        let tr = integrate(&sc).unwrap();
        let orm = tr.x_m_orm.as_ref().unwrap();
        for k in 0..tr.len() {
            assert_eq!(tr.x_m[k], orm[k]);
        }
    }

    #[test]
    fn composite_layouts_run() {
        for kind in [Architecture::CmracC, Architecture::CmracCo] {
            let mut sc = scalar(-2.0, 10.0, kind);
            sc.initial.x_m = None;
            let tr = integrate(&sc).unwrap();
            assert!(tr.theta_hat.is_some());
            assert_eq!(tr.x_i.is_some(), kind == Architecture::CmracC);
            assert_eq!(tr.x_o.is_some(), kind == Architecture::CmracCo);
            assert!(tr.udot_analytic.is_none());
        }
    }

    #[test]
    fn divergence_returns_partial_trace() {
        let mut sc = scalar(-2.0, 0.0, Architecture::DirectMrac);
        // parameters confined well short of the stabilizing gain
        sc.controller.projection = ProjectionConfig::new(0.5, 0.1, 10.0, 0.0).unwrap();
        sc.horizon = 40.0;
        sc.initial.x = v(&[1e6]);
        match integrate(&sc) {
            Err(Error::NonFinite { t, partial }) => {
                assert!(t < 40.0);
                assert!(!partial.is_empty());
            }
            Err(e) => panic!("expected divergence, got {e}"),
            Ok(tr) => panic!("expected divergence, final x = {}", tr.x[tr.len() - 1]),
        }
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut sc = scalar(0.0, 0.0, Architecture::DirectMrac);
        sc.step = 0.0;
        assert!(integrate(&sc).is_err());
        let mut sc = scalar(0.0, 0.0, Architecture::DirectMrac);
        sc.initial.theta = Some(v(&[10.0]));
        assert!(integrate(&sc).is_err());
    }
}
