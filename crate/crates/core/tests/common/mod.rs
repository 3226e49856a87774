#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use crm_core::adaptlaw::{Architecture, ControllerSpec};
use crm_core::models::{self, PlantSpec, ReferenceModelSpec};
use crm_core::proj::ProjectionConfig;
use crm_core::sim::{InitialState, Scenario, Signal};

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn m1x1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

pub struct Setup {
    pub kind: Architecture,
    pub plant: PlantSpec,
    pub ell: f64,
    pub rho: f64,
    pub vartheta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub aux_gain: Option<f64>,
    pub reference: Signal,
    pub horizon: f64,
    pub x0: f64,
    pub theta0: f64,
    pub orm_shadow: bool,
}

/// Scalar loop with `A_m = -1`, `b = 1`, `A_p = 1` and the gains of the
/// time-varying study's closed-loop column.
pub fn scalar(kind: Architecture) -> Setup {
    Setup {
        kind,
        plant: models::plant_from_matching(&m1x1(-1.0), &v(&[1.0]), &v(&[-2.0])).unwrap(),
        ell: 10.0,
        rho: 100.0,
        vartheta: 3.0,
        epsilon: 1.0,
        eta: if kind == Architecture::DirectMrac { 0.0 } else { 1.0 },
        aux_gain: None,
        reference: Signal::Zero,
        horizon: 10.0,
        x0: 1.0,
        theta0: 0.0,
        orm_shadow: true,
    }
}

impl Setup {
    pub fn build(&self) -> Scenario {
        let rm = ReferenceModelSpec::new(m1x1(-1.0), v(&[1.0]), self.ell).unwrap();
        let gamma = self.rho * (1.0 + self.ell);
        let pc = ProjectionConfig::new(self.vartheta, self.epsilon, gamma, self.eta).unwrap();
        let controller = ControllerSpec::new(self.kind, pc, &rm, self.aux_gain, true).unwrap();
        let aux = self.kind.has_auxiliary().then(|| v(&[self.x0]));
        Scenario {
            name: "test".into(),
            plant: self.plant.clone(),
            reference_model: rm,
            controller,
            reference: self.reference.clone(),
            horizon: self.horizon,
            step: 1e-3,
            seed: 0,
            initial: InitialState {
                x: v(&[self.x0]),
                aux,
                theta: Some(v(&[self.theta0])),
                ..InitialState::default()
            },
            orm_shadow: self.orm_shadow && self.kind == Architecture::DirectMrac,
        }
    }
}
