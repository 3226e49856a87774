//! Control inputs and adaptive update laws for the direct, composite and
//! observer-feedback composite architectures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matan;
use crate::models::ReferenceModelSpec;
use crate::proj::{self, ProjectionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Direct MRAC with a closed-loop reference model.
    DirectMrac,
    /// Composite MRAC with an identifier on the measured state.
    CmracC,
    /// Composite MRAC whose regressor is an observer state.
    #[serde(rename = "cmrac_co")]
    CmracCo,
}

impl Architecture {
    pub fn has_auxiliary(self) -> bool {
        !matches!(self, Architecture::DirectMrac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub kind: Architecture,
    pub projection: ProjectionConfig,
    /// Solution of the Lyapunov equation for `A_m - ell I`.
    pub p_m: DMatrix<f64>,
    /// Weight of the auxiliary error; `I / (2 gain)` for the identifier,
    /// `p_m` for the observer, unused for the direct law.
    pub p_i: DMatrix<f64>,
    /// Identifier or observer gain (`L = -gain I`); zero for the direct law.
    pub aux_gain: f64,
    /// Explicit gain requested instead of the default.
    pub aux_gain_override: Option<f64>,
    /// `false` selects the unprojected gradient law.
    pub use_projection: bool,
    pub b: DVector<f64>,
}

impl ControllerSpec {
    /// Builds the controller for `reference`, defaulting the identifier gain
    /// to `sigma + ell` and the observer gain to `ell`.
    pub fn new(
        kind: Architecture,
        projection: ProjectionConfig,
        reference: &ReferenceModelSpec,
        aux_gain: Option<f64>,
        use_projection: bool,
    ) -> Result<Self> {
        projection.validate()?;
        let aux_gain_override = aux_gain;
        let n = reference.b.len();
        let p_m = matan::solve_lyapunov(&reference.a_m, reference.ell)?.p;
        let sigma = -matan::spectral_abscissa(&reference.a_m)?;
        let (aux_gain, p_i) = match kind {
            Architecture::DirectMrac => (0.0, DMatrix::zeros(n, n)),
            Architecture::CmracC => {
                let g = aux_gain.unwrap_or(sigma + reference.ell);
                if !(g > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "identifier gain must be positive, got {g}"
                    )));
                }
                (g, DMatrix::identity(n, n) / (2.0 * g))
            }
            Architecture::CmracCo => {
                let g = aux_gain.unwrap_or(reference.ell);
                if !(g >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "observer gain must be non-negative, got {g}"
                    )));
                }
                (g, p_m.clone())
            }
        };
        Ok(Self {
            kind,
            projection,
            p_m,
            p_i,
            aux_gain,
            aux_gain_override: if kind.has_auxiliary() { aux_gain_override } else { None },
            use_projection,
            b: reference.b.clone(),
        })
    }

    /// Rebuilds the controller for a new reference model and gain, keeping
    /// any explicit auxiliary gain.
    pub fn retuned(&self, reference: &ReferenceModelSpec, gamma: f64) -> Result<Self> {
        let projection = ProjectionConfig {
            gamma,
            ..self.projection
        };
        Self::new(
            self.kind,
            projection,
            reference,
            self.aux_gain_override,
            self.use_projection,
        )
    }

    fn gradient_step(&self, theta: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        if self.use_projection {
            proj::project(theta, y, &self.projection)
        } else {
            if theta.len() != y.len() {
                return Err(Error::DimensionMismatch("theta and y differ in length".into()));
            }
            Ok(y * self.projection.gamma)
        }
    }

    fn coupled(
        &self,
        theta: &DVector<f64>,
        theta_hat: &DVector<f64>,
        y1: &DVector<f64>,
        y2: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if theta.len() != theta_hat.len() {
            return Err(Error::DimensionMismatch("theta and theta_hat differ in length".into()));
        }
        let coupling = (theta - theta_hat) * self.projection.eta;
        Ok((
            self.gradient_step(theta, y1)? - &coupling,
            self.gradient_step(theta_hat, y2)? + coupling,
        ))
    }
}

fn check(name: &str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {} entries, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

/// `u = theta^T regressor + r`.
pub fn control_input(theta: &DVector<f64>, regressor: &DVector<f64>, r: f64) -> Result<f64> {
    check("regressor", regressor, theta.len())?;
    Ok(theta.dot(regressor) + r)
}

/// `Proj(theta, -x e^T P b)`, or `-gamma x e^T P b` without projection.
pub fn direct_update_direction(
    theta: &DVector<f64>,
    x: &DVector<f64>,
    e: &DVector<f64>,
    spec: &ControllerSpec,
) -> Result<DVector<f64>> {
    let n = spec.b.len();
    check("theta", theta, n)?;
    check("x", x, n)?;
    check("e", e, n)?;
    let epb = e.dot(&(&spec.p_m * &spec.b));
    spec.gradient_step(theta, &(x * -epb))
}

/// Composite law with identifier error `e_i = x_i - x`.
pub fn cmracc_update_direction(
    theta: &DVector<f64>,
    theta_hat: &DVector<f64>,
    x: &DVector<f64>,
    e_m: &DVector<f64>,
    e_i: &DVector<f64>,
    spec: &ControllerSpec,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = spec.b.len();
    check("theta", theta, n)?;
    check("x", x, n)?;
    check("e_m", e_m, n)?;
    check("e_i", e_i, n)?;
    let y1 = x * -e_m.dot(&(&spec.p_m * &spec.b));
    let y2 = x * e_i.dot(&(&spec.p_i * &spec.b));
    spec.coupled(theta, theta_hat, &y1, &y2)
}

/// Composite law with observer regressor `x_o` and `e_o = x_o - x`.
pub fn cmracco_update_direction(
    theta: &DVector<f64>,
    theta_hat: &DVector<f64>,
    x_o: &DVector<f64>,
    e_m: &DVector<f64>,
    e_o: &DVector<f64>,
    spec: &ControllerSpec,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = spec.b.len();
    check("theta", theta, n)?;
    check("x_o", x_o, n)?;
    check("e_m", e_m, n)?;
    check("e_o", e_o, n)?;
    let pb = &spec.p_m * &spec.b;
    let y1 = x_o * -e_m.dot(&pb);
    let y2 = x_o * e_o.dot(&pb);
    spec.coupled(theta, theta_hat, &y1, &y2)
}

/// `e^T P e + |theta_tilde|^2 / gamma`.
pub fn direct_lyapunov(
    e: &DVector<f64>,
    theta_tilde: &DVector<f64>,
    p: &DMatrix<f64>,
    gamma: f64,
) -> f64 {
    e.dot(&(p * e)) + theta_tilde.norm_squared() / gamma
}

/// `e_m^T P_m e_m + e_a^T P_a e_a + (|theta_tilde|^2 + |theta_bar|^2) / gamma`.
pub fn composite_lyapunov(
    e_m: &DVector<f64>,
    e_aux: &DVector<f64>,
    theta_tilde: &DVector<f64>,
    theta_bar: &DVector<f64>,
    spec: &ControllerSpec,
) -> f64 {
    e_m.dot(&(&spec.p_m * e_m))
        + e_aux.dot(&(&spec.p_i * e_aux))
        + (theta_tilde.norm_squared() + theta_bar.norm_squared()) / spec.projection.gamma
}
