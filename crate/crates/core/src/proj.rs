//! Gamma-projection operator and the convex boundary function that confines
//! the adaptive parameters.
//!
//! The boundary is `f(theta) = (|theta|^2 - vartheta^2) / (2 eps vartheta - eps^2)`,
//! so `f <= 0` is the ball of radius `vartheta` and `f <= 1` the slightly larger
//! ball the parameters are guaranteed to stay in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary and gain parameters of the projected update laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Known bound on the ideal parameter norm.
    pub vartheta: f64,
    /// Width of the boundary layer.
    pub epsilon: f64,
    /// Adaptation gain, `Gamma = gamma I`.
    pub gamma: f64,
    /// Coupling gain between direct and indirect estimates.
    pub eta: f64,
}

impl ProjectionConfig {
    pub fn new(vartheta: f64, epsilon: f64, gamma: f64, eta: f64) -> Result<Self> {
        let cfg = Self {
            vartheta,
            epsilon,
            gamma,
            eta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vartheta > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "vartheta and epsilon must be positive (vartheta={}, epsilon={})",
                self.vartheta, self.epsilon
            )));
        }
        if !(self.denominator() > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be below 2 vartheta (vartheta={}, epsilon={})",
                self.vartheta, self.epsilon
            )));
        }
        if !(self.gamma > 0.0) || !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive and eta non-negative (gamma={}, eta={})",
                self.gamma, self.eta
            )));
        }
        Ok(())
    }

    fn denominator(&self) -> f64 {
        2.0 * self.epsilon * self.vartheta - self.epsilon * self.epsilon
    }

    pub fn theta_max(&self) -> f64 {
        self.vartheta + self.epsilon
    }

    pub fn theta_tilde_max(&self) -> f64 {
        2.0 * self.vartheta + self.epsilon
    }

    /// Euclidean radius of the set `f <= 1`.
    pub fn boundary_radius(&self) -> f64 {
        (self.vartheta * self.vartheta + self.denominator()).sqrt()
    }

    pub fn f(&self, theta: &DVector<f64>) -> f64 {
        (theta.norm_squared() - self.vartheta * self.vartheta) / self.denominator()
    }

    pub fn grad_f(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta * (2.0 / self.denominator())
    }
}

/// Evaluates `f`, rejecting configurations with a non-positive denominator.
pub fn f_eval(theta: &DVector<f64>, cfg: &ProjectionConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.f(theta))
}

pub fn grad_f(theta: &DVector<f64>, cfg: &ProjectionConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    Ok(cfg.grad_f(theta))
}

/// Projection operator for a general symmetric positive definite gain.
///
/// The active branch requires both `f > 0` and `y^T Gamma grad f > 0`
/// strictly; ties fall through to `Gamma y`.
pub fn project_general(
    gamma: &DMatrix<f64>,
    y: &DVector<f64>,
    f_value: f64,
    grad: &DVector<f64>,
) -> Result<DVector<f64>> {
    let gy = gamma * y;
    if f_value > 0.0 && grad.dot(&gy) > 0.0 {
        let g_grad = gamma * grad;
        let denom = grad.dot(&g_grad);
        if !(denom > 0.0) {
            return Err(Error::DegenerateGradient);
        }
        // Gamma grad grad^T Gamma y f / (grad^T Gamma grad)
        let scale = grad.dot(&gy) * f_value / denom;
        Ok(gy - g_grad * scale)
    } else {
        Ok(gy)
    }
}

/// `Proj_Gamma(theta, y, f)` with `Gamma = gamma I`.
pub fn project(
    theta: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &ProjectionConfig,
) -> Result<DVector<f64>> {
    if theta.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries, y has {}",
            theta.len(),
            y.len()
        )));
    }
    let f_value = cfg.f(theta);
    let gy = y * cfg.gamma;
    if f_value > 0.0 {
        let grad = cfg.grad_f(theta);
        let drive = grad.dot(&gy);
        if drive > 0.0 {
            let gg = grad.norm_squared();
            if !(gg > 0.0) {
                return Err(Error::DegenerateGradient);
            }
            return Ok(&gy - &grad * (drive * f_value / gg));
        }
    }
    Ok(gy)
}

/// Directions of the coupled direct/indirect projected laws:
/// `Proj(theta, y1) - eta (theta - theta_hat)` and
/// `Proj(theta_hat, y2) + eta (theta - theta_hat)`.
pub fn coupled_update_direction(
    theta: &DVector<f64>,
    theta_hat: &DVector<f64>,
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    cfg: &ProjectionConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if theta.len() != theta_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries, theta_hat has {}",
            theta.len(),
            theta_hat.len()
        )));
    }
    let coupling = (theta - theta_hat) * cfg.eta;
    let d_theta = project(theta, y1, cfg)? - &coupling;
    let d_theta_hat = project(theta_hat, y2, cfg)? + coupling;
    Ok((d_theta, d_theta_hat))
}

/// Radially rescales `theta` back onto `f = 1` if an integration step left it
/// outside. Returns whether a correction was applied.
pub fn repair(theta: &mut DVector<f64>, cfg: &ProjectionConfig) -> bool {
    if cfg.f(theta) <= 1.0 {
        return false;
    }
    let radius = cfg.boundary_radius();
    let norm = theta.norm();
    *theta *= radius / norm;
    true
}
