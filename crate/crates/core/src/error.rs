use thiserror::Error;

use crate::sim::Trace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hurwitz (largest eigenvalue real part {max_real:e})")]
    NotHurwitz { max_real: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Lyapunov solve failed: {0}")]
    SolveFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("projection gradient vanished on the active branch")]
    DegenerateGradient,

    #[error("required signal `{0}` is missing")]
    SignalOutOfRange(&'static str),

    #[error("simulation diverged at t = {t}")]
    NonFinite { t: f64, partial: Box<Trace> },

    #[error("Delta(ell) = {delta} >= 1: observer-feedback guarantees do not apply")]
    DeltaTooLarge { delta: f64 },

    #[error("ell = {ell} is below the time-scale threshold ell* = {ell_star}")]
    TimescaleViolation { ell: f64, ell_star: f64 },

    #[error("m1 denominator sigma + 2 ell - sigma m^2 = {denominator} is not positive")]
    SingularM1 { denominator: f64 },

    #[error("unknown signal `{0}`")]
    UnknownSignal(String),

    #[error("trace has no open-loop reference model shadow")]
    MissingShadow,
}
