use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("state is not normalized: norm = {norm}")]
    NotNormalized { norm: f64 },

    #[error("grid too coarse: {points} points, need at least {min}")]
    GridTooCoarse { points: usize, min: usize },

    #[error("quadrature did not converge: estimate {value}, error {abs_err}")]
    QuadratureFailed { value: f64, abs_err: f64 },

    #[error("kernel is not symmetric: max asymmetry {asymmetry}")]
    NotSymmetric { asymmetry: f64 },

    #[error("kernel is not positive semidefinite: min eigenvalue {min_eig}, max {max_eig}")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("time step {dt} violates the stepper bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("norm drifted by {drift} in one step at t = {t}")]
    NormDrift { drift: f64, t: f64 },

    #[error("non-finite value at t = {t}")]
    NonFinite { t: f64 },

    #[error("{failed} of {total} trajectories failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("trace drifted by {drift} at t = {t}")]
    TraceDrift { drift: f64, t: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam { name, reason: reason.into() }
}
