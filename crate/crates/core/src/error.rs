//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameter or precondition violation.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// The integrator produced a non-finite value or an out-of-range Bloch
    /// component. Clamping would silently corrupt the physics, so the run is
    /// aborted instead.
    #[error(
        "numerical instability at step {step} (t = {t:.6e} s): {detail}; \
         rerun with a smaller dt"
    )]
    Instability { step: usize, t: f64, detail: String },

    /// The closed-form echo expression degenerates at the branch point
    /// zeta^2 = 0; perturb kappa, Gamma_L or g_eff^2 N to move away from it.
    #[error("branch point zeta = 0: closed form degenerates; perturb parameters")]
    BranchPoint,

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: achieved error estimate {estimate:.3e}")]
    QuadratureNonConvergence { estimate: f64 },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed data: {0}")]
    Parse(String),
}
