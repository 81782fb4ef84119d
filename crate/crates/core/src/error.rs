use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),

    #[error("orientation too close to the sin(beta)=0 singularity (beta = {beta:.6e} rad)")]
    SingularOrientation { beta: f64 },

    #[error("correlation matrix is indefinite: eigenvalue {eigenvalue:.6e} below tolerance {tolerance:.6e}")]
    IndefiniteCorrelation { eigenvalue: f64, tolerance: f64 },

    #[error("operation requires an isotropic particle: {0}")]
    AnisotropicParticle(String),

    #[error("non-finite state encountered at t = {time:.6e} s ({detail})")]
    NonFiniteState { time: f64, detail: String },

    #[error("peak fit failed: {0}")]
    FitFailure(String),

    #[error("malformed trace: {0}")]
    TraceFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
