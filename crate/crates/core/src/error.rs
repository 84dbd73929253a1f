use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("element {element}: non-positive jacobian {det:e}")]
    Jacobian { element: usize, det: f64 },
    #[error("interface projection failed at segment {segment}: {reason}")]
    Projection { segment: usize, reason: String },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("newton did not converge after {iterations} iterations (residual {residual:e})")]
    Newton { iterations: usize, residual: f64 },
    #[error("staggered scheme did not converge after {0} sweeps")]
    Stagger(usize),
    #[error("global-local iteration did not converge after {iterations} iterations: {trace}")]
    GlobalLocal { iterations: usize, trace: String },
    #[error("corrector cycles exceeded ({0})")]
    Corrector(usize),
    #[error("config: {0}")]
    Config(String),
    #[error("compare: {0}")]
    Compare(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
