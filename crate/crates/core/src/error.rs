use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("obstacle violates the separation margin: {margin} cell layer(s), need at least {required}")]
    SeparationViolation { margin: usize, required: usize },

    #[error("fluid part of the unit cell is not connected ({components} components)")]
    ConnectivityViolation { components: usize },

    #[error("incompatible data: {0}")]
    IncompatibleData(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("box is empty after snapping to the grid")]
    EmptyBox,

    #[error("box [{lo:?}, {hi:?}] leaves the grid")]
    BoxOutsideGrid { lo: [f64; 3], hi: [f64; 3] },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
