use thiserror::Error;

use crate::mesh::ElementId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh size {0} is not a dyadic fraction 2^-k of the unit length")]
    NonDyadic(f64),

    #[error("fine mesh size h = {h} does not resolve the finest level H_L = {coarse}")]
    FineMeshTooCoarse { h: f64, coarse: f64 },

    #[error("level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("hole [{lo:?}, {hi:?}] is not a union of level-1 elements")]
    HoleNotAligned { lo: [f64; 2], hi: [f64; 2] },

    #[error("element {0:?} lies outside the level grid")]
    OutOfGrid(ElementId),

    #[error("element {0:?} is not active")]
    InactiveElement(ElementId),

    #[error("bubble on level {level} is not resolvable: h = {h} must be at most H/2 = {half}")]
    UnresolvableBubble { level: usize, h: f64, half: f64 },

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("saddle point for {element:?} (m = {oversampling}) is singular (kappa^2 h = {kappa2h:.3e}): {reason}")]
    SingularSaddlePoint {
        element: ElementId,
        oversampling: String,
        kappa2h: f64,
        reason: String,
    },

    #[error("direct solve residual {residual:.3e} exceeds {tolerance:.1e}")]
    InaccurateSolve { residual: f64, tolerance: f64 },

    #[error("decay fit is degenerate: only {0} non-zero annuli")]
    DegenerateFit(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
