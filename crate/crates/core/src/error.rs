//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong when building or evaluating lab objects.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A grid specification violates one of its invariants.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    /// A coordinate cannot be placed exactly on the fixed-point dyadic lattice.
    #[error("coordinate {0} is not representable on the dyadic lattice")]
    Unrepresentable(f64),
    /// A cube at the bottom of the level window was asked for its children.
    #[error("cube at level {0} has no children inside the level window")]
    LevelUnderflow(i32),
    /// A measure violates one of its invariants.
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    /// The fractional order is outside `[0, n)`.
    #[error("alpha = {alpha} is outside [0, {n})")]
    AlphaOutOfRange {
        /// Offending order.
        alpha: f64,
        /// Ambient dimension.
        n: usize,
    },
    /// The goodness exponent is too large for the fractional order.
    #[error("eps * (n + 1 - alpha) = {0} must be below 1")]
    GoodnessExponent(f64),
    /// A kernel was evaluated at coincident points.
    #[error("kernel is singular at coincident points")]
    Singular,
    /// The two measures share an atom.
    #[error("the measures share a point mass at {0:?}")]
    CommonPointMass(Vec<f64>),
    /// Kernel family, dimension and order are incompatible.
    #[error("incompatible kernel: {0}")]
    Kernel(String),
    /// An operation needs a cube of positive mass.
    #[error("cube has zero mass")]
    ZeroMass,
    /// Power iteration did not reach the requested tolerance.
    #[error("power iteration did not converge; last Rayleigh quotient {0}")]
    NoConvergence(f64),
    /// A pair collection is not admissible.
    #[error("pair collection is not admissible: {0}")]
    Inadmissible(String),
    /// A family that must be pairwise disjoint is not.
    #[error("cubes in the subpartition overlap")]
    Overlap,
    /// An operation is only defined in one dimension.
    #[error("operation requires n = 1, got n = {0}")]
    Dimension(usize),
    /// A supremum over an empty family of cubes was requested.
    #[error("empty cube enumeration")]
    EmptyEnumeration,
    /// Generic invalid argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A calibration constant the suite depends on is absent.
    #[error("calibration table has no entry for {0}")]
    MissingCalibration(String),
    /// JSON encoding or decoding failed.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    /// File system failure, with the offending path.
    #[error("{path}: {source}")]
    Io {
        /// Path that failed.
        path: PathBuf,
        /// Underlying error.
        source: std::io::Error,
    },
}
