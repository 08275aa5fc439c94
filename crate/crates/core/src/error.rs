use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    /// A triangular splitting matrix has a zero on its diagonal.
    #[error("singular splitting: zero diagonal entry at row {row}")]
    SingularSplitting { row: usize },

    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("operator {kind} is not supported in {dim} dimensions")]
    UnsupportedOperator { kind: String, dim: usize },

    #[error("grids are not nested: fine n={fine}, coarse n={coarse}")]
    GridsNotNested { fine: usize, coarse: usize },

    #[error("cannot build {levels} coarse levels below a grid with {cells} cells per side")]
    InvalidRefinement { cells: usize, levels: usize },

    #[error("observation {index} covers no grid vertex (radius {radius} too small for h={h})")]
    ResolutionTooCoarse { index: usize, radius: f64, h: f64 },

    #[error("observation system is singular")]
    IllPosedObservations,

    /// M + Mᵀ − A is not positive definite, so the smoother noise cannot be drawn.
    #[error("invalid splitting: M + M^T - A is not positive definite")]
    InvalidSplitting,

    #[error("missing low-rank precompute for level {level}")]
    MissingPrecompute { level: usize },

    #[error("dense size {n} exceeds the oracle cap {cap}")]
    OracleCapExceeded { n: usize, cap: usize },

    #[error("iteration diverges: spectral radius {radius} >= 1")]
    Divergent { radius: f64 },

    #[error("integrated autocorrelation time cannot be reliably estimated from {len} samples")]
    UnreliableIact { len: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("convergence ratio undefined: initial deviation is zero")]
    RateUndefined,

    #[error("lag {lag} out of range for series of length {len}")]
    LagOutOfRange { lag: usize, len: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { op, expected, got })
    }
}
