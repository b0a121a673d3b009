use thiserror::Error;

/// Errors raised by the spectral computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("matrix is not Hermitian (asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e})")]
    NonHermitian { asymmetry: f64, tolerance: f64 },
    #[error("boundary condition invariant violated: {0}")]
    InvalidBoundaryCondition(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grid point {x} lies outside the potential domain ({lo}, {hi})")]
    GridOutsideDomain { x: f64, lo: f64, hi: f64 },
    #[error("grid must contain the initial point {x0}")]
    GridMissingInitialPoint { x0: f64 },
    #[error("step size underflow at x = {x} (h = {h:.3e})")]
    StepSizeUnderflow { x: f64, h: f64 },
    #[error("solutions are sampled on different grids")]
    GridMismatch,
    #[error("boundary normalization is numerically singular at z = {re}+{im}i (condition {condition:.3e})")]
    SingularNormalization { re: f64, im: f64, condition: f64 },
    #[error("truncation did not converge up to b = {b_max} (last gap {gap:.3e})")]
    TruncationNotConverged { b_max: f64, gap: f64 },
    #[error("linear fractional pencil A + B m is numerically singular (condition {condition:.3e})")]
    SingularPencil { condition: f64 },
    #[error("Wronskian m_- - m_+ is numerically singular (condition {condition:.3e})")]
    SingularW { condition: f64 },
    #[error("shifted discrete operator is singular")]
    SingularShift,
    #[error("function is not Herglotz: Im M has eigenvalue {min_eigenvalue:.3e} at {re}+{im}i")]
    NotHerglotz { min_eigenvalue: f64, re: f64, im: f64 },
    #[error("kernel of Im M differs between sample points ({0})")]
    KernelMismatch(String),
    #[error("partitions are not compatible")]
    PartitionMismatch,
    #[error("Im z must be nonzero")]
    RealSpectralParameter,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, SpectralError>;
