use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure categories; each maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("basis dimension {dim} exceeds cap {cap}")]
    Capacity { dim: u128, cap: u128 },
    #[error("site index {site} out of range for {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular factorization at shift {re}{im:+}i")]
    Singular { re: f64, im: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("eigensolver failure: {0}")]
    Solver(String),
    #[error("no spectral gap: largest spacing {gap:e} below {required:e}")]
    NoGap { gap: f64, required: f64 },
    #[error("reference energy within {distance:e} of the spectrum")]
    NearSpectrum { distance: f64 },
    #[error("phase aliasing persists at {n_phi} twist points")]
    Aliasing { n_phi: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 2 config/input, 3 solver, 4 capacity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity { .. } => 4,
            Error::Singular { .. }
            | Error::NoConvergence { .. }
            | Error::Solver(_)
            | Error::NoGap { .. }
            | Error::NearSpectrum { .. }
            | Error::Aliasing { .. } => 3,
            Error::Io(_) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Lattice(_) => "lattice",
            Error::Param(_) => "param",
            Error::Config(_) => "config",
            Error::Capacity { .. } => "capacity",
            Error::SiteOutOfRange { .. } => "site_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Singular { .. } => "singular",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Solver(_) => "solver",
            Error::NoGap { .. } => "no_gap",
            Error::NearSpectrum { .. } => "near_spectrum",
            Error::Aliasing { .. } => "aliasing",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
