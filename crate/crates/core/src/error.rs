use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e} <= floor {floor:e})")]
    NotPositiveDefinite { eigenvalue: f64, floor: f64 },

    #[error("dictionary centers {first} and {second} are (near-)duplicates, distance {distance:e}")]
    DuplicateCenters {
        first: usize,
        second: usize,
        distance: f64,
    },

    #[error(
        "Gram matrix not positive definite (eigenvalue {eigenvalue:e}); closest centers {first} and {second} at distance {distance:e}"
    )]
    IllConditionedDictionary {
        eigenvalue: f64,
        first: usize,
        second: usize,
        distance: f64,
    },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("matrix is singular (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("size cap exceeded: {what} = {value} > {cap}")]
    SizeCap {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("recursion is not mean-square stable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("divergence: non-finite value after step {last_finite} (run {run:?})")]
    Diverged {
        last_finite: usize,
        run: Option<usize>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
