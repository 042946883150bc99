//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A timestamp or index falls outside the coverage of a time grid.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Lookup hit a cell that is masked as unobserved.
    #[error("missing value at segment {row}, interval {interval}")]
    MissingValue { row: usize, interval: usize },

    /// A segment has neither a temporal anchor nor adjacent observed data.
    #[error("segment {0} is isolated: no observed data to impute from")]
    IsolatedSegment(usize),

    /// The iterative eigensolver did not reach tolerance within its budget.
    #[error("eigensolver failed to converge: off-diagonal norm {off:.3e} after {sweeps} sweeps")]
    ConvergenceFailure { off: f64, sweeps: usize },

    /// A tail eigenvalue is non-positive, so the MDL criterion is undefined.
    #[error("degenerate spectrum: eigenvalue {index} is {value:.3e}")]
    DegenerateSpectrum { index: usize, value: f64 },

    /// The input series is shorter than one analysis segment.
    #[error("series too short: {len} samples, need at least {need}")]
    SeriesTooShort { len: usize, need: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A cyclic predictor was queried for an interval it has never seen,
    /// or a lag predictor for a time before its data begins.
    #[error("cold start: {0}")]
    ColdStart(String),

    #[error("no path from vertex {from} to vertex {to}")]
    Unreachable { from: usize, to: usize },

    /// A route's realized travel extends past the end of the time grid.
    #[error("horizon exceeded: needed weights at t={t} beyond grid end {end}")]
    HorizonExceeded { t: f64, end: f64 },

    /// The re-routing loop committed more edges than the cycle guard allows.
    #[error("cycle guard tripped after {committed} committed edges (limit {limit})")]
    CycleGuard { committed: usize, limit: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Test-set construction filtered out every candidate query.
    #[error("no eligible OD pairs survived the filters")]
    NoEligiblePairs,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
