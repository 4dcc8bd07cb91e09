use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("requested pattern omits entry ({row}, {col}) of the factorized matrix")]
    PatternNotCovering { row: usize, col: usize },

    #[error("sparsity pattern differs from the analysed pattern")]
    PatternMismatch,

    #[error("invalid grid dimensions {rows}x{cols}")]
    InvalidDims { rows: usize, cols: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle {face} (area {area:e})")]
    DegenerateTriangle { face: usize, area: f64 },

    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),

    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),

    #[error("timecourse pool has {available} columns, {requested} requested")]
    PoolTooSmall { available: usize, requested: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(&'static str),

    #[error("group maps are rank deficient")]
    RankDeficientMaps,

    #[error("cannot whiten: eigenvalue {eigenvalue:e} of component {component} does not exceed noise level {noise:e}")]
    EigGap {
        component: usize,
        eigenvalue: f64,
        noise: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("second moment matrix is singular")]
    SingularSecondMoment,

    #[error("Monte Carlo standard error {std_error:.4} exceeds alpha/10 with {n_samples} samples")]
    InsufficientSamples { n_samples: usize, std_error: f64 },

    #[error("column {0} is constant")]
    ConstantColumn(usize),

    #[error("estimate is identically zero")]
    ZeroEstimate,

    #[error("no truth locations exceed the CAT threshold {0}")]
    EmptyTruthRegion(f64),

    #[error("map of length {len} does not fit dims {rows}x{cols}")]
    DimsMismatch { len: usize, rows: usize, cols: usize },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
