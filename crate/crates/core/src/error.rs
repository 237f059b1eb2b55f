use thiserror::Error;

/// Errors produced anywhere in the fitting, selection, and data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of bounds: variable {variable} has value {value} at row {row}, cardinality is {cardinality}")]
    IndexBounds {
        variable: usize,
        row: usize,
        value: usize,
        cardinality: usize,
    },

    #[error("capacity exceeded in {context}: {required} > cap {cap}; use Monte-Carlo evaluation or a smaller instance")]
    Capacity {
        context: String,
        required: u128,
        cap: u128,
    },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("fit failed in fold {fold} (rank {rank}): {source}")]
    FoldFit {
        fold: usize,
        rank: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("selection failed: {0}")]
    Selection(String),

    #[error("experiment failed in run {run}: {source}")]
    Experiment {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short stable name of the variant, for structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::IndexBounds { .. } => "index-bounds",
            Error::Capacity { .. } => "capacity",
            Error::Numerical { .. } => "numerical",
            Error::FoldFit { .. } => "fold-fit",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Selection(_) => "selection",
            Error::Experiment { .. } => "experiment",
            Error::InvalidModel(_) => "invalid-model",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// The innermost error, looking through fold and run wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::FoldFit { source, .. } | Error::Experiment { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
