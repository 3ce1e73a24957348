use std::path::PathBuf;

/// Errors produced by table construction, noise release, synthesis and the
/// experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("variable `{variable}`: level {level} out of range (cardinality {cardinality})")]
    LevelOutOfRange {
        variable: String,
        level: usize,
        cardinality: usize,
    },

    #[error("record arity {found} does not match codebook with {expected} variables")]
    ArityMismatch { expected: usize, found: usize },

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("cross-tabulation has {cells} cells, above the ceiling of {ceiling}")]
    TooManyCells { cells: u128, ceiling: u128 },

    #[error("record falls in structural-zero cell {cell}")]
    RecordInStructuralZero { cell: usize },

    #[error("every cell is a structural zero")]
    AllStructuralZeros,

    #[error("invalid margin: {0}")]
    InvalidMargin(String),

    #[error("table mismatch: {0}")]
    TableMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The clamped noisy table has no positive mass, usually because epsilon
    /// is too small for the table.
    #[error("degenerate noisy table{}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    DegenerateTable { context: Option<String> },

    #[error("counts table holds non-integer value {value} in cell {cell}")]
    NonIntegerCount { cell: usize, value: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn degenerate(context: impl Into<String>) -> Self {
        Error::DegenerateTable {
            context: Some(context.into()),
        }
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 1 is a usage or configuration problem, 2 a data problem and 3 a
    /// synthesis that produced a degenerate noisy table.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::DegenerateTable { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
