use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("plane vectors are not orthonormal (residual {residual:e})")]
    NotOrthonormal { residual: f64 },

    #[error("matrix is not in SO(d): {0}")]
    NotRotation(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("column {column} has norm {norm}, expected {expected}")]
    ColumnNorm {
        column: usize,
        norm: f64,
        expected: f64,
    },

    #[error("input point cloud is identically zero")]
    ZeroInput,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error at `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("trial {index}: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_trial(self, index: usize) -> Error {
        match self {
            e @ Error::Trial { .. } => e,
            e => Error::Trial {
                index,
                source: Box::new(e),
            },
        }
    }
}
