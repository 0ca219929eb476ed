use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("degenerate representation {what}: row {row} has norm {norm:e} below {eps:e}")]
    DegenerateRow {
        what: String,
        row: usize,
        norm: f64,
        eps: f64,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("empty evaluation: {0}")]
    EmptyEvaluation(String),

    #[error("line {line}: parse error: {detail}")]
    Parse { line: usize, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Names the representation in a degenerate-row error.
    pub(crate) fn in_rep(self, what: impl Into<String>) -> Self {
        match self {
            Error::DegenerateRow { row, norm, eps, .. } => Error::DegenerateRow {
                what: what.into(),
                row,
                norm,
                eps,
            },
            e => e,
        }
    }

    /// True for errors raised by a numerical failure during forward/backward.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::DegenerateRow { .. } | Error::Domain { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                detail: e.to_string(),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
