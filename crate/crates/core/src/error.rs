use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlamesError>;

#[derive(Debug, Error)]
pub enum FlamesError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-monotonic timestamp at line {line}")]
    NonMonotonic { line: usize },

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("temporal order violated: batch at t={next} precedes state time {last}")]
    TemporalOrder { last: f64, next: f64 },

    #[error("unstable kernel: eigenvalue with real part {max_real} >= 0")]
    Unstable { max_real: f64 },

    #[error("no Lyapunov solution: matrix is not Hurwitz (max real part {max_real})")]
    NotHurwitz { max_real: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FlamesError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        FlamesError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        FlamesError::Io {
            path: path.into(),
            source,
        }
    }
}
