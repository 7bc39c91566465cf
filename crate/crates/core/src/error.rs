use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("optimization diverged at iteration {iter}: {detail}")]
    Optimization { iter: usize, detail: String },

    #[error("training diverged at iteration {iter}: {detail}")]
    Training { iter: usize, detail: String },

    #[error("render failure: {0}")]
    Render(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl LabError {
    /// Whether the failure is a rejected input (as opposed to a failure during compute).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LabError::Range(_) | LabError::Shape(_) | LabError::Validation(_) | LabError::Json { .. }
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        LabError::Json {
            context: context.into(),
            source,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(LabError::Shape(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}
