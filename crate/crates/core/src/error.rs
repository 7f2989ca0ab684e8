use std::fmt;

use thiserror::Error;

/// A problem with one row of an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("input validation failed with {} row error(s):\n{}", .0.len(), format_rows(.0))]
    Rows(Vec<RowError>),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure in {matrix}: {detail}")]
    Numerical { matrix: String, detail: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("training aborted at iteration {iteration}: {reason}")]
    Training {
        iteration: usize,
        reason: String,
        trace: Vec<f64>,
    },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_rows(rows: &[RowError]) -> String {
    rows.iter()
        .map(|r| format!("  {r}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn numerical(matrix: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            matrix: matrix.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
