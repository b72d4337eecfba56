use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("width factor {k} outside [{min}, {max}] for family {family}")]
    WidthOutOfRange {
        family: String,
        k: u64,
        min: u64,
        max: u64,
    },

    #[error("budget of {target} parameters is below the smallest {family} network ({min} parameters)")]
    BudgetTooSmall { family: String, target: u64, min: u64 },

    #[error("no feasible ensemble size for a budget of {budget} parameters")]
    NoFeasibleSplit { budget: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch for {what}: got {got}, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("corrupt record at {}:{line}: {msg}", path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("all {} objective evaluations failed: {}", .0.len(), .0.join("; "))]
    AllEvaluationsFailed(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Corrupt { .. } => 3,
            Error::Diverged { .. } => 4,
            _ => 2,
        }
    }
}
