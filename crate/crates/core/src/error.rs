use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error{}: token {token} (column {column}) `{text}` is not a unit id", line_suffix(*.line))]
    Parse {
        line: Option<usize>,
        token: usize,
        column: usize,
        text: String,
    },

    #[error("unit {unit} is outside the vocabulary of size {vocab_size}")]
    Vocabulary { unit: u32, vocab_size: u32 },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("degenerate batch: every position is masked out")]
    DegenerateBatch,

    #[error("sequence of length {len} at offset {offset} exceeds max_positions {max}")]
    Length { len: usize, offset: usize, max: usize },

    #[error("prompt length {prompt_len} exceeds the {rows} rows it replaces")]
    PromptLength { prompt_len: usize, rows: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("prompt/backbone mismatch: {0}")]
    Mismatch(String),

    #[error("corpus split failed: {0}")]
    Split(String),

    #[error("alignment error: {hypotheses} hypotheses for {references} references")]
    Alignment {
        hypotheses: usize,
        references: usize,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}: {reason}")]
    Path { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn line_suffix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" on line {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 for validation problems detected
    /// before or outside of numerical work, 2 for runtime and training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. }
            | Error::Io { .. }
            | Error::Checkpoint { .. }
            | Error::DegenerateBatch => 2,
            _ => 1,
        }
    }
}
