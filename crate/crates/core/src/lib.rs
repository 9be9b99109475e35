//! Memory-augmented dialogue management.
//!
//! A GRU controller reads a per-slot value memory and a small external
//! memory each turn, writes both back, and three classifier heads predict
//! the next system dialogue act: its type, which slots it carries, and the
//! value of each carried slot.

pub mod data;
pub mod eval;
pub mod model;
pub mod serve;
pub mod sweep;
pub mod tensor;
pub mod train;

use tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ontology: {0}")]
    Ontology(String),
    #[error("ontology hash mismatch: expected {expected}, found {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("corpus line {line}, field {field}: {message}")]
    Corpus {
        line: usize,
        field: String,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ontology(_) => "ontology",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Corpus { .. } => "corpus",
            Error::Config(_) => "config",
            Error::ModelFile(_) => "model_file",
            Error::Data(_) => "data",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::Tensor(_) => "tensor",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
