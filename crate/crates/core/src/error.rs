use std::path::PathBuf;

use crate::kg::KgSide;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown entity `{raw_id}`")]
    DanglingReference {
        path: PathBuf,
        line: usize,
        raw_id: String,
    },
    #[error("name `{raw}` is empty after normalization")]
    EmptyName { raw: String },
    #[error("no embedding for entity `{raw_id}`")]
    MissingEntity { raw_id: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector for `{raw_id}` cannot be normalized")]
    ZeroVector { raw_id: String },
    #[error("degenerate norm {norm:e} while encoding entity {entity}")]
    DegenerateNorm { entity: usize, norm: f64 },
    #[error("vector norm {norm} deviates from 1 by more than {tolerance:e}")]
    NormViolation { norm: f64, tolerance: f64 },
    #[error("negative queue for {side} holds {have} of {need} batches")]
    QueueNotWarm {
        side: KgSide,
        have: usize,
        need: usize,
    },
    #[error("anchor has no negatives left after excluding itself")]
    EmptyNegatives,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error(
        "queue capacity violates (1+K)*N < min(|E_x|,|E_y|): (1+{k})*{n} = {product} >= min({ex}, {ey}) = {limit}"
    )]
    CapacityViolation {
        k: usize,
        n: usize,
        ex: usize,
        ey: usize,
        product: usize,
        limit: usize,
    },
    #[error("test pair source {source_id} was never queried")]
    MissingQuery { source_id: usize },
    #[error("relation mode needs relation embeddings")]
    MissingRelationEmbeddings,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
