//! Self-supervised entity alignment between two knowledge graphs.
//!
//! Entities carry precomputed unit vectors in a shared space. A one-layer
//! attention encoder over one-hop neighborhoods is trained without labels by
//! pushing each entity away from negatives drawn from its own graph, with a
//! momentum-updated copy filling per-graph negative queues. Alignment is read
//! off by exact ℓ2 nearest neighbors.

pub(crate) mod binio;
pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod kg;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod queue;
pub mod synth;
pub mod theory;
pub mod trainer;

pub use dataset::{Dataset, LoadOptions};
pub use embedding::EmbeddingStore;
pub use encoder::{EncoderPair, EncoderParams, GraphView};
pub use error::{Error, Result};
pub use eval::{Candidates, Direction, EvalOptions, EvalReport};
pub use kg::{AlignmentLinkSet, EntityId, KgSide, KnowledgeGraph, RelationId, Split};
pub use linalg::Matrix;
pub use loss::{LossConfig, NegativeSampling};
pub use queue::NegativeQueue;
pub use theory::{OracleConfig, OracleReport};
pub use trainer::{DevProbe, MetricRow, TrainConfig, TrainState, Trainer};
