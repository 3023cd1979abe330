//! Retrieval primitives over pre-computed embeddings: exact and approximate
//! dense indexes, late-interaction scoring, learned sparse impact indexes and
//! the ranking-loss arithmetic used to train the encoders that feed them.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the common double-precision instantiations.

pub mod error;
pub mod formats;
pub mod harness;
pub mod index;
pub mod kernels;
pub mod late_interaction;
pub mod learning;
pub mod mips;
pub mod scalar;
pub mod sparse;
pub mod topk;
pub mod types;

pub use error::{Error, ErrorClass, Result};
pub use index::{AnyIndex, IndexArtifact, Metric, SearchOutcome, VectorIndex};
pub use mips::MipTransform;
pub use scalar::Real;
pub use types::{DenseVector, EmbeddingSet, MultiEmbedding, ScoredHit, SparseDoc, SparseVector};

pub type Vector = DenseVector<f64>;
pub type Embeddings = EmbeddingSet<f64>;
pub type MultiVector = MultiEmbedding<f64>;
pub type Artifact = IndexArtifact<f64>;

pub type Vector32 = DenseVector<f32>;
pub type Embeddings32 = EmbeddingSet<f32>;
pub type MultiVector32 = MultiEmbedding<f32>;
pub type Artifact32 = IndexArtifact<f32>;
