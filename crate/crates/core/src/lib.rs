//! Legal case analytics engine.
//!
//! The crate covers the full pipeline around pluggable model backends:
//! corpus ingestion and summarisation ([`corpus`]), exact cosine retrieval
//! ([`embedding`]), the precedent knowledge graph with primary-factor
//! attribution ([`graph`]), constrained splitting and prompt dataset
//! construction ([`dataset`]), text-completion backends ([`backend`]) and
//! the evaluation harness ([`eval`]). [`pipeline`] wires them together
//! through files so every step can be rerun from its manifest.

pub mod backend;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod eval;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod seed;
pub mod synthetic;

pub use corpus::{CaseId, ProcessedCase, RawCase, Verdict};
pub use embedding::{EmbeddingProvider, EmbeddingVector, HashedBowEmbedder, Neighbor, VectorIndex};
pub use graph::{FactorScores, KnowledgeGraph, PrimaryFactor};
