//! Outcome-aware tool selection for LLM routing gateways.
//!
//! The serving path is plain dense retrieval: embed the query, score every
//! tool vector, return the top `K`. Everything that learns from logged
//! outcomes happens offline and publishes a new embedding table (or a small
//! model) that the serving path picks up through an atomic generation swap:
//!
//! * [`refine`] moves tool vectors toward the queries they succeeded on and
//!   away from the ones they were wrongly retrieved for, behind a held-out
//!   recall gate.
//! * [`rerank`] is a `[7, 64, 32, 1]` MLP over candidate features.
//! * [`adapter`] is a residual `[d, 256, d]` projection head trained with
//!   InfoNCE on mined hard negatives.
//!
//! [`eval`] runs the metric protocol and latency benchmarks, [`serve`]
//! composes the stages into a selector, an HTTP endpoint and the CLI.

pub mod adapter;
pub mod embed;
pub mod error;
pub mod eval;
mod nn;
pub mod pipeline;
pub mod refine;
pub mod rerank;
pub mod retrieval;
pub mod scenario;
pub mod serve;
pub mod store;
pub mod text;
pub mod vector;

pub use error::{Error, Result};
pub use retrieval::CandidateList;
pub use store::{Corpus, EmbeddingTable, OutcomeTriple, QueryRecord, ToolRecord};
