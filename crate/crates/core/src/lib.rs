//! Segmental sequence labeling with recurrent segment embeddings.
//!
//! The engine scores contiguous spans of an input sequence with a neural
//! clique potential over bidirectional segment encodings, ties the spans
//! together in a semi-Markov CRF with exact log-space dynamic programming,
//! and trains by fully or partially supervised maximum likelihood through a
//! per-instance reverse-mode tape. BIO tagging and CTC baselines share the
//! same encoder front end, and everything is verifiable against brute-force
//! enumeration and finite differences.

pub mod baselines;
pub mod cli;
pub mod data_eval;
pub mod diffgraph;
pub mod encoder;
pub mod error;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod segcrf;
pub mod segment_embed;
pub mod storage;
pub mod training;

pub use error::{Error, Result};
