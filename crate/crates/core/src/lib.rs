//! Dictionary-augmented BiLSTM-CRF named-entity recognition.
//!
//! The crate covers the whole path from a PubTator corpus to entity-level
//! scores: corpus parsing and tokenization ([`corpus`]), segment
//! representation schemes ([`tagging`]), gazetteer features ([`lexicon`]),
//! word and character tables ([`embeddings`]), a small reverse-mode
//! autodiff engine ([`autodiff`]), the BiLSTM encoder ([`encoder`]), the
//! linear-chain CRF ([`crf`]), training and prediction ([`pipeline`]) and
//! evaluation ([`evaluate`]).
//!
//! The numeric core (tensors, graphs, LSTM and CRF math) is generic over
//! [`Scalar`]; the aliases below pin it to `f64`, which is what training and
//! checkpoints use.

#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod fixture;
pub mod gradcheck;
pub mod lexicon;
pub mod pipeline;
pub mod scalar;
pub mod tagging;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense tensor at training precision.
pub type Tensor = autodiff::Tensor<f64>;
/// Computation graph at training precision.
pub type Graph<'p> = autodiff::Graph<'p, f64>;
/// Parameter store at training precision.
pub type ParamStore = autodiff::ParamStore<f64>;
/// Emission scores at training precision.
pub type ScoreMatrix = crf::ScoreMatrix<f64>;
/// Transition scores at training precision.
pub type TransitionMatrix = crf::TransitionMatrix<f64>;
/// Word look-up table at training precision.
pub type EmbeddingTable = embeddings::EmbeddingTable<f64>;
