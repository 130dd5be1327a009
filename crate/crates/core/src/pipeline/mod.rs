//! Training, prediction and checkpoints.
//!
//! [`train`] turns PubTator documents, a lexicon and (optionally)
//! pre-trained word vectors into a [`Checkpoint`] holding the parameters
//! from the epoch with the best development F1. [`Model::annotate`] tags
//! new documents. The [`AblationFlags`] in [`ModelConfig`] switch the
//! dictionary bits, pre-trained vectors, CRF decoding and character model
//! on and off.

mod checkpoint;
mod config;
mod data;
mod model;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{AblationFlags, ModelConfig};
pub use data::{disease_only, examples, sentences, Example, ENTITY_TYPE, EXCLUDED_TYPES};
pub use model::{transition_mask, Model, WordVocab};
pub use train::{evaluate_model, score_documents, train, train_model, EpochSummary, TrainOutcome};
