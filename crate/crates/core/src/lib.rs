//! Clinical-concept embedding CNN with cross-site transfer learning.
//!
//! Encounters are rows of labelled clinical concepts. Each (concept, label)
//! pair is looked up in an embedding table (one-hot or a dense semantic
//! table), giving a concepts x D matrix. A height-1 convolution scores every
//! row against each filter, max pooling keeps the strongest row per filter,
//! and a two-unit linear head produces the class logits.
//!
//! A model trained at one site is shared as a [`transfer::Checkpoint`] and
//! adapted at another by direct sharing, tuning the linear head only, or
//! tuning both layers.

pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod matrix;
pub mod network;
pub mod numfmt;
pub mod rng;
pub mod synth;
pub mod training;
pub mod transfer;
pub mod vocab;

pub use data::{DatasetSplit, EncounterRecord, Outcome};
pub use embedding::{encode_instance, EmbeddingTable, EncodedInstance};
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{auroc, EvalReport, ResultTable, Scenario};
pub use matrix::Matrix;
pub use network::{CnnModel, ForwardCache, Gradients, ParamCount};
pub use synth::SynthConfig;
pub use training::{FreezeMask, TrainConfig, TrainHistory};
pub use transfer::{Checkpoint, Provenance, TransferStrategy};
pub use vocab::Vocabulary;
