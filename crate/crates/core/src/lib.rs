//! Attention fusion network for classifying inquiries from tabular signals and
//! free text.
//!
//! Two MLP branches encode numerical and one-hot categorical features; a
//! bidirectional LSTM with feed-forward attention encodes the text. The three
//! outputs are concatenated (numerical, categorical, text) and fed to a
//! softmax head. Everything is implemented from scratch on `f64` with
//! hand-written backward passes.

pub mod cli;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod nn;
pub mod numcore;
pub mod textprep;
pub mod train;
pub mod workflow;

pub use data::{EncodedExample, Example, CLASS_NAMES, NUM_CLASSES};
pub use embed::{EmbeddedSequence, EmbeddingTable};
pub use error::{Error, Result};
pub use eval::{topk_accuracy, topk_recall, EvalReport};
pub use fusion::{FusionModel, ModelConfig, ModelInput, Variant};
pub use numcore::{Rng, Tensor1D, Tensor2D};
pub use train::{train, TrainConfig, TrainReport};
