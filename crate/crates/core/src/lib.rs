//! Discrete variational Transformer for long text generation.
//!
//! The crate is organized around the pipeline:
//!
//! 1. [`corpus`] — vocabulary, dataset loading, and a synthetic corpus
//!    generator with gold discourse annotations.
//! 2. [`discourse`] — dependency-pattern extraction of explicit discourse
//!    relations from CoNLL-U parses.
//! 3. [`latent`] — CNN temporal abstraction and the Gumbel-Softmax discrete
//!    bottleneck.
//! 4. [`generator`] — posterior/prompt encoders, the code-conditioned
//!    decoder, and the stage-1 losses.
//! 5. [`prior`] — autoregressive Transformer over the latent vocabulary.
//! 6. [`trainer`] — warm-start / fine-tune / prior training loops.
//! 7. [`inference`] — nucleus sampling and end-to-end story generation.
//! 8. [`metrics`] — BLEU, MS-Jaccard, Distinct, repetition, code
//!    utilization, and discourse-distribution statistics.

pub mod config;
pub mod corpus;
pub mod checkpoint;
pub mod discourse;
pub mod error;
pub mod generator;
pub mod inference;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod prior;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use config::{ModelConfig, SamplingConfig, Stage, TauSchedule, TrainConfig};
pub use error::{DvtError, Result};
