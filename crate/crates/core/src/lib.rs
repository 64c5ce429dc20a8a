//! Multimodal meme classification on precomputed embeddings.
//!
//! The crate implements a small, fully trainable stack: a reverse-mode
//! autodiff engine over dense `f64` matrices ([`autodiff`]), embedding-file
//! IO and a synthetic corpus generator ([`dataio`]), three text/image fusion
//! mechanisms ([`fusion`]), inter-meme graph reasoning over the records of a
//! batch ([`imgr`]), model assembly and checkpointing ([`model`]), an AdamW
//! training loop with linear learning-rate decay ([`train`]), evaluation
//! metrics with a paired bootstrap test ([`metrics`]), and the diagnostic
//! analyses used to probe what the graph layer learns ([`analysis`]).
//!
//! Everything is deterministic: given the same inputs and seeds, every
//! entry point produces bit-identical outputs on a given platform.

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod fusion;
pub mod imgr;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{MwError, Result};
