//! Workbench for contrasting vanilla and adversarial (PGD) fine-tuning of a
//! small transformer encoder.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense row-major matrices used everywhere.
//! - [`model`]: post-norm encoder with MLM and classification heads, analytic
//!   gradients for parameters and input embeddings, and a layer-substitution
//!   hook.
//! - [`train`]: Adam with linear decay, PGD attack, fine-tuning and MLM
//!   pretraining loops, checkpoint selection.
//! - [`data`]: vocabulary, tokenization, CoNLL-U / TSV / JSON-lines loaders,
//!   synthetic grammar and word-order shuffling.
//! - [`probes_free`] and [`probes_param`]: parameter-free and trainable probes.
//! - [`graphalg`]: maximum arborescence, tree metrics, Laplacian spectra and
//!   the max-cut bound.
//! - [`intrinsic`]: SVD substitution, influence graphs, dependency extraction
//!   and spectral profiles wired to the model.
//! - [`experiment`]: the end-to-end VAN vs ADV pipeline for one seed.
//!
//! Per-example work runs on rayon when the `parallel` feature is enabled (the
//! default) and sequentially otherwise; results are always reduced in example
//! order so both paths produce bit-identical numbers.

pub mod csvout;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod graphalg;
pub mod intrinsic;
pub mod model;
pub mod probes_free;
pub mod probes_param;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Matrix;
