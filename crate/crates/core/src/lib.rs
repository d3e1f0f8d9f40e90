//! Pool-based active learning for extractive question answering.
//!
//! The crate is organised around the acquisition loop:
//!
//! - [`dataset`] loads SQuAD-format data and acts as the labeling oracle.
//! - [`backend`] defines the model contract, the deterministic synthetic
//!   backend and the newline-delimited JSON wire client/server.
//! - [`acquisition`] holds the selection strategies (least confidence,
//!   clustering, maximal diversity, perturbation robustness, random) and their
//!   numerical primitives.
//! - [`alloop`] runs the seed / fine-tune / acquire / label cycle and produces
//!   the experiment log.
//! - [`metrics`] implements SQuAD-style F1 / exact match and learning-curve AUC.
//! - [`cli`] wires everything into the `palqa` binary.

pub mod acquisition;
pub mod alloop;
pub mod backend;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod synthdata;
pub mod text;

pub use error::{Error, Result};
