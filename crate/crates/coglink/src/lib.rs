//! Cognate clustering toolkit.
//!
//! The pipeline, end to end:
//!
//! 1. [`dataio`] loads multilingual wordlists (TSV, one word per row).
//! 2. [`alignment`] builds a multiple sequence alignment per concept using
//!    sound-class scored Needleman-Wunsch and a UPGMA guide tree.
//! 3. [`phonology`] converts the aligned tokens to a compact transcription
//!    alphabet and maps them to integer ids.
//! 4. [`model`] runs a transformer over the MSA (row and column attention),
//!    pools it into a pairwise representation, refines that with triangular
//!    multiplicative and attention updates, and predicts a link probability
//!    for every word pair.
//! 5. [`clustering`] flat-clusters the link probabilities into cognate sets.
//! 6. [`evaluation`] scores predicted clusterings with B-Cubed F1.
//!
//! [`training`] fits the model end to end with AdamW; [`cli`] exposes the
//! whole pipeline as subcommands of a single binary.

#![allow(clippy::needless_range_loop)] // index-heavy numeric kernels

pub mod alignment;
pub mod autodiff;
pub mod cli;
pub mod clustering;
pub mod dataio;
pub mod demo;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod phonology;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
