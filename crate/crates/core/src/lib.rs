//! Recover developer-chosen variable names in decompiled code.
//!
//! The pipeline: a decompiled-function dataset is canonicalized ([`corpus`]),
//! a byte-level BPE vocabulary is learned over it ([`tokenizer`]), a small
//! bidirectional transformer ([`model`], built on the autodiff in [`numeric`])
//! is pre-trained with (whole-word) masked language modeling and finetuned
//! with constrained masking over variable-name tokens ([`masking`],
//! [`training`]). At prediction time the number of name tokens is unknown and
//! is chosen by mean token probability ([`inference`]); [`eval`] scores the
//! results.

pub mod corpus;
pub mod eval;
pub mod fingerprint;
pub mod inference;
pub mod masking;
pub mod model;
pub mod numeric;
pub mod seed;
pub mod tokenizer;
pub mod toy;
pub mod training;

pub use corpus::{CanonicalFunction, DecompiledFunction, Span, Split, VariableSlot};

pub use tokenizer::{BpeVocab, Encoding};
