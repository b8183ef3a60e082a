//! Agreement-based training for zero-shot multilingual translation.
//!
//! The crate covers the full pipeline at desk scale: synthetic language
//! families with known joint distributions, a small shared
//! encoder-decoder trained with composite likelihood plus agreement
//! terms over auxiliary languages, BLEU / cross-entropy evaluation with
//! pivoting, and an exact-enumeration oracle that checks the zero-shot
//! consistency bounds on tiny tabular systems.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Edge, Lang, TranslationGraph};
