//! Quantifies how well surprisal and contextual (Rényi) entropy predict reading
//! behavior.
//!
//! The crate ingests per-reader reading measures ([`corpus`]), next-subword
//! distributions from a language model ([`lm`]), turns those into word-level
//! information quantities ([`infotheory`]), assembles paired design matrices
//! ([`predictors`]), fits cross-validated regressors ([`regression`]) and
//! compares them with paired permutation tests ([`inference`]). [`synth`]
//! produces corpora with known effects and [`pipeline`] runs everything end to
//! end.

pub mod corpus;
pub mod error;
pub mod inference;
pub mod infotheory;
pub mod lm;
pub mod pipeline;
pub mod predictors;
pub mod regression;
pub mod synth;

pub use error::{Error, Result};
pub use infotheory::Alpha;
