//! Next-subword distributions: the FULLDIST/SUMMARY file formats and a small
//! built-in interpolated n-gram model.

mod fulldist;
mod ngram;
mod summary;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::infotheory::Alpha;

pub use fulldist::{decode_fulldist, encode_fulldist, manifest_path, read_fulldist, write_fulldist, FULLDIST_MAGIC};
pub use ngram::{ngram_distributions, tokenize_corpus, NgramConfig, NgramLm, Subwordizer, TokenizedText, BOS};
pub use summary::{read_summary, summarize_positions, write_summary};

/// What the model predicted at one subword step.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Natural-log probabilities over the whole vocabulary (EOS included).
    Full(Vec<f32>),
    /// Precomputed quantities, in bits.
    Summary {
        surprisal_bits: f64,
        renyi_bits: BTreeMap<Alpha, f64>,
    },
}

/// One language-model prediction step with its corpus coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordPosition {
    pub text_id: u32,
    pub word_index: u32,
    /// 0 for the word-initial subword.
    pub subword_index: u16,
    pub realized_id: u32,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: u32,
    pub eos_id: u32,
    /// Token strings, when a manifest provides them.
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
    /// Prefix marking word-initial subwords (e.g. `Ġ` for GPT-2, `▁` here).
    #[serde(default)]
    pub word_initial_marker: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
}

impl Vocabulary {
    pub fn new(size: u32, eos_id: u32) -> Self {
        Vocabulary {
            size,
            eos_id,
            tokens: None,
            word_initial_marker: None,
            model: None,
        }
    }

    pub fn is_word_initial(&self, id: u32) -> Option<bool> {
        let marker = self.word_initial_marker.as_deref()?;
        let token = self.tokens.as_ref()?.get(id as usize)?;
        Some(token.starts_with(marker))
    }
}

/// Sidecar manifest stored next to a FULLDIST file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub vocabulary: Vec<String>,
    pub word_initial_marker: String,
    pub model: String,
}
