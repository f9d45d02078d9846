//! Interpolated add-one n-gram model over subwords.
//!
//! Each order `k` contributes an add-one smoothed estimate conditioned on the
//! previous `k - 1` subwords (padded with [`BOS`] at text start). Components
//! whose context never occurred in training drop out and the remaining weights
//! are renormalized, so an unseen context falls back to the lower orders.

use std::collections::{BTreeSet, HashMap};

use super::{Prediction, SubwordPosition, Vocabulary};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Context padding symbol. Never predicted.
pub const BOS: u32 = u32::MAX;

const EOS_TOKEN: &str = "</s>";
const WORD_INITIAL_MARKER: &str = "▁";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NgramConfig {
    pub order: usize,
    /// `weights[k - 1]` weights the order-`k` component.
    pub weights: Vec<f64>,
}

impl NgramConfig {
    pub fn new(order: usize, weights: Vec<f64>) -> Result<Self> {
        let config = NgramConfig { order, weights };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if self.weights.len() != self.order {
            return Err(Error::Config(format!(
                "{} interpolation weights given for order {}",
                self.weights.len(),
                self.order
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("interpolation weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("interpolation weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct NgramLm {
    config: NgramConfig,
    vocab_size: u32,
    /// `tables[k - 1]` maps a `(k - 1)`-subword context to continuation counts.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

fn context(history: &[u32], len: usize) -> Vec<u32> {
    let mut ctx = vec![BOS; len.saturating_sub(history.len())];
    ctx.extend_from_slice(&history[history.len().saturating_sub(len)..]);
    ctx
}

impl NgramLm {
    /// Trains on subword id sequences. `vocab_size` counts EOS.
    pub fn train(config: NgramConfig, vocab_size: u32, sequences: &[Vec<u32>]) -> Result<Self> {
        config.validate()?;
        if sequences.iter().all(|s| s.is_empty()) {
            return Err(Error::Config("n-gram training text is empty".into()));
        }
        let mut tables: Vec<HashMap<Vec<u32>, ContextCounts>> = vec![HashMap::new(); config.order];
        for seq in sequences {
            for (i, &tok) in seq.iter().enumerate() {
                if tok >= vocab_size {
                    return Err(Error::Config(format!("token {tok} outside vocabulary of {vocab_size}")));
                }
                for (k, table) in tables.iter_mut().enumerate() {
                    let entry = table.entry(context(&seq[..i], k)).or_default();
                    entry.total += 1;
                    *entry.next.entry(tok).or_insert(0) += 1;
                }
            }
        }
        Ok(NgramLm {
            config,
            vocab_size,
            tables,
        })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    /// Next-subword distribution after `history` (the text so far).
    pub fn distribution(&self, history: &[u32]) -> Vec<f64> {
        let v = self.vocab_size as usize;
        let active: Vec<(f64, &ContextCounts)> = self
            .tables
            .iter()
            .enumerate()
            .filter_map(|(k, table)| {
                let counts = table.get(&context(history, k))?;
                (counts.total > 0).then_some((self.config.weights[k], counts))
            })
            .collect();
        let mut weight_sum: f64 = active.iter().map(|(w, _)| w).sum();
        let active = if weight_sum > 0.0 {
            active
        } else {
            // Only zero-weight components saw this context; use the unigram.
            weight_sum = 1.0;
            vec![(1.0, &self.tables[0][&Vec::new()])]
        };

        let mut dist = vec![0.0; v];
        let mut floor = 0.0;
        for (w, counts) in &active {
            let scale = w / weight_sum / (counts.total as f64 + v as f64);
            floor += scale;
            for (&tok, &c) in &counts.next {
                dist[tok as usize] += scale * c as f64;
            }
        }
        for p in &mut dist {
            *p += floor;
        }
        dist
    }
}

/// A text as a sequence of subword tokens with their word coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedText {
    pub text_id: u32,
    /// `(word_index, subword_index, token id)` in reading order.
    pub tokens: Vec<(u32, u16, u32)>,
}

impl TokenizedText {
    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.2).collect()
    }
}

/// How corpus words are split into subwords for the built-in model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subwordizer {
    /// One subword per whitespace word.
    Whitespace,
    /// One subword per character; the first character carries the word-initial marker.
    Character,
}

fn split_word(surface: &str, mode: Subwordizer) -> Vec<String> {
    match mode {
        Subwordizer::Whitespace => vec![format!("{WORD_INITIAL_MARKER}{surface}")],
        Subwordizer::Character => surface
            .chars()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{WORD_INITIAL_MARKER}{c}")
                } else {
                    c.to_string()
                }
            })
            .collect(),
    }
}

/// Tokenizes every text of `corpus`; the vocabulary is sorted and ends with EOS.
pub fn tokenize_corpus(corpus: &Corpus, mode: Subwordizer) -> (Vocabulary, Vec<TokenizedText>) {
    let pieces: BTreeSet<String> = corpus.words().flat_map(|w| split_word(&w.surface, mode)).collect();
    let mut tokens: Vec<String> = pieces.into_iter().collect();
    let index: HashMap<&str, u32> = tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
    let texts = corpus
        .texts
        .iter()
        .map(|t| TokenizedText {
            text_id: t.text_id,
            tokens: t
                .words
                .iter()
                .flat_map(|w| {
                    split_word(&w.surface, mode)
                        .into_iter()
                        .enumerate()
                        .map(|(s, piece)| (w.word_index, s as u16, index[piece.as_str()]))
                        .collect::<Vec<_>>()
                })
                .collect(),
        })
        .collect();
    let eos_id = tokens.len() as u32;
    tokens.push(EOS_TOKEN.to_string());
    let vocab = Vocabulary {
        size: tokens.len() as u32,
        eos_id,
        tokens: Some(tokens),
        word_initial_marker: Some(WORD_INITIAL_MARKER.to_string()),
        model: None,
    };
    (vocab, texts)
}

/// Trains on `texts` and returns one full-distribution position per subword,
/// conditioning on the preceding subwords of the same text.
pub fn ngram_distributions(
    texts: &[TokenizedText],
    vocab: &Vocabulary,
    config: &NgramConfig,
) -> Result<Vec<SubwordPosition>> {
    let sequences: Vec<Vec<u32>> = texts.iter().map(TokenizedText::ids).collect();
    let lm = NgramLm::train(config.clone(), vocab.size, &sequences)?;
    let mut positions = Vec::new();
    for (text, ids) in texts.iter().zip(&sequences) {
        for (i, &(word_index, subword_index, id)) in text.tokens.iter().enumerate() {
            let dist = lm.distribution(&ids[..i]);
            positions.push(SubwordPosition {
                text_id: text.text_id,
                word_index,
                subword_index,
                realized_id: id,
                prediction: Prediction::Full(dist.iter().map(|p| p.ln() as f32).collect()),
            });
        }
    }
    Ok(positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // a = 0, b = 1, EOS = 2.
    fn aab() -> Vec<Vec<u32>> {
        vec![vec![0, 0, 1]]
    }

    #[test]
    fn unigram_add_one() {
        let lm = NgramLm::train(NgramConfig::new(1, vec![1.0]).unwrap(), 3, &aab()).unwrap();
        let d = lm.distribution(&[]);
        assert_abs_diff_eq!(d[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 2.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], 1.0 / 6.0, epsilon = 1e-15);
        // Context is irrelevant for a single unigram component.
        assert_eq!(lm.distribution(&[0, 1]), d);
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let bigram = NgramLm::train(NgramConfig::new(2, vec![0.4, 0.6]).unwrap(), 3, &aab()).unwrap();
        let unigram = NgramLm::train(NgramConfig::new(1, vec![1.0]).unwrap(), 3, &aab()).unwrap();
        // "b" never precedes anything in training.
        let after_b = bigram.distribution(&[0, 0, 1]);
        for (x, y) in after_b.iter().zip(unigram.distribution(&[])) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }
        // After "a" the bigram component is active and shifts mass.
        let after_a = bigram.distribution(&[0]);
        let expected_b = 0.4 * (2.0 / 6.0) + 0.6 * (2.0 / 5.0);
        assert_abs_diff_eq!(after_a[1], expected_b, epsilon = 1e-15);
    }

    #[test]
    fn distributions_are_normalized_and_positive() {
        let seqs = vec![vec![0, 1, 2, 3, 1, 0, 4], vec![3, 3, 1]];
        let lm = NgramLm::train(NgramConfig::new(3, vec![0.2, 0.3, 0.5]).unwrap(), 6, &seqs).unwrap();
        for h in [vec![], vec![0], vec![0, 1], vec![3, 3], vec![5, 5, 5]] {
            let d = lm.distribution(&h);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn configuration_errors() {
        assert!(NgramConfig::new(0, vec![]).is_err());
        assert!(NgramConfig::new(2, vec![0.5, 0.6]).is_err());
        assert!(NgramConfig::new(2, vec![1.5, -0.5]).is_err());
        assert!(NgramConfig::new(2, vec![1.0]).is_err());
        let cfg = NgramConfig::new(1, vec![1.0]).unwrap();
        assert!(NgramLm::train(cfg.clone(), 3, &[vec![]]).is_err());
        assert!(NgramLm::train(cfg, 3, &[vec![7]]).is_err());
    }
}
