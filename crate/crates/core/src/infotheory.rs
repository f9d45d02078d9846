//! Surprisal and the contextual Rényi entropy family.
//!
//! All public quantities are in bits. Distributions arrive either as
//! probability vectors (validated) or as natural-log probability vectors
//! straight out of a [`SubwordPosition`] (trusted, already checked on load).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::WordKey;
use crate::error::{Error, Result};
use crate::lm::{Prediction, SubwordPosition};

/// Probabilities at or below this value are treated as outside the support when
/// counting it for `α = 0`.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Normalization tolerance for probability vectors handed to the public kernels.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Order of a Rényi entropy. Accepts any value in `[0, ∞]`.
#[derive(Debug, Clone, Copy)]
pub struct Alpha(f64);

impl Alpha {
    pub const ZERO: Alpha = Alpha(0.0);
    pub const HALF: Alpha = Alpha(0.5);
    pub const SHANNON: Alpha = Alpha(1.0);
    pub const INFINITY: Alpha = Alpha(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::Domain(format!("Rényi order must be in [0, inf], got {value}")));
        }
        Ok(Alpha(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_shannon(self) -> bool {
        self.0 == 1.0
    }

    /// Default grid exposed by the CLI.
    pub fn default_grid() -> Vec<Alpha> {
        [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0, f64::INFINITY]
            .into_iter()
            .map(Alpha)
            .collect()
    }
}

impl PartialEq for Alpha {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Alpha {}

impl std::hash::Hash for Alpha {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl PartialOrd for Alpha {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Alpha {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Alpha {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "inf" | "Inf" | "infinity" | "∞" => Ok(Alpha::INFINITY),
            _ => {
                let value = match s.split_once('/') {
                    Some((num, den)) => {
                        let num: f64 = num.trim().parse().map_err(|_| bad_alpha(s))?;
                        let den: f64 = den.trim().parse().map_err(|_| bad_alpha(s))?;
                        num / den
                    }
                    None => s.parse().map_err(|_| bad_alpha(s))?,
                };
                Alpha::new(value)
            }
        }
    }
}

fn bad_alpha(s: &str) -> Error {
    Error::Config(format!("cannot parse Rényi order {s:?}"))
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Alpha::new(v),
            Repr::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

fn validate_distribution(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::Domain("empty distribution".into()));
    }
    let mut total = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::Domain(format!("entry {i} is not a probability: {p}")));
        }
        total += p;
    }
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Domain(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// Rényi entropy of order `alpha` of a probability vector, in bits.
pub fn renyi_entropy(dist: &[f64], alpha: Alpha) -> Result<f64> {
    validate_distribution(dist)?;
    Ok(renyi_from_ln(dist.iter().map(|&p| p.ln()), alpha))
}

/// Rényi entropy from natural-log probabilities. Entries of `-inf` are zero
/// probabilities. No validation.
pub fn renyi_from_ln<I>(logprobs: I, alpha: Alpha) -> f64
where
    I: IntoIterator,
    I::Item: Into<f64>,
{
    let a = alpha.value();
    let logprobs = logprobs.into_iter().map(Into::into);
    let nats = if a == 0.0 {
        let floor = SUPPORT_THRESHOLD.ln();
        let support = logprobs.filter(|&lp| lp > floor).count();
        (support.max(1) as f64).ln()
    } else if a == 1.0 {
        -logprobs
            .filter(|lp| lp.is_finite())
            .map(|lp| lp.exp() * lp)
            .sum::<f64>()
    } else if a.is_infinite() {
        -logprobs.fold(f64::NEG_INFINITY, f64::max)
    } else {
        // log Σ p^α = logsumexp(α · ln p), evaluated in the log domain.
        let scaled: Vec<f64> = logprobs.filter(|lp| lp.is_finite()).map(|lp| a * lp).collect();
        logsumexp(&scaled) / (1.0 - a)
    };
    (nats / std::f64::consts::LN_2).max(0.0)
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-log2 p(outcome)`.
pub fn surprisal(dist: &[f64], outcome: usize) -> Result<f64> {
    validate_distribution(dist)?;
    let p = *dist
        .get(outcome)
        .ok_or_else(|| Error::Domain(format!("outcome {outcome} out of range for {} entries", dist.len())))?;
    if p == 0.0 {
        return Err(Error::InfiniteSurprisal { outcome });
    }
    Ok(-p.log2())
}

/// Surprisal of the realized subword at a single position.
pub fn position_surprisal(position: &SubwordPosition) -> Result<f64> {
    match &position.prediction {
        Prediction::Full(logprobs) => {
            let idx = position.realized_id as usize;
            let lp = *logprobs.get(idx).ok_or_else(|| {
                Error::Contract(format!("realized id {idx} outside vocabulary of {}", logprobs.len()))
            })?;
            if lp == f32::NEG_INFINITY {
                return Err(Error::InfiniteSurprisal { outcome: idx });
            }
            Ok((-(lp as f64) / std::f64::consts::LN_2).max(0.0))
        }
        Prediction::Summary { surprisal_bits, .. } => Ok(*surprisal_bits),
    }
}

/// Word surprisal: the sum of its subwords' surprisals along the canonical
/// tokenization.
pub fn word_surprisal(positions: &[SubwordPosition]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::Contract("word has no subword positions".into()));
    }
    positions.iter().map(position_surprisal).sum()
}

/// Entropy at the word's initial subword position. Lower-bounds the entropy of
/// the word-level distribution whenever tokenizations are unique.
pub fn word_entropy(first_position: &SubwordPosition, alpha: Alpha) -> Result<f64> {
    if first_position.subword_index != 0 {
        return Err(Error::Contract(format!(
            "word entropy requested at subword {} of word {} in text {}; only word-initial positions qualify",
            first_position.subword_index, first_position.word_index, first_position.text_id
        )));
    }
    match &first_position.prediction {
        Prediction::Full(logprobs) => Ok(renyi_from_ln(logprobs.iter().copied(), alpha)),
        Prediction::Summary { renyi_bits, .. } => renyi_bits
            .get(&alpha)
            .copied()
            .ok_or_else(|| Error::Config(format!("summary input lacks Rényi entropy for alpha = {alpha}"))),
    }
}

/// Total preprocessing effort `Σ_w k^(-y(w))` with `y(w) = h(w) / log2 k`.
/// Equal to one for every valid `dist` and `k > 1`.
pub fn preprocessing_effort_total(dist: &[f64], k: f64) -> Result<f64> {
    if !(k > 1.0) || !k.is_finite() {
        return Err(Error::Domain(format!("effort base must satisfy k > 1, got {k}")));
    }
    validate_distribution(dist)?;
    let log2_k = k.log2();
    Ok(dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let reading_time = -p.log2() / log2_k;
            k.powf(-reading_time)
        })
        .sum())
}

/// Word-level information quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordInfo {
    /// `+inf` when some subword had zero probability; such rows are dropped
    /// when matrices are built.
    pub surprisal_bits: f64,
    pub entropy_bits: BTreeMap<Alpha, f64>,
    /// Entropy of the next word in the same text; absent at text end.
    pub successor_entropy_bits: Option<BTreeMap<Alpha, f64>>,
}

/// Word infos for every word covered by `positions`, keyed by `(text, word)`.
///
/// Positions must be grouped by word in file order; each word's first position
/// must be its word-initial subword.
pub fn word_infos(positions: &[SubwordPosition], alphas: &[Alpha]) -> Result<BTreeMap<WordKey, WordInfo>> {
    let mut grouped: BTreeMap<WordKey, Vec<&SubwordPosition>> = BTreeMap::new();
    for p in positions {
        grouped
            .entry(WordKey::new(p.text_id, p.word_index))
            .or_default()
            .push(p);
    }

    let mut infos = BTreeMap::new();
    for (key, mut group) in grouped {
        group.sort_by_key(|p| p.subword_index);
        for (expected, p) in group.iter().enumerate() {
            if p.subword_index as usize != expected {
                return Err(Error::Format(format!(
                    "text {} word {}: subword indices are not contiguous from 0",
                    key.text_id, key.word_index
                )));
            }
        }
        let mut surprisal_bits = 0.0;
        for p in &group {
            match position_surprisal(p) {
                Ok(h) => surprisal_bits += h,
                Err(Error::InfiniteSurprisal { .. }) => {
                    log::warn!(
                        "text {} word {}: realized subword has zero probability",
                        key.text_id,
                        key.word_index
                    );
                    surprisal_bits = f64::INFINITY;
                }
                Err(e) => return Err(e),
            }
        }
        let entropy_bits = alphas
            .iter()
            .map(|&a| word_entropy(group[0], a).map(|h| (a, h)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        infos.insert(
            key,
            WordInfo {
                surprisal_bits,
                entropy_bits,
                successor_entropy_bits: None,
            },
        );
    }

    let keys: Vec<WordKey> = infos.keys().copied().collect();
    for key in keys {
        let next = WordKey::new(key.text_id, key.word_index + 1);
        if let Some(succ) = infos.get(&next).map(|w| w.entropy_bits.clone()) {
            infos.get_mut(&key).unwrap().successor_entropy_bits = Some(succ);
        }
    }
    Ok(infos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn full_position(word_index: u32, subword_index: u16, realized: u32, probs: &[f64]) -> SubwordPosition {
        SubwordPosition {
            text_id: 0,
            word_index,
            subword_index,
            realized_id: realized,
            prediction: Prediction::Full(probs.iter().map(|p| p.ln() as f32).collect()),
        }
    }

    #[test]
    fn uniform_over_four_is_two_bits_for_all_orders() {
        let d = [0.25; 4];
        for a in Alpha::default_grid() {
            assert_abs_diff_eq!(renyi_entropy(&d, a).unwrap(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn worked_three_outcome_values() {
        let d = [0.5, 0.25, 0.25];
        let h = |a: f64| renyi_entropy(&d, Alpha::new(a).unwrap()).unwrap();
        assert_abs_diff_eq!(h(1.0), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h(0.5), 1.54311, epsilon = 1e-5);
        assert_abs_diff_eq!(h(2.0), 1.41504, epsilon = 1e-5);
        assert_abs_diff_eq!(h(0.0), 1.58496, epsilon = 1e-5);
        assert_abs_diff_eq!(renyi_entropy(&d, Alpha::INFINITY).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_distribution_has_zero_entropy() {
        for a in Alpha::default_grid() {
            assert_eq!(renyi_entropy(&[1.0, 0.0, 0.0], a).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(matches!(
            renyi_entropy(&[0.5, 0.6], Alpha::SHANNON),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            renyi_entropy(&[1.5, -0.5], Alpha::SHANNON),
            Err(Error::Domain(_))
        ));
        assert!(Alpha::new(-1.0).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn surprisal_values() {
        assert_abs_diff_eq!(surprisal(&[0.25, 0.75], 0).unwrap(), 2.0);
        assert_eq!(surprisal(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert_abs_diff_eq!(surprisal(&[0.1, 0.9], 0).unwrap(), 3.32193, epsilon = 1e-5);
        assert!(matches!(
            surprisal(&[1.0, 0.0], 1),
            Err(Error::InfiniteSurprisal { outcome: 1 })
        ));
        assert!(surprisal(&[1.0], 3).is_err());
    }

    #[test]
    fn word_surprisal_sums_subwords() {
        // 2^-1.5 and 2^-0.5 as realized probabilities.
        let p1 = 2f64.powf(-1.5);
        let p2 = 2f64.powf(-0.5);
        let ws = [
            full_position(0, 0, 0, &[p1, 1.0 - p1]),
            full_position(0, 1, 0, &[p2, 1.0 - p2]),
        ];
        assert_abs_diff_eq!(word_surprisal(&ws).unwrap(), 2.0, epsilon = 1e-6);
        assert!(word_surprisal(&[]).is_err());
    }

    #[test]
    fn summary_positions_add_up() {
        let mk = |h: f64, s: u16| SubwordPosition {
            text_id: 0,
            word_index: 0,
            subword_index: s,
            realized_id: 0,
            prediction: Prediction::Summary {
                surprisal_bits: h,
                renyi_bits: BTreeMap::new(),
            },
        };
        assert_abs_diff_eq!(word_surprisal(&[mk(3.1, 0)]).unwrap(), 3.1);
        assert_abs_diff_eq!(word_surprisal(&[mk(2.0, 0), mk(2.0, 1), mk(2.0, 2)]).unwrap(), 6.0);
    }

    #[test]
    fn word_entropy_requires_initial_subword() {
        let first = full_position(0, 0, 0, &[0.5, 0.5]);
        let second = full_position(0, 1, 0, &[0.5, 0.5]);
        assert_abs_diff_eq!(word_entropy(&first, Alpha::SHANNON).unwrap(), 1.0, epsilon = 1e-6);
        assert!(matches!(word_entropy(&second, Alpha::SHANNON), Err(Error::Contract(_))));
        let certain = full_position(0, 0, 0, &[1.0, 0.0]);
        assert_eq!(word_entropy(&certain, Alpha::HALF).unwrap(), 0.0);
    }

    #[test]
    fn toy_lexicon_first_subword_bound() {
        // Words {aa, ab, b} with p = [0.25, 0.25, 0.5]; first subwords {a: 0.5, b: 0.5}.
        let word_level = renyi_entropy(&[0.25, 0.25, 0.5], Alpha::SHANNON).unwrap();
        let first = full_position(0, 0, 0, &[0.5, 0.5]);
        let bound = word_entropy(&first, Alpha::SHANNON).unwrap();
        assert_abs_diff_eq!(word_level, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(bound, 1.0, epsilon = 1e-6);
        assert!(bound <= word_level);
    }

    #[test]
    fn effort_total_is_one() {
        let d = [0.5, 0.25, 0.25];
        assert_abs_diff_eq!(preprocessing_effort_total(&d, 2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(preprocessing_effort_total(&d, 10.0).unwrap(), 1.0, epsilon = 1e-9);
        let u = [1.0 / 7.0; 7];
        let k = std::f64::consts::E.powi(2);
        assert_abs_diff_eq!(preprocessing_effort_total(&u, k).unwrap(), 1.0, epsilon = 1e-9);
        assert!(preprocessing_effort_total(&d, 1.0).is_err());
        assert!(preprocessing_effort_total(&d, 0.5).is_err());
    }

    #[test]
    fn alpha_parsing_and_ordering() {
        assert_eq!("1/2".parse::<Alpha>().unwrap(), Alpha::HALF);
        assert_eq!("inf".parse::<Alpha>().unwrap(), Alpha::INFINITY);
        assert!("x".parse::<Alpha>().is_err());
        assert!(Alpha::HALF < Alpha::SHANNON && Alpha::SHANNON < Alpha::INFINITY);
        let json = serde_json::to_string(&vec![Alpha::HALF, Alpha::INFINITY]).unwrap();
        assert_eq!(json, r#"[0.5,"inf"]"#);
        let back: Vec<Alpha> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Alpha::HALF, Alpha::INFINITY]);
    }

    #[test]
    fn word_infos_link_successors() {
        let ps = vec![
            full_position(0, 0, 0, &[0.5, 0.5]),
            full_position(1, 0, 1, &[0.25, 0.75]),
            full_position(1, 1, 0, &[0.5, 0.5]),
        ];
        let infos = word_infos(&ps, &[Alpha::SHANNON]).unwrap();
        let w0 = &infos[&WordKey::new(0, 0)];
        let w1 = &infos[&WordKey::new(0, 1)];
        assert_abs_diff_eq!(w0.surprisal_bits, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w1.surprisal_bits, -(0.75f64.log2()) + 1.0, epsilon = 1e-6);
        let succ = w0.successor_entropy_bits.as_ref().unwrap();
        assert_abs_diff_eq!(succ[&Alpha::SHANNON], w1.entropy_bits[&Alpha::SHANNON]);
        assert!(w1.successor_entropy_bits.is_none());
    }
}
