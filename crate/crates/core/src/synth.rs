//! Synthetic corpora with known generating coefficients.
//!
//! Texts are sampled from a seeded random word-bigram model whose exact
//! next-word distributions are emitted as a FULLDIST file (one subword per
//! word). Reading times follow `φᵀx + noise`, truncated at zero, where `x` is
//! computed from those same distributions and from an emitted frequency file,
//! so the pipeline sees exactly the predictors the generator used.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::WordKey;
use crate::corpus::{parse_corpus, unigram_logprobs, Corpus, CorpusFormat, SkipPolicy, DEFAULT_FREQUENCY_FLOOR};
use crate::error::{Error, Result};
use crate::infotheory::{word_infos, Alpha, WordInfo};
use crate::lm::{write_fulldist, Prediction, SubwordPosition, Vocabulary};
use crate::predictors::{required_alphas, term_value, Term, TermKind, MAX_LAG};
use crate::regression::sigmoid;

/// Probability mass reserved for end-of-sequence at every position.
const EOS_MASS: f64 = 0.01;
/// Total count written to the frequency file.
const FREQUENCY_SCALE: f64 = 1e7;
const WORD_INITIAL_MARKER: &str = "▁";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Generating coefficients, in ms per predictor unit. Terms left out are zero.
    pub true_phi: BTreeMap<Term, f64>,
    pub noise_sigma: f64,
    pub n_texts: usize,
    pub words_per_text: usize,
    #[serde(default = "default_readers")]
    pub n_readers: usize,
    /// Logistic coefficients for each reader's skip indicator.
    #[serde(default)]
    pub skip_model: Option<BTreeMap<Term, f64>>,
    #[serde(default = "default_lexicon")]
    pub lexicon_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_readers() -> usize {
    1
}

fn default_lexicon() -> usize {
    300
}

impl GeneratorConfig {
    /// Length, unigram and lag-0 surprisal and entropy (α = ½) effects.
    pub fn standard(seed: u64, n_words: usize) -> Self {
        let mut true_phi = BTreeMap::new();
        true_phi.insert(Term::intercept(), 200.0);
        true_phi.insert(Term::length(0), 4.0);
        true_phi.insert(Term::unigram(0), -1.5);
        true_phi.insert(Term::surprisal(0), 3.0);
        true_phi.insert(Term::entropy(0, Alpha::HALF), 5.0);
        GeneratorConfig {
            true_phi,
            noise_sigma: 30.0,
            n_texts: 50,
            words_per_text: n_words.div_ceil(50),
            n_readers: 1,
            skip_model: None,
            lexicon_size: default_lexicon(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if self.n_texts == 0 || self.words_per_text == 0 || self.n_readers == 0 {
            return Err(Error::Config(
                "n_texts, words_per_text and n_readers must be positive".into(),
            ));
        }
        if self.lexicon_size < 2 {
            return Err(Error::Config("lexicon needs at least 2 words".into()));
        }
        for (term, phi) in self.true_phi.iter().chain(self.skip_model.iter().flatten()) {
            term.validate()?;
            if term.lag > MAX_LAG {
                return Err(Error::Config(format!("{term}: lag above {MAX_LAG}")));
            }
            if !phi.is_finite() {
                return Err(Error::Config(format!("{term}: coefficient is not finite")));
            }
        }
        Ok(())
    }

    fn alphas(&self) -> Vec<Alpha> {
        let mut alphas = required_alphas(
            self.true_phi
                .keys()
                .chain(self.skip_model.iter().flat_map(|m| m.keys())),
        );
        alphas.insert(Alpha::SHANNON);
        alphas.into_iter().collect()
    }
}

/// Everything a generator run produces, in memory.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub config: GeneratorConfig,
    pub corpus_tsv: String,
    pub positions: Vec<SubwordPosition>,
    pub vocabulary: Vocabulary,
    pub frequencies: BTreeMap<String, u64>,
}

/// Locations written by [`Synthetic::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub corpus: PathBuf,
    pub fulldist: PathBuf,
    pub frequencies: PathBuf,
}

struct Lexicon {
    words: Vec<String>,
    zipf: Vec<f64>,
}

fn lexicon(rng: &mut ChaCha8Rng, size: usize) -> Lexicon {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let rank = words.len() as f64;
        // Frequent words tend to be short.
        let len = 1 + (0.8 * (rank + 1.0).log2()) as usize + rng.random_range(0..3);
        let w: String = (0..len)
            .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
            .collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let raw: Vec<f64> = (0..size).map(|r| 1.0 / (r as f64 + 2.7)).collect();
    let total: f64 = raw.iter().sum();
    Lexicon {
        words,
        zipf: raw.into_iter().map(|z| z / total).collect(),
    }
}

/// Word-level bigram model: `dists[c]` follows context word `c`, the last
/// entry follows the text start. Each context sharpens the Zipf prior by its
/// own random amount so entropies vary across contexts.
fn bigram_model(rng: &mut ChaCha8Rng, zipf: &[f64]) -> Vec<Vec<f64>> {
    let v = zipf.len();
    (0..=v)
        .map(|_| {
            let sharpness: f64 = rng.random_range(0.0..3.0);
            let logits: Vec<f64> = zipf
                .iter()
                .map(|z| {
                    let g: f64 = StandardNormal.sample(rng);
                    z.ln() + sharpness * g
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / total).collect()
        })
        .collect()
}

fn sample_index(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

fn linear_predictor(
    coefficients: &BTreeMap<Term, f64>,
    words: &[crate::corpus::WordObservation],
    infos: &BTreeMap<WordKey, WordInfo>,
    i: usize,
) -> f64 {
    coefficients
        .iter()
        .map(|(term, phi)| term_value(words, infos, term, i).map_or(0.0, |x| phi * x))
        .sum()
}

/// Samples a corpus, its LM distributions and a frequency table.
pub fn generate(config: &GeneratorConfig) -> Result<Synthetic> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lex = lexicon(&mut rng, config.lexicon_size);
    let model = bigram_model(&mut rng, &lex.zipf);
    let v = lex.words.len();
    let eos_id = v as u32;

    let mut tokens: Vec<String> = lex.words.iter().map(|w| format!("{WORD_INITIAL_MARKER}{w}")).collect();
    tokens.push("</s>".into());
    let vocabulary = Vocabulary {
        size: v as u32 + 1,
        eos_id,
        tokens: Some(tokens),
        word_initial_marker: Some(WORD_INITIAL_MARKER.into()),
        model: Some("synthetic-bigram".into()),
    };
    let ln_dists: Vec<Vec<f32>> = model
        .iter()
        .map(|d| {
            let mut ln: Vec<f32> = d.iter().map(|p| ((1.0 - EOS_MASS) * p).ln() as f32).collect();
            ln.push(EOS_MASS.ln() as f32);
            ln
        })
        .collect();

    let mut texts: Vec<Vec<usize>> = Vec::with_capacity(config.n_texts);
    let mut positions = Vec::with_capacity(config.n_texts * config.words_per_text);
    for t in 0..config.n_texts {
        let mut prev = v;
        let mut ids = Vec::with_capacity(config.words_per_text);
        for i in 0..config.words_per_text {
            let w = sample_index(&mut rng, &model[prev]);
            positions.push(SubwordPosition {
                text_id: t as u32,
                word_index: i as u32,
                subword_index: 0,
                realized_id: w as u32,
                prediction: Prediction::Full(ln_dists[prev].clone()),
            });
            ids.push(w);
            prev = w;
        }
        texts.push(ids);
    }

    let frequencies: BTreeMap<String, u64> = lex
        .words
        .iter()
        .zip(&lex.zipf)
        .map(|(w, z)| (w.clone(), ((z * FREQUENCY_SCALE).round() as u64).max(1)))
        .collect();

    // Predictor values exactly as the pipeline will compute them.
    let infos = word_infos(&positions, &config.alphas())?;
    let freq_map: HashMap<String, u64> = frequencies.iter().map(|(k, c)| (k.clone(), *c)).collect();
    let unigram = unigram_logprobs(
        texts.iter().flatten().map(|&w| lex.words[w].as_str()),
        Some(&freq_map),
        DEFAULT_FREQUENCY_FLOOR,
    )?;
    let mut skeleton = String::from("text_id\tword_index\tsurface\treader_id\trt_ms\tskipped\n");
    for (t, ids) in texts.iter().enumerate() {
        for (i, &w) in ids.iter().enumerate() {
            let _ = writeln!(skeleton, "{t}\t{i}\t{}\tr0\t0\t0", lex.words[w]);
        }
    }
    let mut frame = parse_corpus(
        &skeleton,
        "synthetic",
        CorpusFormat::EyeTracking,
        SkipPolicy::IncludeAsZero,
    )?;
    frame.assign_unigrams(&unigram)?;

    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let mut corpus_tsv = String::from("text_id\tword_index\tsurface\treader_id\trt_ms\tskipped\n");
    for (t, text) in frame.texts.iter().enumerate() {
        for i in 0..text.words.len() {
            let mean = linear_predictor(&config.true_phi, &text.words, &infos, i);
            let skip_p = config
                .skip_model
                .as_ref()
                .map(|m| sigmoid(linear_predictor(m, &text.words, &infos, i)));
            for r in 0..config.n_readers {
                let skipped = skip_p.is_some_and(|p| rng.random::<f64>() < p);
                let rt = (mean + noise.sample(&mut rng)).max(0.0);
                let _ = if skipped {
                    writeln!(corpus_tsv, "{t}\t{i}\t{}\tr{r}\t0\t1", text.words[i].surface)
                } else {
                    writeln!(corpus_tsv, "{t}\t{i}\t{}\tr{r}\t{:.3}\t0", text.words[i].surface, rt)
                };
            }
        }
    }

    Ok(Synthetic {
        config: config.clone(),
        corpus_tsv,
        positions,
        vocabulary,
        frequencies,
    })
}

impl Synthetic {
    /// Parses the generated reading measures.
    pub fn corpus(&self, policy: SkipPolicy) -> Result<Corpus> {
        parse_corpus(&self.corpus_tsv, "synthetic", CorpusFormat::EyeTracking, policy)
    }

    pub fn frequency_tsv(&self) -> String {
        let mut out = String::from("surface\tcount\n");
        for (w, c) in &self.frequencies {
            let _ = writeln!(out, "{w}\t{c}");
        }
        out
    }

    pub fn frequency_map(&self) -> HashMap<String, u64> {
        self.frequencies.iter().map(|(k, c)| (k.clone(), *c)).collect()
    }

    /// Writes `corpus.tsv`, `dists.rtd` (with its manifest) and `freq.tsv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SyntheticPaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SyntheticPaths {
            corpus: dir.join("corpus.tsv"),
            fulldist: dir.join("dists.rtd"),
            frequencies: dir.join("freq.tsv"),
        };
        fs::write(&paths.corpus, &self.corpus_tsv).map_err(|e| Error::io(&paths.corpus, e))?;
        write_fulldist(&paths.fulldist, &self.positions, &self.vocabulary)?;
        fs::write(&paths.frequencies, self.frequency_tsv()).map_err(|e| Error::io(&paths.frequencies, e))?;
        Ok(paths)
    }
}

/// Generating coefficient of `kind` at `lag`, if any.
pub fn true_coefficient(config: &GeneratorConfig, kind: TermKind, lag: u8) -> Option<f64> {
    config
        .true_phi
        .iter()
        .find(|(t, _)| t.kind == kind && t.lag == lag)
        .map(|(_, v)| *v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            true_phi: BTreeMap::from([(Term::intercept(), 200.0)]),
            noise_sigma: 1.0,
            n_texts: 20,
            words_per_text: 500,
            n_readers: 1,
            skip_model: None,
            lexicon_size: 50,
            seed,
        }
    }

    #[test]
    fn intercept_only_mean() {
        let s = generate(&intercept_only(3)).unwrap();
        let corpus = s.corpus(SkipPolicy::IncludeAsZero).unwrap();
        let rts: Vec<f64> = corpus.words().map(|w| w.mean_rt_ms.unwrap()).collect();
        assert_eq!(rts.len(), 10_000);
        let mean = rts.iter().sum::<f64>() / rts.len() as f64;
        assert!((mean - 200.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&intercept_only(9)).unwrap();
        let b = generate(&intercept_only(9)).unwrap();
        assert_eq!(a.corpus_tsv, b.corpus_tsv);
        assert_eq!(a.positions, b.positions);
        let c = generate(&intercept_only(10)).unwrap();
        assert_ne!(a.corpus_tsv, c.corpus_tsv);
    }

    #[test]
    fn skip_model_marks_skips() {
        let mut config = intercept_only(1);
        config.n_readers = 4;
        config.words_per_text = 50;
        config.skip_model = Some(BTreeMap::from([(Term::intercept(), 0.0)]));
        let corpus = generate(&config).unwrap().corpus(SkipPolicy::IncludeAsZero).unwrap();
        let ratio: f64 = corpus.words().map(|w| w.skip_ratio).sum::<f64>() / corpus.word_count() as f64;
        assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut config = intercept_only(0);
        config.noise_sigma = 0.0;
        assert!(generate(&config).is_err());
    }
}
