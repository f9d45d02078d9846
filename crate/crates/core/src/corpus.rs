//! Per-reader reading measures, aggregated into one observation per word token.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_HEADER: [&str; 6] = ["text_id", "word_index", "surface", "reader_id", "rt_ms", "skipped"];

/// Probability assigned to words missing from an external frequency file.
pub const DEFAULT_FREQUENCY_FLOOR: f64 = 1e-8;

/// Identifies one word token: `(text, position within text)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordKey {
    pub text_id: u32,
    pub word_index: u32,
}

impl WordKey {
    pub fn new(text_id: u32, word_index: u32) -> Self {
        WordKey { text_id, word_index }
    }
}

impl fmt::Display for WordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.text_id, self.word_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    EyeTracking,
    SelfPaced,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eye-tracking" | "eyetracking" | "et" => Ok(CorpusFormat::EyeTracking),
            "self-paced" | "selfpaced" | "spr" => Ok(CorpusFormat::SelfPaced),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// How skipped words enter the reading-time average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipPolicy {
    /// A skip counts as a 0 ms reading time.
    #[serde(alias = "zero")]
    IncludeAsZero,
    /// Skipped measures are dropped per reader before averaging.
    Exclude,
    /// Self-paced reading; nothing can be skipped.
    #[serde(alias = "na")]
    NotApplicable,
}

impl SkipPolicy {
    /// Short tag used in report rows.
    pub fn tag(self) -> &'static str {
        match self {
            SkipPolicy::IncludeAsZero => "zero",
            SkipPolicy::Exclude => "exclude",
            SkipPolicy::NotApplicable => "na",
        }
    }
}

impl FromStr for SkipPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "include_as_zero" | "include-as-zero" => Ok(SkipPolicy::IncludeAsZero),
            "exclude" => Ok(SkipPolicy::Exclude),
            "na" | "not_applicable" | "not-applicable" => Ok(SkipPolicy::NotApplicable),
            other => Err(Error::Config(format!("unknown skip policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderMeasure {
    pub reader_id: String,
    pub rt_ms: Option<f64>,
    /// `None` when the corpus carries no skip annotation for this reader.
    pub skipped: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordObservation {
    pub text_id: u32,
    pub word_index: u32,
    pub surface: String,
    pub length_chars: u32,
    /// Bits; filled in by [`Corpus::assign_unigrams`].
    pub unigram_logprob: Option<f64>,
    /// Sorted by reader id.
    pub measures: Vec<ReaderMeasure>,
    /// `None` when no reader contributes a value under the active policy.
    pub mean_rt_ms: Option<f64>,
    pub skip_ratio: f64,
}

impl WordObservation {
    pub fn key(&self) -> WordKey {
        WordKey::new(self.text_id, self.word_index)
    }

    fn aggregate(&mut self, policy: SkipPolicy) {
        let annotated = self.measures.iter().filter(|m| m.skipped.is_some()).count();
        let skipped = self.measures.iter().filter(|m| m.skipped == Some(true)).count();
        self.skip_ratio = if annotated == 0 {
            0.0
        } else {
            skipped as f64 / annotated as f64
        };

        let values: Vec<f64> = self
            .measures
            .iter()
            .filter_map(|m| match (policy, m.skipped) {
                (SkipPolicy::IncludeAsZero, Some(true)) => Some(0.0),
                (SkipPolicy::Exclude, Some(true)) => None,
                _ => m.rt_ms,
            })
            .collect();
        self.mean_rt_ms = if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Text {
    pub text_id: u32,
    pub words: Vec<WordObservation>,
}

/// An ingested corpus: texts ordered by id, words ordered by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub format: CorpusFormat,
    pub policy: SkipPolicy,
    pub texts: Vec<Text>,
}

fn check_policy(format: CorpusFormat, policy: SkipPolicy) -> Result<()> {
    match (format, policy) {
        (CorpusFormat::SelfPaced, SkipPolicy::NotApplicable) => Ok(()),
        (CorpusFormat::SelfPaced, p) => Err(Error::Validation(format!(
            "self-paced corpora admit no skipping; skip policy {p:?} is not applicable"
        ))),
        (CorpusFormat::EyeTracking, SkipPolicy::NotApplicable) => Err(Error::Validation(
            "eye-tracking corpora need a skip policy (zero or exclude)".into(),
        )),
        _ => Ok(()),
    }
}

/// Reads and aggregates a corpus TSV file.
pub fn ingest_corpus(path: impl AsRef<Path>, format: CorpusFormat, policy: SkipPolicy) -> Result<Corpus> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&content, &path.display().to_string(), format, policy)
}

/// Parses corpus TSV content; `origin` names the source in error messages.
pub fn parse_corpus(content: &str, origin: &str, format: CorpusFormat, policy: SkipPolicy) -> Result<Corpus> {
    check_policy(format, policy)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };

    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) => {
            let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
            if cols != CORPUS_HEADER {
                return Err(parse_err(
                    1,
                    format!("expected header {:?}, found {:?}", CORPUS_HEADER.join("\t"), header),
                ));
            }
        }
        None => return Err(parse_err(1, "missing header row".into())),
    }

    let mut words: BTreeMap<WordKey, WordObservation> = BTreeMap::new();
    let mut seen: HashSet<(WordKey, String)> = HashSet::new();
    let mut readers: HashSet<String> = HashSet::new();

    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != CORPUS_HEADER.len() {
            return Err(parse_err(lineno, format!("expected 6 fields, found {}", fields.len())));
        }
        let text_id: u32 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad text_id {:?}", fields[0])))?;
        let word_index: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad word_index {:?}", fields[1])))?;
        let surface = fields[2];
        if surface.is_empty() {
            return Err(parse_err(lineno, "empty surface form".into()));
        }
        let reader_id = fields[3].trim();
        if reader_id.is_empty() {
            return Err(parse_err(lineno, "empty reader_id".into()));
        }
        let rt_ms = match fields[4].trim() {
            "" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| parse_err(lineno, format!("bad rt_ms {s:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, format!("non-finite rt_ms {s:?}")));
                }
                if v < 0.0 {
                    return Err(Error::Validation(format!("line {lineno}: negative reading time {v}")));
                }
                Some(v)
            }
        };
        let skipped = match fields[5].trim() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            s => return Err(parse_err(lineno, format!("skipped must be 0, 1 or empty, found {s:?}"))),
        };
        if format == CorpusFormat::SelfPaced && skipped == Some(true) {
            return Err(Error::Validation(format!(
                "line {lineno}: skipped word in a self-paced corpus"
            )));
        }
        if skipped == Some(true) && rt_ms.is_some_and(|v| v != 0.0) {
            return Err(Error::Validation(format!(
                "line {lineno}: skipped word carries a nonzero reading time"
            )));
        }

        let key = WordKey::new(text_id, word_index);
        if !seen.insert((key, reader_id.to_string())) {
            return Err(Error::Validation(format!(
                "line {lineno}: duplicate measure for text {text_id}, word {word_index}, reader {reader_id}"
            )));
        }
        readers.insert(reader_id.to_string());

        let obs = words.entry(key).or_insert_with(|| WordObservation {
            text_id,
            word_index,
            surface: surface.to_string(),
            length_chars: surface.chars().count() as u32,
            unigram_logprob: None,
            measures: Vec::new(),
            mean_rt_ms: None,
            skip_ratio: 0.0,
        });
        if obs.surface != surface {
            return Err(Error::Validation(format!(
                "line {lineno}: surface {surface:?} disagrees with {:?} for text {text_id}, word {word_index}",
                obs.surface
            )));
        }
        obs.measures.push(ReaderMeasure {
            reader_id: reader_id.to_string(),
            rt_ms,
            skipped,
        });
    }

    if readers.is_empty() {
        return Err(Error::Validation(format!(
            "{origin}: corpus has no reader measurements"
        )));
    }

    let mut texts: Vec<Text> = Vec::new();
    for (key, mut obs) in words {
        obs.measures.sort_by(|a, b| a.reader_id.cmp(&b.reader_id));
        obs.aggregate(policy);
        match texts.last_mut() {
            Some(t) if t.text_id == key.text_id => t.words.push(obs),
            _ => texts.push(Text {
                text_id: key.text_id,
                words: vec![obs],
            }),
        }
    }
    for text in &texts {
        for (expected, w) in text.words.iter().enumerate() {
            if w.word_index as usize != expected {
                return Err(Error::Validation(format!(
                    "text {}: word indices are not contiguous from 0 (missing index {expected})",
                    text.text_id
                )));
            }
        }
    }

    Ok(Corpus { format, policy, texts })
}

impl Corpus {
    pub fn words(&self) -> impl Iterator<Item = &WordObservation> {
        self.texts.iter().flat_map(|t| t.words.iter())
    }

    pub fn word_count(&self) -> usize {
        self.texts.iter().map(|t| t.words.len()).sum()
    }

    /// Sets every word's unigram log-probability from `table`.
    pub fn assign_unigrams(&mut self, table: &HashMap<String, f64>) -> Result<()> {
        for text in &mut self.texts {
            for w in &mut text.words {
                let u = table
                    .get(&w.surface)
                    .ok_or_else(|| Error::Validation(format!("no unigram estimate for {:?}", w.surface)))?;
                w.unigram_logprob = Some(*u);
            }
        }
        Ok(())
    }

    /// Serializes the per-reader measures in the ingestion format.
    pub fn to_measures_tsv(&self) -> String {
        let mut out = CORPUS_HEADER.join("\t");
        out.push('\n');
        for w in self.words() {
            for m in &w.measures {
                let rt = m.rt_ms.map(|v| v.to_string()).unwrap_or_default();
                let skipped = match m.skipped {
                    Some(true) => "1",
                    Some(false) => "0",
                    None => "",
                };
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    w.text_id, w.word_index, w.surface, m.reader_id, rt, skipped
                );
            }
        }
        out
    }

    /// One line per word with the aggregated fields.
    pub fn to_aggregates_tsv(&self) -> String {
        let mut out = String::from(
            "text_id\tword_index\tsurface\tlength_chars\tunigram_logprob_bits\tn_readers\tmean_rt_ms\tskip_ratio\n",
        );
        for w in self.words() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                w.text_id,
                w.word_index,
                w.surface,
                w.length_chars,
                w.unigram_logprob.map(|v| v.to_string()).unwrap_or_default(),
                w.measures.len(),
                w.mean_rt_ms.map(|v| v.to_string()).unwrap_or_default(),
                w.skip_ratio
            );
        }
        out
    }
}

/// Counts from a `surface<TAB>count` file. A leading `surface\tcount` header is
/// optional.
pub fn read_frequency_file(path: impl AsRef<Path>) -> Result<HashMap<String, u64>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut counts = HashMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || (idx == 0 && line == "surface\tcount") {
            continue;
        }
        let (surface, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: "expected surface<TAB>count".into(),
        })?;
        let count: u64 = count.trim().parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: format!("bad count {count:?}"),
        })?;
        *counts.entry(surface.to_string()).or_insert(0) += count;
    }
    Ok(counts)
}

/// Unigram log-probabilities in bits for every surface form in `corpus`.
///
/// With `external` counts each value is `log2(count / total)`, and words missing
/// from the table get `log2(floor)`. Without them, probabilities are estimated
/// from the corpus tokens with add-one smoothing over the observed types.
pub fn unigram_logprobs<'a, I>(
    corpus_words: I,
    external: Option<&HashMap<String, u64>>,
    floor: f64,
) -> Result<HashMap<String, f64>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut corpus_counts: HashMap<&str, u64> = HashMap::new();
    for w in corpus_words {
        *corpus_counts.entry(w).or_insert(0) += 1;
    }
    match external {
        Some(table) => {
            if !(floor > 0.0 && floor < 1.0) {
                return Err(Error::Config(format!("frequency floor must be in (0, 1), got {floor}")));
            }
            let total: u64 = table.values().sum();
            if total == 0 {
                return Err(Error::Validation("external frequency table is empty".into()));
            }
            Ok(corpus_counts
                .keys()
                .map(|&w| {
                    let bits = match table.get(w) {
                        Some(&c) if c > 0 => (c as f64 / total as f64).log2(),
                        _ => floor.log2(),
                    };
                    (w.to_string(), bits)
                })
                .collect())
        }
        None => {
            if corpus_counts.is_empty() {
                return Err(Error::Validation(
                    "cannot estimate unigram probabilities from an empty corpus".into(),
                ));
            }
            let tokens: u64 = corpus_counts.values().sum();
            let types = corpus_counts.len() as u64;
            let denom = (tokens + types) as f64;
            Ok(corpus_counts
                .iter()
                .map(|(&w, &c)| (w.to_string(), ((c + 1) as f64 / denom).log2()))
                .collect())
        }
    }
}
