//! Design matrices built from declarative term lists.

mod experiments;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Corpus, SkipPolicy, WordKey, WordObservation};
use crate::error::{Error, Result};
use crate::infotheory::{Alpha, WordInfo};

pub use experiments::{experiment_pairs, Experiment, ExperimentKind, SpecPair};

/// Largest spillover lag.
pub const MAX_LAG: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Intercept,
    Length,
    Unigram,
    Surprisal,
    Entropy,
    SuccessorEntropy,
    DeltaBudget,
    UnderBudget,
    OverBudget,
    AbsBudget,
}

impl TermKind {
    fn name(self) -> &'static str {
        match self {
            TermKind::Intercept => "intercept",
            TermKind::Length => "length",
            TermKind::Unigram => "unigram",
            TermKind::Surprisal => "surprisal",
            TermKind::Entropy => "entropy",
            TermKind::SuccessorEntropy => "successor_entropy",
            TermKind::DeltaBudget => "delta_budget",
            TermKind::UnderBudget => "under_budget",
            TermKind::OverBudget => "over_budget",
            TermKind::AbsBudget => "abs_budget",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "intercept" => TermKind::Intercept,
            "length" => TermKind::Length,
            "unigram" => TermKind::Unigram,
            "surprisal" => TermKind::Surprisal,
            "entropy" => TermKind::Entropy,
            "successor_entropy" => TermKind::SuccessorEntropy,
            "delta_budget" => TermKind::DeltaBudget,
            "under_budget" => TermKind::UnderBudget,
            "over_budget" => TermKind::OverBudget,
            "abs_budget" => TermKind::AbsBudget,
            _ => return None,
        })
    }

    pub fn is_budget(self) -> bool {
        matches!(
            self,
            TermKind::DeltaBudget | TermKind::UnderBudget | TermKind::OverBudget | TermKind::AbsBudget
        )
    }

    pub fn uses_alpha(self) -> bool {
        self.is_budget() || matches!(self, TermKind::Entropy | TermKind::SuccessorEntropy)
    }
}

/// One predictor column. `lag` counts words back from the current one; the
/// successor entropy always refers to the next word.
///
/// Displayed as e.g. `surprisal@t-1`, `entropy[0.5]@t`, `successor_entropy[1]@t+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Term {
    pub kind: TermKind,
    pub lag: u8,
    pub alpha: Option<Alpha>,
}

impl Term {
    pub fn intercept() -> Self {
        Term {
            kind: TermKind::Intercept,
            lag: 0,
            alpha: None,
        }
    }

    pub fn length(lag: u8) -> Self {
        Term {
            kind: TermKind::Length,
            lag,
            alpha: None,
        }
    }

    pub fn unigram(lag: u8) -> Self {
        Term {
            kind: TermKind::Unigram,
            lag,
            alpha: None,
        }
    }

    pub fn surprisal(lag: u8) -> Self {
        Term {
            kind: TermKind::Surprisal,
            lag,
            alpha: None,
        }
    }

    pub fn entropy(lag: u8, alpha: Alpha) -> Self {
        Term {
            kind: TermKind::Entropy,
            lag,
            alpha: Some(alpha),
        }
    }

    pub fn successor_entropy(alpha: Alpha) -> Self {
        Term {
            kind: TermKind::SuccessorEntropy,
            lag: 0,
            alpha: Some(alpha),
        }
    }

    pub fn budget(kind: TermKind, lag: u8, alpha: Alpha) -> Self {
        debug_assert!(kind.is_budget());
        Term {
            kind,
            lag,
            alpha: Some(alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag > MAX_LAG {
            return Err(Error::Config(format!("{self}: lag exceeds {MAX_LAG}")));
        }
        if self.kind.uses_alpha() != self.alpha.is_some() {
            return Err(Error::Config(format!("{self}: alpha given for the wrong kind of term")));
        }
        match self.kind {
            TermKind::SuccessorEntropy | TermKind::Intercept if self.lag != 0 => {
                Err(Error::Config(format!("{self}: lag must be 0")))
            }
            k if k.is_budget() && self.lag == 0 => Err(Error::Config(format!("{self}: budgeting terms need lag >= 1"))),
            _ => Ok(()),
        }
    }

    fn is_successor(&self) -> bool {
        self.kind == TermKind::SuccessorEntropy
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if self.kind == TermKind::Intercept {
            return Ok(());
        }
        if let Some(a) = self.alpha {
            write!(f, "[{a}]")?;
        }
        match (self.kind, self.lag) {
            (TermKind::SuccessorEntropy, _) => f.write_str("@t+1"),
            (_, 0) => f.write_str("@t"),
            (_, lag) => write!(f, "@t-{lag}"),
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse term {s:?}"));
        if s == "intercept" {
            return Ok(Term::intercept());
        }
        let (head, position) = s.split_once('@').ok_or_else(bad)?;
        let (name, alpha) = match head.split_once('[') {
            Some((name, rest)) => (name, Some(rest.strip_suffix(']').ok_or_else(bad)?.parse::<Alpha>()?)),
            None => (head, None),
        };
        let kind = TermKind::from_name(name).ok_or_else(bad)?;
        let lag = match position {
            "t" | "t+1" => 0,
            p => p.strip_prefix("t-").and_then(|l| l.parse().ok()).ok_or_else(bad)?,
        };
        if (position == "t+1") != (kind == TermKind::SuccessorEntropy) {
            return Err(bad());
        }
        let term = Term { kind, lag, alpha };
        term.validate()?;
        Ok(term)
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `x_cmn`: length and unigram log-probability at lags 0 through 3.
pub fn common_terms() -> Vec<Term> {
    (0..=MAX_LAG)
        .flat_map(|l| [Term::length(l), Term::unigram(l)])
        .collect()
}

/// `x_surp`: surprisal at lags 0 through 3, optionally skipping one lag.
pub fn surprisal_terms(except: Option<u8>) -> Vec<Term> {
    (0..=MAX_LAG)
        .filter(|&l| Some(l) != except)
        .map(Term::surprisal)
        .collect()
}

/// The four budgeting transforms of surprisal minus entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetTerms {
    pub delta: f64,
    pub under: f64,
    pub over: f64,
    pub abs: f64,
}

pub fn budget_terms(surprisal_bits: f64, entropy_bits: f64) -> BudgetTerms {
    let delta = surprisal_bits - entropy_bits;
    BudgetTerms {
        delta,
        under: delta.max(0.0),
        over: (-delta).max(0.0),
        abs: delta.abs(),
    }
}

/// What a matrix predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    /// Mean reading time across readers, in ms.
    ReadingTime,
    /// Fraction of readers who skipped the word.
    SkipRatio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<WordKey>,
    pub columns: Vec<Term>,
    /// Row-major, `rows.len() x columns.len()`.
    pub values: Vec<f64>,
    pub response: Vec<f64>,
    pub response_kind: Response,
    /// Candidate rows dropped because some term or the response was undefined.
    pub dropped: usize,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows()).map(move |i| self.values[i * self.n_cols() + j])
    }

    /// TSV with a leading `# {json}` line naming the columns and response.
    pub fn to_tsv(&self) -> String {
        let header = serde_json::json!({
            "columns": self.columns,
            "response": self.response_kind,
            "rows": self.n_rows(),
            "dropped": self.dropped,
        });
        let mut out = format!("# {header}\ntext_id\tword_index");
        for c in &self.columns {
            let _ = write!(out, "\t{c}");
        }
        out.push_str("\tresponse\n");
        for (i, key) in self.rows.iter().enumerate() {
            let _ = write!(out, "{}\t{}", key.text_id, key.word_index);
            for v in self.row(i) {
                let _ = write!(out, "\t{v}");
            }
            let _ = writeln!(out, "\t{}", self.response[i]);
        }
        out
    }
}

/// Every α that `terms` needs.
pub fn required_alphas<'a>(terms: impl IntoIterator<Item = &'a Term>) -> BTreeSet<Alpha> {
    terms.into_iter().filter_map(|t| t.alpha).collect()
}

struct TermContext<'a> {
    words: &'a [WordObservation],
    infos: &'a BTreeMap<WordKey, WordInfo>,
}

impl TermContext<'_> {
    fn value(&self, term: &Term, i: usize) -> Option<f64> {
        if term.kind == TermKind::Intercept {
            return Some(1.0);
        }
        let lagged = i.checked_sub(term.lag as usize)?;
        let w = &self.words[lagged];
        let info = || self.infos.get(&w.key());
        let entropy = |info: &WordInfo| info.entropy_bits.get(&term.alpha?).copied();
        let v = match term.kind {
            TermKind::Intercept => unreachable!(),
            TermKind::Length => w.length_chars as f64,
            TermKind::Unigram => w.unigram_logprob?,
            TermKind::Surprisal => info()?.surprisal_bits,
            TermKind::Entropy => entropy(info()?)?,
            TermKind::SuccessorEntropy => *info()?.successor_entropy_bits.as_ref()?.get(&term.alpha?)?,
            kind => {
                let info = info()?;
                let b = budget_terms(info.surprisal_bits, entropy(info)?);
                match kind {
                    TermKind::DeltaBudget => b.delta,
                    TermKind::UnderBudget => b.under,
                    TermKind::OverBudget => b.over,
                    _ => b.abs,
                }
            }
        };
        v.is_finite().then_some(v)
    }
}

/// Value of `term` for word `i` of a text, or `None` when undefined (lag
/// before the text start, missing information, non-finite value).
pub fn term_value(
    words: &[WordObservation],
    infos: &BTreeMap<WordKey, WordInfo>,
    term: &Term,
    i: usize,
) -> Option<f64> {
    TermContext { words, infos }.value(term, i)
}

fn response_value(w: &WordObservation, response: Response, policy: SkipPolicy) -> Option<f64> {
    match response {
        Response::ReadingTime => w.mean_rt_ms,
        Response::SkipRatio => {
            let annotated = w.measures.iter().any(|m| m.skipped.is_some());
            (policy != SkipPolicy::NotApplicable && annotated).then_some(w.skip_ratio)
        }
    }
}

fn check_alphas(terms: &[Term], infos: &BTreeMap<WordKey, WordInfo>) -> Result<()> {
    let available: BTreeSet<Alpha> = infos
        .values()
        .next()
        .map(|i| i.entropy_bits.keys().copied().collect())
        .unwrap_or_default();
    if infos.is_empty() {
        return Ok(());
    }
    let missing: Vec<String> = required_alphas(terms)
        .difference(&available)
        .map(|a| a.to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "entropy not computed for alpha in {{{}}}",
            missing.join(", ")
        )))
    }
}

/// Row keys usable by every term in `row_terms`.
///
/// Drops the first [`MAX_LAG`] words of each text, the last word when a
/// successor term is present, words without a response, and words where any
/// term is undefined or non-finite.
fn eligible_rows(
    corpus: &Corpus,
    infos: &BTreeMap<WordKey, WordInfo>,
    row_terms: &[Term],
    response: Response,
) -> (Vec<(usize, usize)>, usize) {
    let successor = row_terms.iter().any(Term::is_successor);
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (t, text) in corpus.texts.iter().enumerate() {
        let ctx = TermContext {
            words: &text.words,
            infos,
        };
        let n = text.words.len();
        for i in (MAX_LAG as usize).min(n)..n {
            if successor && i + 1 == n {
                continue;
            }
            let ok = response_value(&text.words[i], response, corpus.policy).is_some()
                && row_terms.iter().all(|term| ctx.value(term, i).is_some());
            if ok {
                rows.push((t, i));
            } else {
                dropped += 1;
            }
        }
    }
    (rows, dropped)
}

fn with_intercept(spec: &[Term]) -> Vec<Term> {
    let mut columns = vec![Term::intercept()];
    columns.extend(spec.iter().copied().filter(|t| t.kind != TermKind::Intercept));
    columns
}

fn assemble(
    corpus: &Corpus,
    infos: &BTreeMap<WordKey, WordInfo>,
    columns: Vec<Term>,
    rows: &[(usize, usize)],
    dropped: usize,
    response: Response,
) -> FeatureMatrix {
    let mut values = Vec::with_capacity(rows.len() * columns.len());
    let mut keys = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for &(t, i) in rows {
        let text = &corpus.texts[t];
        let ctx = TermContext {
            words: &text.words,
            infos,
        };
        for term in &columns {
            values.push(ctx.value(term, i).expect("eligible row lacks a term"));
        }
        keys.push(text.words[i].key());
        ys.push(response_value(&text.words[i], response, corpus.policy).unwrap());
    }
    FeatureMatrix {
        rows: keys,
        columns,
        values,
        response: ys,
        response_kind: response,
        dropped,
    }
}

fn validate_spec(spec: &[Term], infos: &BTreeMap<WordKey, WordInfo>) -> Result<()> {
    if spec.is_empty() {
        return Err(Error::Config("predictor specification is empty".into()));
    }
    for t in spec {
        t.validate()?;
    }
    check_alphas(spec, infos)
}

/// Builds the design matrix for `spec`; an intercept column is always first.
pub fn build_matrix(
    corpus: &Corpus,
    infos: &BTreeMap<WordKey, WordInfo>,
    spec: &[Term],
    response: Response,
) -> Result<FeatureMatrix> {
    validate_spec(spec, infos)?;
    let columns = with_intercept(spec);
    let (rows, dropped) = eligible_rows(corpus, infos, &columns, response);
    if dropped > 0 {
        log::info!("dropped {dropped} rows with undefined predictors or response");
    }
    Ok(assemble(corpus, infos, columns, &rows, dropped, response))
}

/// Builds target and baseline matrices over the same rows: the rows usable by
/// the union of both term lists.
pub fn build_pair(
    corpus: &Corpus,
    infos: &BTreeMap<WordKey, WordInfo>,
    target: &[Term],
    baseline: &[Term],
    response: Response,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    validate_spec(target, infos)?;
    validate_spec(baseline, infos)?;
    let target_cols = with_intercept(target);
    let baseline_cols = with_intercept(baseline);
    let union: Vec<Term> = target_cols
        .iter()
        .chain(&baseline_cols)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (rows, dropped) = eligible_rows(corpus, infos, &union, response);
    Ok((
        assemble(corpus, infos, target_cols, &rows, dropped, response),
        assemble(corpus, infos, baseline_cols, &rows, dropped, response),
    ))
}
