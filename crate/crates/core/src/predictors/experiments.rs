//! Target/baseline term lists for each experiment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{common_terms, surprisal_terms, Response, Term, TermKind, MAX_LAG};
use crate::error::{Error, Result};
use crate::infotheory::Alpha;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    /// Drop one surprisal lag at a time.
    Exp1,
    /// Replace a surprisal lag by entropy, and add entropy at each lag.
    Exp2,
    Exp2Add,
    Exp2Replace,
    /// Logistic skip-ratio models.
    Exp4,
    /// Budgeting terms over an entropy-augmented baseline.
    Exp5,
    /// Current vs successor entropy.
    Exp6,
    /// Surprisal, entropy, or both over the spillover-only baseline, per α.
    Sweep,
}

/// An experiment id plus the Rényi order its entropy terms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Experiment {
    pub kind: ExperimentKind,
    pub alpha: Alpha,
}

impl Experiment {
    pub fn new(kind: ExperimentKind, alpha: Alpha) -> Self {
        Experiment { kind, alpha }
    }

    /// Whether the experiment's terms depend on α at all.
    pub fn uses_alpha(&self) -> bool {
        self.kind != ExperimentKind::Exp1
    }

    pub fn response(&self) -> Response {
        match self.kind {
            ExperimentKind::Exp4 => Response::SkipRatio,
            _ => Response::ReadingTime,
        }
    }

    fn base_name(&self) -> &'static str {
        match self.kind {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::Exp2Add => "exp2-add",
            ExperimentKind::Exp2Replace => "exp2-replace",
            ExperimentKind::Exp4 => "exp4",
            ExperimentKind::Exp5 => "exp5",
            ExperimentKind::Exp6 => "exp6",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.uses_alpha() {
            write!(f, "{}:{}", self.base_name(), self.alpha)
        } else {
            f.write_str(self.base_name())
        }
    }
}

/// Parses `exp1`, `exp2`, `exp2-add`, `exp2-replace`, `exp3` (`exp2` at α = ½),
/// `exp4`, `exp5`, `exp6`, `sweep`, with an optional `:alpha` suffix.
impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, alpha) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<Alpha>()?)),
            None => (s, None),
        };
        let (kind, default_alpha) = match name {
            "exp1" => (ExperimentKind::Exp1, Alpha::SHANNON),
            "exp2" => (ExperimentKind::Exp2, Alpha::SHANNON),
            "exp2-add" => (ExperimentKind::Exp2Add, Alpha::SHANNON),
            "exp2-replace" => (ExperimentKind::Exp2Replace, Alpha::SHANNON),
            "exp3" => (ExperimentKind::Exp2, Alpha::HALF),
            "exp3-add" => (ExperimentKind::Exp2Add, Alpha::HALF),
            "exp3-replace" => (ExperimentKind::Exp2Replace, Alpha::HALF),
            "exp4" => (ExperimentKind::Exp4, Alpha::SHANNON),
            "exp5" => (ExperimentKind::Exp5, Alpha::SHANNON),
            "exp6" => (ExperimentKind::Exp6, Alpha::SHANNON),
            "sweep" => (ExperimentKind::Sweep, Alpha::SHANNON),
            other => return Err(Error::Config(format!("unknown experiment {other:?}"))),
        };
        Ok(Experiment::new(kind, alpha.unwrap_or(default_alpha)))
    }
}

impl Serialize for Experiment {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Experiment {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// One cell of an experiment's table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecPair {
    /// Column group, e.g. `add`, `replace`, `delta_budget`.
    pub group: String,
    /// Cell within the group, e.g. `t-1` or a baseline name.
    pub cell: String,
    pub lag: Option<u8>,
    pub target: Vec<Term>,
    pub baseline: Vec<Term>,
    pub response: Response,
}

impl SpecPair {
    pub fn label(&self) -> String {
        format!("{}/{}", self.group, self.cell)
    }
}

fn lag_name(lag: u8) -> String {
    if lag == 0 {
        "t".into()
    } else {
        format!("t-{lag}")
    }
}

fn concat(parts: &[&[Term]]) -> Vec<Term> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn pair(
    group: &str,
    cell: String,
    lag: Option<u8>,
    target: Vec<Term>,
    baseline: Vec<Term>,
    response: Response,
) -> SpecPair {
    SpecPair {
        group: group.into(),
        cell,
        lag,
        target,
        baseline,
        response,
    }
}

fn lag_pairs(group: &str, alpha: Alpha, replace: bool) -> Vec<SpecPair> {
    let cmn = common_terms();
    let baseline = concat(&[&cmn, &surprisal_terms(None)]);
    (0..=MAX_LAG)
        .map(|lag| {
            let surp = if replace {
                surprisal_terms(Some(lag))
            } else {
                surprisal_terms(None)
            };
            let target = concat(&[&cmn, &surp, &[Term::entropy(lag, alpha)]]);
            pair(
                group,
                lag_name(lag),
                Some(lag),
                target,
                baseline.clone(),
                Response::ReadingTime,
            )
        })
        .collect()
}

/// Enumerates the target/baseline pairs of an experiment.
pub fn experiment_pairs(experiment: &Experiment) -> Vec<SpecPair> {
    let alpha = experiment.alpha;
    let cmn = common_terms();
    let surp = surprisal_terms(None);
    let spill = surprisal_terms(Some(0));
    let h_t = Term::surprisal(0);
    let ent_t = Term::entropy(0, alpha);
    let ent_next = Term::successor_entropy(alpha);
    let rt = Response::ReadingTime;

    match experiment.kind {
        ExperimentKind::Exp1 => (0..=MAX_LAG)
            .map(|lag| {
                pair(
                    "surprisal",
                    lag_name(lag),
                    Some(lag),
                    concat(&[&cmn, &surp]),
                    concat(&[&cmn, &surprisal_terms(Some(lag))]),
                    rt,
                )
            })
            .collect(),
        ExperimentKind::Exp2 => {
            let mut pairs = lag_pairs("replace", alpha, true);
            pairs.extend(lag_pairs("add", alpha, false));
            pairs
        }
        ExperimentKind::Exp2Add => lag_pairs("add", alpha, false),
        ExperimentKind::Exp2Replace => lag_pairs("replace", alpha, true),
        ExperimentKind::Exp4 | ExperimentKind::Sweep => {
            let response = experiment.response();
            let none = concat(&[&cmn, &spill]);
            let with_h = concat(&[&none, &[h_t]]);
            let with_ent = concat(&[&none, &[ent_t]]);
            let both = concat(&[&none, &[h_t, ent_t]]);
            let mut pairs = vec![
                pair(
                    "none",
                    "surprisal".into(),
                    Some(0),
                    with_h.clone(),
                    none.clone(),
                    response,
                ),
                pair(
                    "none",
                    "entropy".into(),
                    Some(0),
                    with_ent.clone(),
                    none.clone(),
                    response,
                ),
                pair("none", "both".into(), Some(0), both.clone(), none, response),
            ];
            if experiment.kind == ExperimentKind::Exp4 {
                pairs.extend([
                    pair(
                        "surprisal",
                        "entropy".into(),
                        Some(0),
                        with_ent.clone(),
                        with_h.clone(),
                        response,
                    ),
                    pair("surprisal", "both".into(), Some(0), both.clone(), with_h, response),
                    pair("entropy", "both".into(), Some(0), both, with_ent, response),
                ]);
            }
            pairs
        }
        ExperimentKind::Exp5 => {
            let baseline = concat(&[&cmn, &surp, &[ent_t]]);
            [
                TermKind::DeltaBudget,
                TermKind::OverBudget,
                TermKind::UnderBudget,
                TermKind::AbsBudget,
            ]
            .into_iter()
            .flat_map(|kind| {
                let baseline = baseline.clone();
                (1..=MAX_LAG).map(move |lag| {
                    let name = match kind {
                        TermKind::DeltaBudget => "delta_budget",
                        TermKind::OverBudget => "over_budget",
                        TermKind::UnderBudget => "under_budget",
                        _ => "abs_budget",
                    };
                    let target = concat(&[&baseline, &[Term::budget(kind, lag, alpha)]]);
                    pair(name, lag_name(lag), Some(lag), target, baseline.clone(), rt)
                })
            })
            .collect()
        }
        ExperimentKind::Exp6 => {
            let base = concat(&[&cmn, &surp]);
            let base_next = concat(&[&base, &[ent_next]]);
            let base_cur = concat(&[&base, &[ent_t]]);
            vec![
                pair(
                    "entropy",
                    "none".into(),
                    Some(0),
                    concat(&[&base, &[ent_t]]),
                    base.clone(),
                    rt,
                ),
                pair(
                    "entropy",
                    "successor_entropy".into(),
                    Some(0),
                    concat(&[&base_next, &[ent_t]]),
                    base_next,
                    rt,
                ),
                pair(
                    "successor_entropy",
                    "none".into(),
                    None,
                    concat(&[&base, &[ent_next]]),
                    base,
                    rt,
                ),
                pair(
                    "successor_entropy",
                    "entropy".into(),
                    None,
                    concat(&[&base_cur, &[ent_next]]),
                    base_cur,
                    rt,
                ),
            ]
        }
    }
}
