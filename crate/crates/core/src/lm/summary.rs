//! SUMMARY TSV: per-position surprisal and Rényi entropies instead of full
//! distributions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Prediction, SubwordPosition};
use crate::error::{Error, Result};
use crate::infotheory::{position_surprisal, renyi_from_ln, Alpha};

const FIXED_COLUMNS: [&str; 4] = ["text_id", "word_index", "subword_index", "surprisal_bits"];
const MONOTONICITY_SLACK: f64 = 1e-9;

fn parse_alpha_column(name: &str) -> Option<Alpha> {
    name.strip_prefix("renyi_")?.strip_suffix("_bits")?.parse().ok()
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<(Vec<SubwordPosition>, Vec<Alpha>)> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.clone(),
        line,
        message,
    };

    let mut lines = content.lines().enumerate();
    let header = lines.next().ok_or_else(|| perr(1, "missing header".into()))?.1;
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    if cols.len() < 4 || cols[..4] != FIXED_COLUMNS {
        return Err(perr(
            1,
            format!("expected header starting with {:?}", FIXED_COLUMNS.join("\t")),
        ));
    }
    let alphas = cols[4..]
        .iter()
        .map(|c| parse_alpha_column(c).ok_or_else(|| perr(1, format!("bad Rényi column {c:?}"))))
        .collect::<Result<Vec<Alpha>>>()?;
    for pair in alphas.windows(2) {
        if pair[0] >= pair[1] {
            return Err(perr(1, "Rényi columns must appear in increasing order of alpha".into()));
        }
    }

    let mut positions = Vec::new();
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(perr(
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let int = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| perr(lineno, format!("bad integer {s:?}")))
        };
        let real = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| perr(lineno, format!("bad number {s:?}")))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Format(format!(
                    "line {lineno}: value {v} must be finite and >= 0"
                )));
            }
            Ok(v)
        };
        let text_id = int(fields[0])? as u32;
        let word_index = int(fields[1])? as u32;
        let subword_index = int(fields[2])? as u16;
        let surprisal_bits = real(fields[3])?;
        let mut renyi_bits = BTreeMap::new();
        let mut prev = f64::INFINITY;
        for (a, f) in alphas.iter().zip(&fields[4..]) {
            let h = real(f)?;
            if h > prev + MONOTONICITY_SLACK {
                return Err(Error::Format(format!(
                    "line {lineno}: Rényi entropies increase with alpha (violates monotonicity)"
                )));
            }
            prev = h;
            renyi_bits.insert(*a, h);
        }
        positions.push(SubwordPosition {
            text_id,
            word_index,
            subword_index,
            realized_id: 0,
            prediction: Prediction::Summary {
                surprisal_bits,
                renyi_bits,
            },
        });
    }
    Ok((positions, alphas))
}

/// Reduces full-distribution positions to summaries over `alphas`.
pub fn summarize_positions(positions: &[SubwordPosition], alphas: &[Alpha]) -> Result<Vec<SubwordPosition>> {
    positions
        .iter()
        .map(|p| {
            let (surprisal_bits, renyi_bits) = match &p.prediction {
                Prediction::Full(lp) => (
                    position_surprisal(p)?,
                    alphas
                        .iter()
                        .map(|&a| (a, renyi_from_ln(lp.iter().copied(), a)))
                        .collect(),
                ),
                Prediction::Summary { .. } => return Ok(p.clone()),
            };
            Ok(SubwordPosition {
                prediction: Prediction::Summary {
                    surprisal_bits,
                    renyi_bits,
                },
                ..p.clone()
            })
        })
        .collect()
}

pub fn write_summary(path: impl AsRef<Path>, positions: &[SubwordPosition], alphas: &[Alpha]) -> Result<()> {
    let path = path.as_ref();
    let mut sorted = alphas.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out = FIXED_COLUMNS.join("\t");
    for a in &sorted {
        let _ = write!(out, "\trenyi_{a}_bits");
    }
    out.push('\n');
    for p in summarize_positions(positions, &sorted)? {
        let Prediction::Summary {
            surprisal_bits,
            renyi_bits,
        } = &p.prediction
        else {
            unreachable!()
        };
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            p.text_id, p.word_index, p.subword_index, surprisal_bits
        );
        for a in &sorted {
            let h = renyi_bits
                .get(a)
                .ok_or_else(|| Error::Config(format!("summary position lacks alpha = {a}")))?;
            let _ = write!(out, "\t{h}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
