//! Model comparison: Δllh, paired sign-flip permutation tests,
//! Benjamini–Hochberg adjustment and Spearman correlation.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::WordKey;
use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
/// Largest N tested by full enumeration of sign assignments.
pub const EXHAUSTIVE_MAX_N: usize = 20;
pub const DEFAULT_FDR: f64 = 0.05;

/// Per-item differences `target - baseline`, checking both vectors score the
/// same rows in the same order.
pub fn paired_differences(
    target: &[f64],
    target_rows: &[WordKey],
    baseline: &[f64],
    baseline_rows: &[WordKey],
) -> Result<Vec<f64>> {
    if target.len() != target_rows.len() || baseline.len() != baseline_rows.len() {
        return Err(Error::Contract("llh vector and row list lengths differ".into()));
    }
    if target_rows != baseline_rows {
        let at = target_rows
            .iter()
            .zip(baseline_rows)
            .position(|(a, b)| a != b)
            .unwrap_or(target_rows.len().min(baseline_rows.len()));
        return Err(Error::Contract(format!(
            "unpaired comparison: row provenance differs at index {at} ({} vs {} rows)",
            target_rows.len(),
            baseline_rows.len()
        )));
    }
    Ok(target.iter().zip(baseline).map(|(t, b)| t - b).collect())
}

/// Mean per-item llh difference in nats.
pub fn delta_llh(target: &[f64], target_rows: &[WordKey], baseline: &[f64], baseline_rows: &[WordKey]) -> Result<f64> {
    let diffs = paired_differences(target, target_rows, baseline, baseline_rows)?;
    if diffs.is_empty() {
        return Err(Error::Validation("no items to compare".into()));
    }
    Ok(mean(&diffs))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// For each block of 8 items, the signed sum for every byte of sign bits
/// (bit set = keep the sign, clear = flip).
struct SignTables {
    blocks: Vec<[f64; 256]>,
}

impl SignTables {
    fn new(diffs: &[f64]) -> Self {
        let blocks = diffs
            .chunks(8)
            .map(|chunk| {
                let mut table = [0.0; 256];
                for (byte, slot) in table.iter_mut().enumerate() {
                    *slot = chunk
                        .iter()
                        .enumerate()
                        .map(|(i, d)| if byte >> i & 1 == 1 { *d } else { -*d })
                        .sum();
                }
                table
            })
            .collect();
        SignTables { blocks }
    }

    fn signed_sum(&self, bytes: impl Iterator<Item = u8>) -> f64 {
        self.blocks.iter().zip(bytes).map(|(t, b)| t[b as usize]).sum()
    }
}

/// Two-sided paired sign-flip test on the mean difference.
///
/// Exhaustive for `N <= 20` (`p = count / 2^N`), otherwise `B` Monte Carlo
/// resamples with `p = (1 + count) / (1 + B)`. Resample `b` draws its signs
/// from ChaCha stream `b` under `seed`, so the result does not depend on the
/// thread count.
pub fn paired_permutation_test(diffs: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    if diffs.len() < 2 {
        return Err(Error::Validation(format!(
            "permutation test needs N >= 2, got {}",
            diffs.len()
        )));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite llh difference".into()));
    }
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(1.0);
    }
    if diffs.len() <= EXHAUSTIVE_MAX_N {
        Ok(exhaustive_p(diffs))
    } else {
        monte_carlo_p(diffs, permutations, seed)
    }
}

fn threshold(diffs: &[f64], tables: &SignTables) -> f64 {
    let observed = tables.signed_sum(std::iter::repeat(0xFF)).abs();
    // Sums that equal the observed one up to rounding count as extreme.
    let scale: f64 = diffs.iter().map(|d| d.abs()).sum();
    observed - 1e-12 * scale
}

/// Enumerates every sign assignment.
pub fn exhaustive_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    assert!(
        n <= EXHAUSTIVE_MAX_N,
        "exhaustive enumeration limited to N <= {EXHAUSTIVE_MAX_N}"
    );
    let tables = SignTables::new(diffs);
    let limit = threshold(diffs, &tables);
    let total = 1u64 << n;
    let count = (0..total)
        .into_par_iter()
        .filter(|mask| tables.signed_sum(mask.to_le_bytes().into_iter()).abs() >= limit)
        .count();
    count as f64 / total as f64
}

/// Monte Carlo sign-flip p-value with `+1` smoothing.
pub fn monte_carlo_p(diffs: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    if permutations == 0 {
        return Err(Error::Config("permutation count must be positive".into()));
    }
    let tables = SignTables::new(diffs);
    let limit = threshold(diffs, &tables);
    let n_bytes = tables.blocks.len();
    let count: usize = (0..permutations as u64)
        .into_par_iter()
        .map_init(
            || vec![0u8; n_bytes],
            |buf, b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b);
                rng.fill_bytes(buf);
                usize::from(tables.signed_sum(buf.iter().copied()).abs() >= limit)
            },
        )
        .sum();
    Ok((1 + count) as f64 / (1 + permutations) as f64)
}

/// Benjamini–Hochberg step-up adjustment. Returns adjusted p-values in input
/// order and whether each hypothesis is rejected at level `q`.
pub fn bh_adjust(p_values: &[f64], q: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    if let Some(p) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Domain(format!("p-value {p} outside (0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * p_values[i] / (rank + 1) as f64);
        // m / j >= 1, so the adjusted value never drops below the raw one.
        adjusted[i] = running.min(1.0).max(p_values[i]);
    }
    let rejected = adjusted.iter().map(|&a| a <= q).collect();
    Ok((adjusted, rejected))
}

/// Ranks starting at 1; ties share their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation(
            "correlation needs two equal-length vectors of length >= 2".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain("correlation undefined for a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation(
            "correlation needs two equal-length vectors of length >= 2".into(),
        ));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    /// Significant improvement.
    Green,
    /// Significant degradation.
    Red,
    Ns,
}

impl Significance {
    pub fn classify(delta_llh: f64, rejected: bool) -> Self {
        match (rejected, delta_llh) {
            (true, d) if d > 0.0 => Significance::Green,
            (true, d) if d < 0.0 => Significance::Red,
            _ => Significance::Ns,
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Significance::Green => "green",
            Significance::Red => "red",
            Significance::Ns => "ns",
        })
    }
}

pub fn stars(p_adjusted: f64) -> &'static str {
    if p_adjusted <= 0.001 {
        "***"
    } else if p_adjusted <= 0.01 {
        "**"
    } else if p_adjusted <= 0.05 {
        "*"
    } else {
        ""
    }
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset: String,
    pub label: String,
    pub lag: Option<u8>,
    pub target: String,
    pub baseline: String,
    pub n_items: usize,
    pub delta_llh: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub significance: Significance,
    pub stars: String,
}

/// Inputs for one comparison before family-wise adjustment.
#[derive(Debug, Clone)]
pub struct PendingComparison {
    pub dataset: String,
    pub label: String,
    pub lag: Option<u8>,
    pub target: String,
    pub baseline: String,
    pub diffs: Vec<f64>,
    pub p_value: f64,
}

/// Adjusts one table's p-values together and classifies each row.
pub fn finalize_table(rows: Vec<PendingComparison>, q: f64) -> Result<Vec<ComparisonReport>> {
    let ps: Vec<f64> = rows.iter().map(|r| r.p_value).collect();
    let (adjusted, rejected) = bh_adjust(&ps, q)?;
    Ok(rows
        .into_iter()
        .zip(adjusted.into_iter().zip(rejected))
        .map(|(r, (p_adj, rej))| {
            let delta = mean(&r.diffs);
            ComparisonReport {
                n_items: r.diffs.len(),
                significance: Significance::classify(delta, rej),
                stars: stars(p_adj).to_string(),
                dataset: r.dataset,
                label: r.label,
                lag: r.lag,
                target: r.target,
                baseline: r.baseline,
                delta_llh: delta,
                p_value: r.p_value,
                p_adjusted: p_adj,
            }
        })
        .collect())
}

pub const REPORT_HEADER: &str =
    "dataset\tlabel\tlag\tdelta_llh_x100\tp_value\tp_adjusted\tstars\tcolor\tn_items\ttarget\tbaseline";

/// Table rows with Δllh in units of 10⁻² nats.
pub fn reports_to_tsv(reports: &[ComparisonReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}\n",
            r.dataset,
            r.label,
            r.lag.map_or("-".to_string(), |l| l.to_string()),
            r.delta_llh * 100.0,
            r.p_value,
            r.p_adjusted,
            if r.stars.is_empty() { "-" } else { &r.stars },
            r.significance,
            r.n_items,
            r.target,
            r.baseline
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn keys(n: u32) -> Vec<WordKey> {
        (0..n).map(|i| WordKey::new(1, i)).collect()
    }

    #[test]
    fn delta_examples() {
        let k = keys(3);
        let base = [0.1, 0.2, 0.3];
        assert_eq!(delta_llh(&base, &k, &base, &k).unwrap(), 0.0);
        let shifted: Vec<f64> = base.iter().map(|b| b + 0.01).collect();
        assert_abs_diff_eq!(delta_llh(&shifted, &k, &base, &k).unwrap(), 0.01, epsilon = 1e-15);
        let d = delta_llh(&[0.02, -0.01, 0.02], &k, &[0.0; 3], &k).unwrap();
        assert_abs_diff_eq!(d, 0.01, epsilon = 1e-15);
        let other: Vec<WordKey> = (0..3).map(|i| WordKey::new(2, i)).collect();
        assert!(matches!(delta_llh(&base, &k, &base, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn permutation_examples() {
        assert_eq!(paired_permutation_test(&[1.0, 1.0, 1.0], 100, 0).unwrap(), 0.25);
        assert_eq!(paired_permutation_test(&[0.0, 0.0, 0.0], 100, 0).unwrap(), 1.0);
        assert!(paired_permutation_test(&[1.0], 100, 0).is_err());
    }

    #[test]
    fn monte_carlo_is_seed_reproducible() {
        let diffs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 / 10.0 - 0.4).collect();
        let a = paired_permutation_test(&diffs, 2000, 7).unwrap();
        let b = paired_permutation_test(&diffs, 2000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn bh_examples() {
        let (adj, rej) = bh_adjust(&[0.001, 0.008, 0.039, 0.041, 0.042, 0.06], 0.05).unwrap();
        assert_eq!(rej, vec![true, true, false, false, false, false]);
        assert_abs_diff_eq!(adj[0], 0.006, epsilon = 1e-15);
        assert_abs_diff_eq!(adj[1], 0.024, epsilon = 1e-15);
        let (_, rej) = bh_adjust(&[0.01, 0.02, 0.03, 0.04], 0.05).unwrap();
        assert_eq!(rej, vec![true; 4]);
        let (adj, rej) = bh_adjust(&[0.03], 0.05).unwrap();
        assert_eq!((adj, rej), (vec![0.03], vec![true]));
        assert_eq!(bh_adjust(&[], 0.05).unwrap(), (vec![], vec![]));
        assert!(bh_adjust(&[0.0], 0.05).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let x = [0.3, -1.0, 2.5, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 7.0).collect();
        assert_abs_diff_eq!(spearman(&x, &y).unwrap(), 1.0);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Domain(_))));
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn classification_and_stars() {
        let rows = vec![
            PendingComparison {
                dataset: "d".into(),
                label: "a".into(),
                lag: Some(0),
                target: "t".into(),
                baseline: "b".into(),
                diffs: vec![0.1, 0.2],
                p_value: 0.0005,
            },
            PendingComparison {
                dataset: "d".into(),
                label: "b".into(),
                lag: None,
                target: "t".into(),
                baseline: "b".into(),
                diffs: vec![-0.1, -0.2],
                p_value: 0.004,
            },
        ];
        let out = finalize_table(rows, 0.05).unwrap();
        assert_eq!(out[0].significance, Significance::Green);
        assert_eq!(out[0].stars, "***");
        assert_eq!(out[1].significance, Significance::Red);
        assert_eq!(out[1].stars, "**");
        let tsv = reports_to_tsv(&out);
        assert!(tsv.lines().nth(1).unwrap().starts_with("d\ta\t0\t15.0000"));
    }

    proptest! {
        #[test]
        fn adjusted_never_below_raw(ps in proptest::collection::vec(1e-6f64..=1.0, 1..30)) {
            let (adj, _) = bh_adjust(&ps, 0.05).unwrap();
            for (a, p) in adj.iter().zip(&ps) {
                prop_assert!(a >= p && *a <= 1.0);
            }
        }

        #[test]
        fn exhaustive_p_ignores_item_order(d in proptest::collection::vec(-1.0f64..1.0, 2..12), rot in 0usize..12) {
            let mut r = d.clone();
            r.rotate_left(rot % d.len());
            r.reverse();
            prop_assert_eq!(exhaustive_p(&d), exhaustive_p(&r));
        }

        #[test]
        fn spearman_monotone_invariance(x in proptest::collection::vec(-5.0f64..5.0, 3..20), y in proptest::collection::vec(-5.0f64..5.0, 3..20)) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            if let Ok(rho) = spearman(x, y) {
                let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                prop_assert!((spearman(&tx, y).unwrap() - rho).abs() < 1e-12);
            }
        }
    }
}
