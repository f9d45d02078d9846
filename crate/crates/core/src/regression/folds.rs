use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 10;

/// Assignment of rows to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `assignment[row]` is the row's fold.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// Uniformly random partition of `n` rows into `k` folds whose sizes differ
    /// by at most one. A pure function of `(seed, n, k)`.
    pub fn random(seed: u64, n: usize, k: usize) -> Result<Self> {
        check(n, k)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            assignment[row] = pos % k;
        }
        Ok(FoldPlan { k, seed, assignment })
    }

    /// Keeps every group (e.g. a text) within one fold. Groups are shuffled and
    /// dealt greedily to the currently smallest fold.
    pub fn grouped(seed: u64, groups: &[u32], k: usize) -> Result<Self> {
        check(groups.len(), k)?;
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for g in groups {
            *sizes.entry(*g).or_insert(0) += 1;
        }
        if sizes.len() < k {
            return Err(Error::Validation(format!(
                "{} groups cannot fill {k} folds",
                sizes.len()
            )));
        }
        let mut ids: Vec<u32> = sizes.keys().copied().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut load = vec![0usize; k];
        let mut fold_of: BTreeMap<u32, usize> = BTreeMap::new();
        for g in ids {
            let fold = (0..k).min_by_key(|&f| (load[f], f)).unwrap();
            load[fold] += sizes[&g];
            fold_of.insert(g, fold);
        }
        Ok(FoldPlan {
            k,
            seed,
            assignment: groups.iter().map(|g| fold_of[g]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

fn check(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Validation(format!("{n} rows cannot fill {k} folds")));
    }
    Ok(())
}
