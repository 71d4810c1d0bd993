use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the non-test ids used for training; the rest validate.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iteration {
    pub test_fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KFold {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
    pub iterations: Vec<Iteration>,
}

impl KFold {
    pub fn fold_sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }
}

/// Shuffles `ids` with a ChaCha8 stream seeded by `seed` and deals them into
/// `k` contiguous folds, the first `n mod k` one larger. Iteration `i` tests
/// on fold `i`; the other folds, in fold order, are cut into train (first
/// 80%, rounded) and validation.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<KFold> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::InvalidInput(format!("{} ids cannot fill {k} folds", ids.len())));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::InvalidInput(format!("duplicate id {dup:?}")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(shuffled[start..start + len].to_vec());
        start += len;
    }

    let iterations = (0..k)
        .map(|i| {
            let rest: Vec<String> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, f)| f.iter().cloned())
                .collect();
            let n_train = (rest.len() as f64 * TRAIN_FRACTION).round() as usize;
            Iteration {
                test_fold: i,
                train: rest[..n_train].to_vec(),
                val: rest[n_train..].to_vec(),
                test: folds[i].clone(),
            }
        })
        .collect();
    Ok(KFold { k, seed, folds, iterations })
}
