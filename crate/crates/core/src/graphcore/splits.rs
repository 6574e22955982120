use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub splits: Vec<Split>,
    pub seed: u64,
}

/// Random 60/20/20 partitions. Validation and test sizes are `floor(0.2 n)`;
/// the remainder goes to training.
pub fn make_splits(n: usize, n_splits: usize, seed: u64) -> Result<SplitSet> {
    if n < 5 {
        return Err(Error::InvalidArgument(format!("need at least 5 nodes to split, got {n}")));
    }
    let n_val = n / 5;
    let n_test = n / 5;
    let n_train = n - n_val - n_test;
    let splits = (0..n_splits)
        .map(|k| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seed::rng(seed::derive_indexed(seed, "split", k as u64)));
            Split {
                train: perm[..n_train].to_vec(),
                val: perm[n_train..n_train + n_val].to_vec(),
                test: perm[n_train + n_val..].to_vec(),
            }
        })
        .collect();
    Ok(SplitSet { splits, seed })
}
