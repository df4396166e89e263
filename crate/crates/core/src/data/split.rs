use rand::seq::SliceRandom;

use super::{Interactions, RngStream};
use crate::error::{Error, Result};

/// Disjoint train/test partition over a shared `M x N` universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Interactions,
    pub test: Interactions,
    pub seed: u64,
}

impl DatasetSplit {
    /// Checks disjointness, shared shape and that every test user has a
    /// training positive.
    pub fn validate(&self) -> Result<()> {
        if self.train.num_users() != self.test.num_users()
            || self.train.num_items() != self.test.num_items()
        {
            return Err(Error::Precondition("train/test shapes differ".into()));
        }
        for u in 0..self.test.num_users() {
            if self.test.user_count(u) > 0 && self.train.user_count(u) == 0 {
                return Err(Error::Precondition(format!(
                    "test user {u} has no training positive"
                )));
            }
            for &i in self.test.user_items(u) {
                if self.train.contains(u, i) {
                    return Err(Error::Precondition(format!(
                        "tuple ({u}, {i}) in both train and test"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Users with at least one test positive.
    pub fn test_users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.test.num_users()).filter(|&u| self.test.user_count(u) > 0)
    }
}

/// Drops users with fewer than `min_count` positives and re-densifies the
/// user index. The item universe is untouched.
pub fn filter_min_interactions(data: &Interactions, min_count: usize) -> Result<Interactions> {
    if min_count == 0 {
        return Ok(data.clone());
    }
    let kept: Vec<usize> = (0..data.num_users())
        .filter(|&u| data.user_count(u) >= min_count)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no user has at least {min_count} positives"
        )));
    }
    let pairs = kept
        .iter()
        .enumerate()
        .flat_map(|(new_u, &u)| data.user_items(u).iter().map(move |&i| (new_u, i)));
    Interactions::from_pairs(kept.len(), data.num_items(), pairs)
}

/// Shuffles the positive tuples and sends `round(train_fraction * |positives|)`
/// of them to train, the rest to test. A user left without any training
/// positive gets one of its test tuples promoted back to train.
pub fn split_random(
    data: &Interactions,
    train_fraction: f64,
    rng: &mut RngStream,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut tuples: Vec<(usize, usize)> = data.positives().collect();
    tuples.shuffle(rng);
    let n_train = (train_fraction * tuples.len() as f64).round() as usize;
    let test_part = tuples.split_off(n_train);
    let mut train_pairs = tuples;

    let mut has_train = vec![false; data.num_users()];
    for &(u, _) in &train_pairs {
        has_train[u] = true;
    }
    let mut test_pairs = Vec::with_capacity(test_part.len());
    for (u, i) in test_part {
        if !has_train[u] {
            has_train[u] = true;
            train_pairs.push((u, i));
        } else {
            test_pairs.push((u, i));
        }
    }

    let split = DatasetSplit {
        train: Interactions::from_pairs(data.num_users(), data.num_items(), train_pairs)?,
        test: Interactions::from_pairs(data.num_users(), data.num_items(), test_pairs)?,
        seed: rng.seed(),
    };
    debug_assert!(split.validate().is_ok());
    Ok(split)
}

/// Moves exactly `n` random positives of every user into test.
pub fn split_leave_n_out(
    data: &Interactions,
    n: usize,
    rng: &mut RngStream,
) -> Result<DatasetSplit> {
    let mut train_pairs = Vec::with_capacity(data.num_positives());
    let mut test_pairs = Vec::with_capacity(n * data.num_users());
    for u in 0..data.num_users() {
        let row = data.user_items(u);
        if n > 0 && row.len() <= n {
            return Err(Error::Precondition(format!(
                "user {u} has {} positives, leave-{n}-out needs more than {n}",
                row.len()
            )));
        }
        let mut row = row.to_vec();
        row.shuffle(rng);
        let (test, train) = row.split_at(n);
        test_pairs.extend(test.iter().map(|&i| (u, i)));
        train_pairs.extend(train.iter().map(|&i| (u, i)));
    }
    Ok(DatasetSplit {
        train: Interactions::from_pairs(data.num_users(), data.num_items(), train_pairs)?,
        test: Interactions::from_pairs(data.num_users(), data.num_items(), test_pairs)?,
        seed: rng.seed(),
    })
}
