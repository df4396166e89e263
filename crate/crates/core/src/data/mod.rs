//! Implicit-feedback interaction data: ingestion, splitting and sampling.

mod io;
mod rng;
mod sampling;
mod split;

pub use io::{
    binarize, load_presplit, load_ratings, read_ratings, read_split, write_split, Rating,
    RatingFormat,
};
pub use rng::{RngStream, StreamLabel};
pub use sampling::{build_candidate_pool, sample_unlabeled};
pub use split::{filter_min_interactions, split_leave_n_out, split_random, DatasetSplit};

use crate::error::{Error, Result};

/// Sparse binary user-item matrix.
///
/// Stored row-compressed: the items of user `u` are
/// `items[offsets[u]..offsets[u + 1]]`, sorted ascending and distinct. The
/// positive set is exactly the concatenation of those rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    num_users: usize,
    num_items: usize,
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Interactions {
    /// Builds the matrix from `(user, item)` tuples. Duplicates collapse.
    pub fn from_pairs<I>(num_users: usize, num_items: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        for &(u, i) in &pairs {
            if u >= num_users {
                return Err(Error::Precondition(format!(
                    "user index {u} out of range (num_users = {num_users})"
                )));
            }
            if i >= num_items {
                return Err(Error::UnknownItem { item: i, num_items });
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut offsets = vec![0; num_users + 1];
        for &(u, _) in &pairs {
            offsets[u + 1] += 1;
        }
        for u in 0..num_users {
            offsets[u + 1] += offsets[u];
        }
        let items = pairs.into_iter().map(|(_, i)| i).collect();
        Ok(Interactions {
            num_users,
            num_items,
            offsets,
            items,
        })
    }

    /// Matrix with the same shape and no positives.
    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Interactions {
            num_users,
            num_items,
            offsets: vec![0; num_users + 1],
            items: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Number of positive tuples, `n_p`.
    pub fn num_positives(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Sorted positive items of `user`.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.items[self.offsets[user]..self.offsets[user + 1]]
    }

    pub fn user_count(&self, user: usize) -> usize {
        self.offsets[user + 1] - self.offsets[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        user < self.num_users && self.user_items(user).binary_search(&item).is_ok()
    }

    /// Positive tuples in `(user, item)` order.
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| self.user_items(u).iter().map(move |&i| (u, i)))
    }

    /// The `k`-th positive tuple in `(user, item)` order.
    pub fn positive_at(&self, k: usize) -> (usize, usize) {
        let user = self.offsets.partition_point(|&o| o <= k) - 1;
        (user, self.items[k])
    }

    /// Per-item positive counts.
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_items];
        for &i in &self.items {
            counts[i] += 1;
        }
        counts
    }

    /// `|positives| / (M * N)`.
    pub fn density(&self) -> f64 {
        self.num_positives() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Number of cells outside the positive set.
    pub fn num_unobserved(&self) -> u128 {
        self.num_users as u128 * self.num_items as u128 - self.num_positives() as u128
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_collapse() {
        let r = Interactions::from_pairs(2, 3, vec![(0, 1), (0, 1), (1, 2), (0, 0)]).unwrap();
        assert_eq!(r.num_positives(), 3);
        assert_eq!(r.user_items(0), &[0, 1]);
        assert_eq!(r.user_items(1), &[2]);
        assert!(r.contains(1, 2));
        assert!(!r.contains(1, 0));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(Interactions::from_pairs(1, 1, vec![(1, 0)]).is_err());
        assert!(Interactions::from_pairs(1, 1, vec![(0, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn rows_round_trip(pairs in proptest::collection::vec((0usize..6, 0usize..9), 0..40)) {
            let r = Interactions::from_pairs(6, 9, pairs.clone()).unwrap();
            let rebuilt = Interactions::from_pairs(6, 9, r.positives()).unwrap();
            prop_assert_eq!(&r, &rebuilt);

            let mut expected = pairs;
            expected.sort_unstable();
            expected.dedup();
            let listed: Vec<_> = r.positives().collect();
            prop_assert_eq!(&listed, &expected);
            for (k, &p) in expected.iter().enumerate() {
                prop_assert_eq!(r.positive_at(k), p);
            }
        }
    }
}
