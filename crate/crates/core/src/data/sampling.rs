use rand::Rng;

use super::{Interactions, RngStream};
use crate::error::{Error, Result};

/// Draws `n_u` tuples uniformly from the complement of the positive set,
/// with replacement, by rejection against the positives.
pub fn sample_unlabeled(
    data: &Interactions,
    n_u: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    if data.num_unobserved() == 0 {
        return Err(Error::Precondition(
            "interaction matrix is dense: no unlabeled tuple to sample".into(),
        ));
    }
    let (m, n) = (data.num_users(), data.num_items());
    let mut out = Vec::with_capacity(n_u);
    while out.len() < n_u {
        let u = rng.random_range(0..m);
        let i = rng.random_range(0..n);
        if !data.contains(u, i) {
            out.push((u, i));
        }
    }
    Ok(out)
}

/// Candidate items for ranking `user` under sampled evaluation: the user's
/// test positives plus `pool_size` distinct items drawn uniformly from those
/// the user has neither in train nor in test.
///
/// `pool_size` may not exceed `N - |train positives of user|`. When it also
/// exceeds the number of remaining non-positive items, all of them are taken,
/// which makes the pool equal to the full-protocol candidate set.
pub fn build_candidate_pool(
    train: &Interactions,
    test: &Interactions,
    user: usize,
    pool_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let n = train.num_items();
    let seen = train.user_items(user);
    if pool_size > n - seen.len() {
        return Err(Error::Precondition(format!(
            "pool size {pool_size} exceeds the {} items user {user} has not interacted with",
            n - seen.len()
        )));
    }
    let relevant = test.user_items(user);
    let available: Vec<usize> = (0..n)
        .filter(|i| seen.binary_search(i).is_err() && relevant.binary_search(i).is_err())
        .collect();
    let take = pool_size.min(available.len());
    let mut pool = relevant.to_vec();
    pool.extend(
        rand::seq::index::sample(rng, available.len(), take)
            .into_iter()
            .map(|k| available[k]),
    );
    Ok(pool)
}
