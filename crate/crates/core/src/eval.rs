//! Top-k ranking evaluation.
//!
//! Conventions: positions are 1-based, DCG uses `log2(j + 1)`, MAP is taken
//! over the whole ranked candidate list, and users with no relevant item among
//! their candidates are skipped rather than scored as zero. Candidates with
//! equal scores are ordered by ascending item index.

use std::collections::BTreeMap;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_candidate_pool, DatasetSplit, Interactions, RngStream, StreamLabel};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, DiscriminatorParams, ModelKind, Relation};
use crate::training::TrainedModel;

/// Cut-offs reported for P@k and NDCG@k.
pub const CUTOFFS: [usize; 3] = [3, 5, 10];

/// Anything that assigns a real score to `(user, item)`; higher ranks first.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;

    /// Scores of `items` for `user`, in the same order.
    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>>;
}

impl Scorer for DiscriminatorParams {
    fn num_items(&self) -> usize {
        self.item_embeddings.nrows()
    }

    /// Logits rather than probabilities: same order, no saturation ties.
    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        if user >= self.num_users() {
            return Err(Error::Precondition(format!(
                "user {user} out of range ({} users)",
                self.num_users()
            )));
        }
        let e_u = self.user_embeddings.row(user);
        let projected: Array1<f64> = match &self.relation {
            Relation::Vector(r) => &e_u * r,
            Relation::Matrix(m) => m.t().dot(&e_u),
        };
        items
            .iter()
            .map(|&i| {
                if i >= self.num_items() {
                    return Err(Error::UnknownItem {
                        item: i,
                        num_items: self.num_items(),
                    });
                }
                Ok(projected.dot(&self.item_embeddings.row(i)))
            })
            .collect()
    }
}

/// Scores every item by its training popularity.
#[derive(Debug, Clone, Copy)]
pub struct Popularity<'a>(pub &'a [u64]);

impl Scorer for Popularity<'_> {
    fn num_items(&self) -> usize {
        self.0.len()
    }

    fn score_items(&self, _user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items
            .iter()
            .map(|&i| {
                self.0.get(i).map(|&c| c as f64).ok_or(Error::UnknownItem {
                    item: i,
                    num_items: self.0.len(),
                })
            })
            .collect()
    }
}

/// Scores 1 for the user's test positives and 0 otherwise.
#[derive(Debug, Clone, Copy)]
pub struct Oracle<'a>(pub &'a Interactions);

impl Scorer for Oracle<'_> {
    fn num_items(&self) -> usize {
        self.0.num_items()
    }

    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items
            .iter()
            .map(|&i| {
                if i >= self.0.num_items() {
                    return Err(Error::UnknownItem {
                        item: i,
                        num_items: self.0.num_items(),
                    });
                }
                Ok(if self.0.contains(user, i) { 1.0 } else { 0.0 })
            })
            .collect()
    }
}

fn model_scorer<'a>(
    kind: ModelKind,
    discriminator: Option<&'a DiscriminatorParams>,
    popularity: Option<&'a Vec<u64>>,
) -> Result<&'a dyn Scorer> {
    match kind {
        ModelKind::ItemPop => popularity
            .map(|p| p as &dyn Scorer)
            .ok_or_else(|| Error::Precondition("item-pop model has no popularity counts".into())),
        _ => discriminator
            .map(|d| d as &dyn Scorer)
            .ok_or_else(|| Error::Precondition(format!("{kind} model has no discriminator"))),
    }
}

/// A popularity vector scores like [`Popularity`].
impl Scorer for Vec<u64> {
    fn num_items(&self) -> usize {
        self.len()
    }

    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        Popularity(self).score_items(user, items)
    }
}

impl Scorer for TrainedModel {
    fn num_items(&self) -> usize {
        model_scorer(
            self.kind,
            self.discriminator.as_ref(),
            self.popularity.as_ref(),
        )
        .map_or(0, |s| s.num_items())
    }

    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        model_scorer(
            self.kind,
            self.discriminator.as_ref(),
            self.popularity.as_ref(),
        )?
        .score_items(user, items)
    }
}

impl Scorer for Checkpoint {
    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        model_scorer(
            self.kind,
            self.discriminator.as_ref(),
            self.popularity.as_ref(),
        )?
        .score_items(user, items)
    }
}

/// Candidates of one user, best first, with relevance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub relevance: Vec<bool>,
}

impl RankedList {
    pub fn num_relevant(&self) -> usize {
        self.relevance.iter().filter(|&&r| r).count()
    }

    /// Builds a list directly from relevance flags; items are positions.
    pub fn from_relevance(relevance: Vec<bool>) -> Self {
        RankedList {
            user: 0,
            items: (0..relevance.len()).collect(),
            relevance,
        }
    }
}

/// Scores `candidates` and sorts them: descending score, then ascending item index.
pub fn rank_items<S: Scorer + ?Sized>(
    scorer: &S,
    user: usize,
    candidates: &[usize],
    relevant: &[usize],
) -> Result<RankedList> {
    if candidates.is_empty() {
        return Err(Error::Precondition(format!("user {user}: no candidates")));
    }
    let scores = scorer.score_items(user, candidates)?;
    let mut order: Vec<(f64, usize)> = scores.into_iter().zip(candidates.iter().copied()).collect();
    order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let items: Vec<usize> = order.into_iter().map(|(_, i)| i).collect();
    let relevance = items.iter().map(|i| relevant.contains(i)).collect();
    Ok(RankedList {
        user,
        items,
        relevance,
    })
}

/// Relevant items in the top `min(k, len)` positions, divided by `k`.
pub fn precision_at_k(ranked: &RankedList, k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    let hits = ranked.relevance.iter().take(k).filter(|&&r| r).count();
    hits as f64 / k as f64
}

/// `None` when no candidate is relevant.
pub fn ndcg_at_k(ranked: &RankedList, k: usize) -> Option<f64> {
    assert!(k >= 1, "k must be >= 1");
    let relevant = ranked.num_relevant();
    if relevant == 0 {
        return None;
    }
    let discount = |j: usize| 1.0 / ((j + 1) as f64).log2();
    let dcg: f64 = ranked
        .relevance
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(pos, _)| discount(pos + 1))
        .sum();
    let idcg: f64 = (1..=k.min(relevant)).map(discount).sum();
    Some(dcg / idcg)
}

/// Uncut average precision; `None` when no candidate is relevant.
pub fn average_precision(ranked: &RankedList) -> Option<f64> {
    let relevant = ranked.num_relevant();
    if relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &r) in ranked.relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / relevant as f64)
}

/// `1 / position` of the first relevant item; `None` when there is none.
pub fn reciprocal_rank(ranked: &RankedList) -> Option<f64> {
    ranked
        .relevance
        .iter()
        .position(|&r| r)
        .map(|pos| 1.0 / (pos + 1) as f64)
}

/// How candidate items are chosen per test user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "protocol")]
pub enum Protocol {
    /// Every item not among the user's training positives.
    Full,
    /// Test positives plus `pool_size` sampled non-interacted items.
    Sampled { pool_size: usize },
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::Full => write!(f, "full"),
            Protocol::Sampled { pool_size } => write!(f, "sampled:{pool_size}"),
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    /// `full` or `sampled:<pool_size>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Protocol::Full);
        }
        if let Some(n) = s.strip_prefix("sampled:") {
            return n
                .parse()
                .map(|pool_size| Protocol::Sampled { pool_size })
                .map_err(|_| Error::InvalidHyper(format!("bad pool size in '{s}'")));
        }
        Err(Error::InvalidHyper(format!(
            "unknown protocol '{s}' (expected 'full' or 'sampled:<n>')"
        )))
    }
}

/// Metrics averaged over evaluated users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub p_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub map: f64,
    pub mrr: f64,
    pub num_users: usize,
    /// Test users without a relevant candidate.
    pub skipped_users: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "p3,p5,p10,ndcg3,ndcg5,ndcg10,map,mrr,num_users";

    pub fn csv_row(&self) -> String {
        let mut fields: Vec<String> = Vec::new();
        for k in CUTOFFS {
            fields.push(format!("{:.6}", self.p_at.get(&k).copied().unwrap_or(0.0)));
        }
        for k in CUTOFFS {
            fields.push(format!(
                "{:.6}",
                self.ndcg_at.get(&k).copied().unwrap_or(0.0)
            ));
        }
        fields.push(format!("{:.6}", self.map));
        fields.push(format!("{:.6}", self.mrr));
        fields.push(self.num_users.to_string());
        fields.join(",")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }

    pub fn p(&self, k: usize) -> f64 {
        self.p_at.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.ndcg_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}

struct UserMetrics {
    p: [f64; 3],
    ndcg: [f64; 3],
    ap: f64,
    rr: f64,
}

fn user_metrics(ranked: &RankedList) -> Option<UserMetrics> {
    let ap = average_precision(ranked)?;
    let rr = reciprocal_rank(ranked)?;
    let mut p = [0.0; 3];
    let mut ndcg = [0.0; 3];
    for (slot, &k) in CUTOFFS.iter().enumerate() {
        p[slot] = precision_at_k(ranked, k);
        ndcg[slot] = ndcg_at_k(ranked, k)?;
    }
    Some(UserMetrics { p, ndcg, ap, rr })
}

/// Ranks candidates for every user with a test positive and averages the
/// metrics. Sampled pools for user `u` come from fork `u` of the `Pool`
/// stream of `seed`, so results do not depend on thread scheduling.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    split: &DatasetSplit,
    protocol: Protocol,
    seed: u64,
) -> Result<MetricsReport> {
    let (train, test) = (&split.train, &split.test);
    if test.is_empty() {
        return Err(Error::EmptyDataset("no test positives".into()));
    }
    if scorer.num_items() != train.num_items() {
        return Err(Error::DimensionMismatch {
            expected: train.num_items(),
            actual: scorer.num_items(),
        });
    }
    let pool_stream = RngStream::new(seed, StreamLabel::Pool);
    let users: Vec<usize> = split.test_users().collect();
    let per_user: Vec<Option<UserMetrics>> = users
        .par_iter()
        .map(|&u| -> Result<Option<UserMetrics>> {
            let candidates = match protocol {
                Protocol::Full => {
                    let seen = train.user_items(u);
                    (0..train.num_items())
                        .filter(|i| seen.binary_search(i).is_err())
                        .collect::<Vec<_>>()
                }
                Protocol::Sampled { pool_size } => build_candidate_pool(
                    train,
                    test,
                    u,
                    pool_size,
                    &mut pool_stream.fork(u as u64),
                )?,
            };
            if candidates.is_empty() {
                return Ok(None);
            }
            let ranked = rank_items(scorer, u, &candidates, test.user_items(u))?;
            Ok(user_metrics(&ranked))
        })
        .collect::<Result<_>>()?;

    let evaluated: Vec<&UserMetrics> = per_user.iter().flatten().collect();
    let n = evaluated.len();
    let mean = |f: &dyn Fn(&UserMetrics) -> f64| -> f64 {
        if n == 0 {
            0.0
        } else {
            evaluated.iter().map(|m| f(m)).sum::<f64>() / n as f64
        }
    };
    let mut p_at = BTreeMap::new();
    let mut ndcg_at = BTreeMap::new();
    for (slot, &k) in CUTOFFS.iter().enumerate() {
        p_at.insert(k, mean(&|m| m.p[slot]));
        ndcg_at.insert(k, mean(&|m| m.ndcg[slot]));
    }
    Ok(MetricsReport {
        p_at,
        ndcg_at,
        map: mean(&|m| m.ap),
        mrr: mean(&|m| m.rr),
        num_users: n,
        skipped_users: users.len() - n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn list(flags: &[u8]) -> RankedList {
        RankedList::from_relevance(flags.iter().map(|&f| f == 1).collect())
    }

    #[test]
    fn metric_examples() {
        assert!((precision_at_k(&list(&[1, 1, 0, 0, 0]), 5) - 0.4).abs() < 1e-15);
        assert_eq!(precision_at_k(&list(&[1, 1, 1]), 3), 1.0);
        assert_eq!(ndcg_at_k(&list(&[1, 0, 0]), 3), Some(1.0));
        let v = ndcg_at_k(&list(&[0, 1, 0]), 3).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
        let ap = average_precision(&list(&[1, 0, 1])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&list(&[1, 1, 1, 1])), Some(1.0));
        assert_eq!(
            average_precision(&list(&[0, 0, 0, 0, 0, 0, 1])),
            Some(1.0 / 7.0)
        );
        assert_eq!(reciprocal_rank(&list(&[1, 0])), Some(1.0));
        assert_eq!(reciprocal_rank(&list(&[0, 0, 0, 1])), Some(0.25));
        assert_eq!(ndcg_at_k(&list(&[0, 0]), 1), None);
        assert_eq!(average_precision(&list(&[0])), None);
        assert_eq!(reciprocal_rank(&list(&[0])), None);
    }

    #[test]
    fn ties_break_by_item_index() {
        let pop = vec![5u64, 3, 3, 0, 3];
        let ranked = rank_items(&Popularity(&pop), 0, &[4, 2, 1, 0], &[2]).unwrap();
        assert_eq!(ranked.items, vec![0, 1, 2, 4]);
        assert_eq!(ranked.relevance, vec![false, false, true, false]);
        assert!(matches!(
            rank_items(&Popularity(&pop), 0, &[9], &[]),
            Err(Error::UnknownItem { item: 9, .. })
        ));
        assert!(rank_items(&Popularity(&pop), 0, &[], &[]).is_err());
    }

    #[test]
    fn ranking_matches_argsort() {
        let mut rng = RngStream::new(3, StreamLabel::Pool);
        for _ in 0..50 {
            let d = DiscriminatorParams {
                user_embeddings: Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0))
                    .into_shape_with_order((1, 3))
                    .unwrap(),
                item_embeddings: ndarray::Array2::from_shape_fn((10, 3), |_| {
                    rng.random_range(-1.0..1.0)
                }),
                relation: Relation::Vector(array![1.0, 0.5, -0.3]),
            };
            let candidates: Vec<usize> = (0..10).rev().collect();
            let ranked = rank_items(&d, 0, &candidates, &[]).unwrap();
            let mut brute: Vec<usize> = (0..10).collect();
            brute.sort_by(|&a, &b| d.pair_score(0, b).partial_cmp(&d.pair_score(0, a)).unwrap());
            assert_eq!(ranked.items, brute);
        }
    }

    fn split_fixture() -> DatasetSplit {
        let train = Interactions::from_pairs(
            3,
            8,
            vec![(0, 0), (0, 1), (1, 2), (1, 3), (1, 4), (2, 0), (2, 7)],
        )
        .unwrap();
        let test = Interactions::from_pairs(3, 8, vec![(0, 5), (0, 6), (1, 0), (2, 3)]).unwrap();
        DatasetSplit {
            train,
            test,
            seed: 0,
        }
    }

    #[test]
    fn oracle_is_perfect() {
        let split = split_fixture();
        for protocol in [Protocol::Full, Protocol::Sampled { pool_size: 2 }] {
            let r = evaluate(&Oracle(&split.test), &split, protocol, 1).unwrap();
            assert_eq!(r.num_users, 3);
            assert_eq!(r.map, 1.0);
            assert_eq!(r.mrr, 1.0);
            for k in CUTOFFS {
                assert_eq!(r.ndcg(k), 1.0);
                // relevant counts (2, 1, 1): P@k = mean(min(rel, k) / k)
                let expected = (2.0f64.min(k as f64) + 2.0) / (3.0 * k as f64);
                assert!((r.p(k) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn full_pool_equals_full_protocol() {
        let split = split_fixture();
        let pop = split.train.item_counts();
        let full = evaluate(&Popularity(&pop), &split, Protocol::Full, 4).unwrap();
        // the smallest N - |train_u| over users bounds the pool size
        let max_pool = (0..3).map(|u| 8 - split.train.user_count(u)).min().unwrap();
        let sampled = evaluate(
            &Popularity(&pop),
            &split,
            Protocol::Sampled {
                pool_size: max_pool,
            },
            4,
        );
        assert!(sampled.is_ok());
        // per-user pool equal to N - |train_u| reproduces the full candidate set
        for u in 0..3 {
            let n = 8 - split.train.user_count(u);
            let mut pool = build_candidate_pool(
                &split.train,
                &split.test,
                u,
                n,
                &mut RngStream::new(0, StreamLabel::Pool),
            )
            .unwrap();
            pool.sort_unstable();
            let expected: Vec<usize> = (0..8).filter(|&i| !split.train.contains(u, i)).collect();
            assert_eq!(pool, expected);
        }
        assert_eq!(full.num_users, 3);
    }

    #[test]
    fn sampled_is_deterministic_and_shape_checked() {
        let split = split_fixture();
        let pop = split.train.item_counts();
        let a = evaluate(
            &Popularity(&pop),
            &split,
            Protocol::Sampled { pool_size: 3 },
            9,
        )
        .unwrap();
        let b = evaluate(
            &Popularity(&pop),
            &split,
            Protocol::Sampled { pool_size: 3 },
            9,
        )
        .unwrap();
        assert_eq!(a, b);
        let short = vec![1u64; 5];
        assert!(evaluate(&Popularity(&short), &split, Protocol::Full, 0).is_err());
        let empty = DatasetSplit {
            test: Interactions::empty(3, 8),
            ..split_fixture()
        };
        assert!(evaluate(&Popularity(&pop), &empty, Protocol::Full, 0).is_err());
    }

    #[test]
    fn report_formats() {
        let split = split_fixture();
        let r = evaluate(&Oracle(&split.test), &split, Protocol::Full, 0).unwrap();
        let row = r.csv_row();
        assert_eq!(
            row.split(',').count(),
            MetricsReport::CSV_HEADER.split(',').count()
        );
        assert!(row.ends_with(",3"));
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(
            "sampled:500".parse::<Protocol>().unwrap(),
            Protocol::Sampled { pool_size: 500 }
        );
        assert_eq!("full".parse::<Protocol>().unwrap(), Protocol::Full);
        assert!("sampled:x".parse::<Protocol>().is_err());
    }

    proptest! {
        #[test]
        fn metric_invariants(flags in proptest::collection::vec(any::<bool>(), 1..12), k in 1usize..12) {
            let ranked = RankedList::from_relevance(flags.clone());
            let rel = ranked.num_relevant();
            let p = precision_at_k(&ranked, k);
            let hits = (p * k as f64).round();
            prop_assert!((p * k as f64 - hits).abs() < 1e-9);
            prop_assert!(hits as usize <= k.min(rel));
            if let Some(n) = ndcg_at_k(&ranked, k) {
                let ideal = flags.iter().take(k.min(rel)).all(|&f| f);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
                prop_assert_eq!((n - 1.0).abs() < 1e-12, ideal);
            }
            if rel == 1 {
                prop_assert_eq!(reciprocal_rank(&ranked), average_precision(&ranked));
            }
        }

        #[test]
        fn candidate_order_irrelevant(seed in 0u64..200) {
            let mut rng = RngStream::new(seed, StreamLabel::Pool);
            let pop: Vec<u64> = (0..12).map(|_| rng.random_range(0..4)).collect();
            let mut cands: Vec<usize> = (0..12).collect();
            let a = rank_items(&Popularity(&pop), 0, &cands, &[1, 5]).unwrap();
            rand::seq::SliceRandom::shuffle(cands.as_mut_slice(), &mut rng);
            let b = rank_items(&Popularity(&pop), 0, &cands, &[1, 5]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
