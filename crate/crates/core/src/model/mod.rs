//! Discriminator and generator parameters, forward passes, hand-derived
//! gradients and the Adam update.

mod adam;
mod checkpoint;
mod grad;

pub use adam::{adam_step, AdamState, Parameters};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use grad::{disc_backward, gen_backward, DiscRecord, GenRecord, LogTerm, Side, Slot};

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::RngStream;
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used for embedding initialisation.
pub const EMBEDDING_INIT_STD: f64 = 0.01;

/// Which trainer produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    ItemPop,
    PnGmf,
    PuGmf,
    Pure,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ItemPop => "item-pop",
            ModelKind::PnGmf => "pn-gmf",
            ModelKind::PuGmf => "pu-gmf",
            ModelKind::Pure => "pure",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "item-pop" | "itempop" => Ok(ModelKind::ItemPop),
            "pn-gmf" | "gmf" => Ok(ModelKind::PnGmf),
            "pu-gmf" => Ok(ModelKind::PuGmf),
            "pure" => Ok(ModelKind::Pure),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// `1 / (1 + exp(-x))` without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Relation between user and item embeddings inside the logit.
#[derive(Debug, Clone, PartialEq)]
pub enum Relation {
    /// `phi = (e_u * e_i) . r`
    Vector(Array1<f64>),
    /// `phi = e_u^T M e_i`, `M` of shape `d_u x d_i`
    Matrix(Array2<f64>),
}

impl Relation {
    fn zeros_like(&self) -> Relation {
        match self {
            Relation::Vector(r) => Relation::Vector(Array1::zeros(r.len())),
            Relation::Matrix(m) => Relation::Matrix(Array2::zeros(m.dim())),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Relation::Vector(r) => r.as_slice().expect("standard layout"),
            Relation::Matrix(m) => m.as_slice().expect("standard layout"),
        }
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            Relation::Vector(r) => r.as_slice_mut().expect("standard layout"),
            Relation::Matrix(m) => m.as_slice_mut().expect("standard layout"),
        }
    }
}

/// GMF discriminator: user and item embedding tables plus the relation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub user_embeddings: Array2<f64>,
    pub item_embeddings: Array2<f64>,
    pub relation: Relation,
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl DiscriminatorParams {
    /// Vector-relation discriminator with `N(0, 0.01^2)` embeddings and an
    /// all-ones relation.
    pub fn init(
        num_users: usize,
        num_items: usize,
        dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 || dim == 0 {
            return Err(Error::Precondition(
                "num_users, num_items and dim must be >= 1".into(),
            ));
        }
        Ok(DiscriminatorParams {
            user_embeddings: gaussian_matrix(num_users, dim, EMBEDDING_INIT_STD, rng),
            item_embeddings: gaussian_matrix(num_items, dim, EMBEDDING_INIT_STD, rng),
            relation: Relation::Vector(Array1::ones(dim)),
        })
    }

    /// Matrix-relation discriminator; the relation starts as the rectangular
    /// identity.
    pub fn init_bilinear(
        num_users: usize,
        num_items: usize,
        user_dim: usize,
        item_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 || user_dim == 0 || item_dim == 0 {
            return Err(Error::Precondition("all sizes must be >= 1".into()));
        }
        Ok(DiscriminatorParams {
            user_embeddings: gaussian_matrix(num_users, user_dim, EMBEDDING_INIT_STD, rng),
            item_embeddings: gaussian_matrix(num_items, item_dim, EMBEDDING_INIT_STD, rng),
            relation: Relation::Matrix(Array2::from_shape_fn((user_dim, item_dim), |(a, b)| {
                if a == b {
                    1.0
                } else {
                    0.0
                }
            })),
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_embeddings.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item_embeddings.nrows()
    }

    pub fn user_dim(&self) -> usize {
        self.user_embeddings.ncols()
    }

    pub fn item_dim(&self) -> usize {
        self.item_embeddings.ncols()
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        DiscriminatorParams {
            user_embeddings: Array2::zeros(self.user_embeddings.dim()),
            item_embeddings: Array2::zeros(self.item_embeddings.dim()),
            relation: self.relation.zeros_like(),
        }
    }

    /// Decision value for arbitrary user/item vectors.
    pub fn logit(&self, e_u: ArrayView1<f64>, e_i: ArrayView1<f64>) -> Result<f64> {
        if e_u.len() != self.user_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.user_dim(),
                actual: e_u.len(),
            });
        }
        if e_i.len() != self.item_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.item_dim(),
                actual: e_i.len(),
            });
        }
        Ok(self.logit_unchecked(e_u, e_i))
    }

    pub(crate) fn logit_unchecked(&self, e_u: ArrayView1<f64>, e_i: ArrayView1<f64>) -> f64 {
        match &self.relation {
            Relation::Vector(r) => e_u
                .iter()
                .zip(e_i.iter())
                .zip(r.iter())
                .map(|((a, b), c)| a * b * c)
                .sum(),
            Relation::Matrix(m) => e_u.dot(&m.dot(&e_i)),
        }
    }

    /// Relevance probability `sigmoid(logit)` for arbitrary vectors.
    pub fn score(&self, e_u: ArrayView1<f64>, e_i: ArrayView1<f64>) -> Result<f64> {
        self.logit(e_u, e_i).map(sigmoid)
    }

    /// Logit of a stored user/item pair.
    pub fn pair_logit(&self, user: usize, item: usize) -> f64 {
        self.logit_unchecked(
            self.user_embeddings.row(user),
            self.item_embeddings.row(item),
        )
    }

    pub fn pair_score(&self, user: usize, item: usize) -> f64 {
        sigmoid(self.pair_logit(user, item))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Two-layer rectified MLP mapping noise to a fake embedding:
/// `relu(w2 . relu(w1 . z + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    /// `k x d`
    pub w1: Array2<f64>,
    /// `k`
    pub b1: Array1<f64>,
    /// `d x k`
    pub w2: Array2<f64>,
    /// `d`
    pub b2: Array1<f64>,
}

impl GeneratorParams {
    /// LeCun-uniform weights (bound `sqrt(3 / fan_in)`), zero biases.
    pub fn init(dim: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Precondition(
                "dim and hidden width must be >= 1".into(),
            ));
        }
        let lecun = |fan_in: usize| {
            let bound = (3.0 / fan_in as f64).sqrt();
            Uniform::new_inclusive(-bound, bound).expect("finite bound")
        };
        let u1 = lecun(dim);
        let w1 = Array2::from_shape_simple_fn((hidden, dim), || u1.sample(rng));
        let u2 = lecun(hidden);
        let w2 = Array2::from_shape_simple_fn((dim, hidden), || u2.sample(rng));
        Ok(GeneratorParams {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        GeneratorParams {
            w1: Array2::zeros(self.w1.dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.dim()),
            b2: Array1::zeros(self.b2.len()),
        }
    }

    /// Fake embedding for noise `z`; every entry is `>= 0`.
    pub fn forward(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(self.trace(z).output)
    }

    pub(crate) fn trace(&self, z: ArrayView1<f64>) -> ForwardTrace {
        let pre_hidden = self.w1.dot(&z) + &self.b1;
        let hidden = pre_hidden.mapv(relu);
        let pre_output = self.w2.dot(&hidden) + &self.b2;
        let output = pre_output.mapv(relu);
        ForwardTrace {
            pre_hidden,
            hidden,
            pre_output,
            output,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

pub(crate) struct ForwardTrace {
    pub pre_hidden: Array1<f64>,
    pub hidden: Array1<f64>,
    pub pre_output: Array1<f64>,
    pub output: Array1<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Gaussian noise with covariance `delta * I`.
pub fn sample_noise(dim: usize, delta: f64, rng: &mut RngStream) -> Result<Array1<f64>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!(
            "noise magnitude must be > 0, got {delta}"
        )));
    }
    let normal = Normal::new(0.0, delta.sqrt()).expect("positive std");
    Ok(Array1::from_shape_simple_fn(dim, || normal.sample(rng)))
}

/// Order-sensitive hash of every parameter bit; equal iff bitwise equal
/// (modulo hash collisions).
pub fn checksum<P: Parameters + ?Sized>(params: &P) -> u64 {
    // FNV-1a over the raw f64 bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in params.tensors() {
        for x in t {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StreamLabel;
    use ndarray::array;
    use proptest::prelude::*;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, StreamLabel::Init)
    }

    #[test]
    fn init_shapes() {
        let d = DiscriminatorParams::init(1, 1, 1, &mut rng(0)).unwrap();
        assert_eq!(d.user_embeddings.dim(), (1, 1));
        assert_eq!(d.relation, Relation::Vector(array![1.0]));
        let d = DiscriminatorParams::init(943, 1679, 5, &mut rng(0)).unwrap();
        assert_eq!(d.user_embeddings.dim(), (943, 5));
        assert_eq!(d.item_embeddings.dim(), (1679, 5));
        assert_eq!(d.relation.as_slice().len(), 5);
        assert!(DiscriminatorParams::init(0, 1, 1, &mut rng(0)).is_err());
    }

    #[test]
    fn init_std_moment() {
        let d = DiscriminatorParams::init(10_000, 10_000, 5, &mut rng(3)).unwrap();
        let xs: Vec<f64> = d
            .user_embeddings
            .iter()
            .chain(d.item_embeddings.iter())
            .copied()
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((0.0095..=0.0105).contains(&std), "std = {std}");
    }

    #[test]
    fn generator_init_bounds() {
        let g = GeneratorParams::init(5, 10, &mut rng(1)).unwrap();
        assert_eq!(g.w1.dim(), (10, 5));
        assert_eq!(g.w2.dim(), (5, 10));
        let b1 = (3.0f64 / 5.0).sqrt();
        assert!((b1 - 0.7746).abs() < 1e-4);
        assert!(g.w1.iter().all(|w| w.abs() <= b1));
        let b2 = (3.0f64 / 10.0).sqrt();
        assert!(g.w2.iter().all(|w| w.abs() <= b2));
        assert!(g.b1.iter().chain(g.b2.iter()).all(|&b| b == 0.0));
        assert_eq!(g, GeneratorParams::init(5, 10, &mut rng(1)).unwrap());
    }

    #[test]
    fn score_examples() {
        let d = DiscriminatorParams {
            user_embeddings: array![[1.0, 2.0]],
            item_embeddings: array![[3.0, 4.0]],
            relation: Relation::Vector(array![1.0, 1.0]),
        };
        let s = d.pair_score(0, 0);
        assert!((s - sigmoid(11.0)).abs() < 1e-15);
        assert!((s - 0.99998).abs() < 1e-5);
        let zero = array![0.0, 0.0];
        assert_eq!(d.score(zero.view(), zero.view()).unwrap(), 0.5);
        assert!(matches!(
            d.score(array![1.0].view(), zero.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identity_matrix_equals_ones_vector() {
        let mut d = DiscriminatorParams::init(4, 6, 3, &mut rng(9)).unwrap();
        let vector_scores: Vec<f64> = (0..4)
            .flat_map(|u| (0..6).map(move |i| (u, i)))
            .map(|(u, i)| d.pair_score(u, i))
            .collect();
        d.relation = Relation::Matrix(Array2::eye(3));
        for (k, (u, i)) in (0..4).flat_map(|u| (0..6).map(move |i| (u, i))).enumerate() {
            assert!((d.pair_score(u, i) - vector_scores[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_examples() {
        let g = GeneratorParams {
            w1: Array2::zeros((3, 2)),
            b1: Array1::zeros(3),
            w2: Array2::zeros((2, 3)),
            b2: Array1::zeros(2),
        };
        assert_eq!(
            g.forward(array![0.3, -1.0].view()).unwrap(),
            array![0.0, 0.0]
        );
        let g = GeneratorParams {
            w1: array![[1.0]],
            b1: array![0.0],
            w2: array![[-1.0]],
            b2: array![0.0],
        };
        assert_eq!(g.forward(array![2.0].view()).unwrap(), array![0.0]);
        assert!(g.forward(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn noise_moments() {
        let delta = 0.01;
        let n = 1_000_000;
        let z = sample_noise(n, delta, &mut rng(17)).unwrap();
        let mean = z.sum() / n as f64;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((0.0098..=0.0102).contains(&var), "var = {var}");
        let sigma_mean = (delta / n as f64).sqrt();
        assert!(mean.abs() < 5.0 * sigma_mean, "mean = {mean}");
        assert!(sample_noise(3, 0.0, &mut rng(0)).is_err());
        assert!(sample_noise(3, -1.0, &mut rng(0)).is_err());
        assert_eq!(
            sample_noise(1, 0.5, &mut rng(4)).unwrap(),
            sample_noise(1, 0.5, &mut rng(4)).unwrap()
        );
    }

    proptest! {
        // |logit| <= 13.5 keeps the score away from f64 saturation.
        #[test]
        fn score_in_open_unit_interval(
            eu in proptest::collection::vec(-1.5f64..1.5, 4),
            ei in proptest::collection::vec(-1.5f64..1.5, 4),
            r in proptest::collection::vec(-1.5f64..1.5, 4),
        ) {
            let d = DiscriminatorParams {
                user_embeddings: Array2::from_shape_vec((1, 4), eu).unwrap(),
                item_embeddings: Array2::from_shape_vec((1, 4), ei).unwrap(),
                relation: Relation::Vector(Array1::from(r.clone())),
            };
            let s = d.pair_score(0, 0);
            prop_assert!(s > 0.0 && s < 1.0);

            let mut bilinear = d.clone();
            bilinear.relation = Relation::Matrix(Array2::from_diag(&Array1::from(r)));
            prop_assert!((bilinear.pair_score(0, 0) - s).abs() < 1e-12);
        }

        #[test]
        fn generator_output_nonnegative(seed in 0u64..1000, z in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let g = GeneratorParams::init(6, 12, &mut rng(seed)).unwrap();
            let out = g.forward(Array1::from(z).view()).unwrap();
            prop_assert!(out.iter().all(|&x| x >= 0.0));
        }
    }
}
