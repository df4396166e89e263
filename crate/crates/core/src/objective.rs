//! Loss values for PU and PN discriminator training, the generator loss, and
//! the unlabeled sample-size rule.
//!
//! The PU objective is a quantity to maximise:
//!
//! ```text
//! V(D) = sum_pos [pi_p log D - pi_p log(1 - D)] + sum_unl log(1 - D) + sum_gen log(1 - D)
//! ```
//!
//! Trainers descend `-V`. Every log is taken of a score clamped to at least
//! [`SCORE_FLOOR`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest argument passed to `ln`.
pub const SCORE_FLOOR: f64 = 1e-12;

fn ln_clamped(x: f64) -> f64 {
    x.max(SCORE_FLOOR).ln()
}

fn ln_d(s: f64) -> f64 {
    ln_clamped(s)
}

fn ln_one_minus_d(s: f64) -> f64 {
    ln_clamped(1.0 - s)
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    match scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
        None => Ok(()),
        Some(k) => Err(Error::Precondition(format!(
            "{name} score {k} = {} is not a probability",
            scores[k]
        ))),
    }
}

/// How a batch loss is normalised before the gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    Sum,
    /// Divide every term by the number of positives in the batch.
    #[default]
    Mean,
}

impl LossReduction {
    pub fn factor(self, batch_positives: usize) -> f64 {
        match self {
            LossReduction::Sum => 1.0,
            LossReduction::Mean => 1.0 / batch_positives.max(1) as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossReduction::Sum => "sum",
            LossReduction::Mean => "mean",
        }
    }
}

impl std::str::FromStr for LossReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(LossReduction::Sum),
            "mean" => Ok(LossReduction::Mean),
            other => Err(Error::InvalidHyper(format!(
                "unknown loss reduction '{other}'"
            ))),
        }
    }
}

/// Discriminator relation parameterisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationMode {
    /// Element-wise product weighted by a vector.
    #[default]
    Vector,
    /// Bilinear form through a square matrix.
    Matrix,
}

impl RelationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationMode::Vector => "vector",
            RelationMode::Matrix => "matrix",
        }
    }
}

impl std::str::FromStr for RelationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(RelationMode::Vector),
            "matrix" => Ok(RelationMode::Matrix),
            other => Err(Error::InvalidHyper(format!(
                "unknown relation mode '{other}'"
            ))),
        }
    }
}

/// Every scalar training knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Positive class prior.
    pub pi_p: f64,
    /// Noise variance per coordinate.
    pub delta: f64,
    /// Embedding dimension.
    pub dim: usize,
    /// Generator hidden width.
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// PN negative-sampling ratio; also the `C` of the sample-size rule.
    pub c_ratio: f64,
    /// Discriminator passes per outer iteration.
    pub d_steps: usize,
    /// Generator passes per outer iteration.
    pub g_steps: usize,
    /// Generated tuples per sampled unlabeled tuple, per generator.
    pub gen_ratio: f64,
    pub loss_reduction: LossReduction,
    pub relation: RelationMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams::ml_100k()
    }
}

impl HyperParams {
    pub fn ml_100k() -> Self {
        HyperParams {
            pi_p: 1e-4,
            delta: 0.01,
            dim: 5,
            hidden: 10,
            lr: 0.001,
            epochs: 100,
            batch_size: 128,
            c_ratio: 1.0,
            d_steps: 1,
            g_steps: 10,
            gen_ratio: 1.0,
            loss_reduction: LossReduction::Mean,
            relation: RelationMode::Vector,
        }
    }

    pub fn ml_1m() -> Self {
        HyperParams {
            pi_p: 1e-5,
            dim: 8,
            hidden: 16,
            ..HyperParams::ml_100k()
        }
    }

    pub fn yelp() -> Self {
        HyperParams {
            pi_p: 1e-6,
            dim: 16,
            hidden: 32,
            batch_size: 512,
            epochs: 200,
            ..HyperParams::ml_100k()
        }
    }

    /// Defaults for a known dataset name (`ml-100k`, `ml-1m`, `yelp`).
    pub fn preset(dataset: &str) -> Option<Self> {
        match dataset.to_ascii_lowercase().as_str() {
            "ml-100k" | "ml100k" | "movielens-100k" => Some(Self::ml_100k()),
            "ml-1m" | "ml1m" | "movielens-1m" => Some(Self::ml_1m()),
            "yelp" => Some(Self::yelp()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyper(msg));
        if !(self.pi_p > 0.0 && self.pi_p < 0.5) {
            return bad(format!("pi_p must lie in (0, 0.5), got {}", self.pi_p));
        }
        if !(self.c_ratio > 0.0 && self.c_ratio.is_finite()) {
            return bad(format!("C must be > 0, got {}", self.c_ratio));
        }
        if (self.c_ratio.sqrt() + 1.0) * self.pi_p >= 1.0 {
            return bad(format!(
                "(sqrt(C) + 1) * pi_p must be < 1, got C = {} and pi_p = {}",
                self.c_ratio, self.pi_p
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be > 0, got {}", self.delta));
        }
        if self.dim == 0 || self.hidden == 0 {
            return bad("dim and hidden must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.gen_ratio >= 0.0 && self.gen_ratio.is_finite()) {
            return bad(format!("gen_ratio must be >= 0, got {}", self.gen_ratio));
        }
        Ok(())
    }

    /// Unlabeled tuples per epoch for `n_p` positives under this prior, with `C = 1`.
    pub fn unlabeled_per_epoch(&self, n_p: usize) -> Result<usize> {
        unlabeled_sample_size(n_p, self.pi_p, 1.0)
    }
}

/// The four components of `V(D)`, already weighted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    /// `pi_p * sum log D` over positives.
    pub positive_term: f64,
    /// `-pi_p * sum log(1 - D)` over positives.
    pub negative_correction: f64,
    /// `sum log(1 - D)` over sampled unlabeled tuples.
    pub unlabeled_term: f64,
    /// `sum log(1 - D)` over generated tuples.
    pub generated_term: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(
        positive_term: f64,
        negative_correction: f64,
        unlabeled_term: f64,
        generated_term: f64,
    ) -> Self {
        LossReport {
            positive_term,
            negative_correction,
            unlabeled_term,
            generated_term,
            total: positive_term + negative_correction + unlabeled_term + generated_term,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LossReport::new(
            self.positive_term * factor,
            self.negative_correction * factor,
            self.unlabeled_term * factor,
            self.generated_term * factor,
        )
    }

    /// Component-wise sum.
    pub fn add(&self, other: &LossReport) -> Self {
        LossReport::new(
            self.positive_term + other.positive_term,
            self.negative_correction + other.negative_correction,
            self.unlabeled_term + other.unlabeled_term,
            self.generated_term + other.generated_term,
        )
    }

    /// Count-weighted negative-class risk `-(negative_correction + unlabeled_term)`,
    /// i.e. `sum_unl -log(1 - D) - pi_p * sum_pos -log(1 - D)`. Unbiased, so it
    /// can go below zero.
    pub fn negative_risk_estimate(&self) -> f64 {
        -(self.negative_correction + self.unlabeled_term)
    }
}

/// Smallest `n_u` with `n_u >= sqrt(C) * n_p / (1 - (sqrt(C) + 1) * pi_p)^2`.
pub fn unlabeled_sample_size(n_p: usize, pi_p: f64, c_ratio: f64) -> Result<usize> {
    let ratio = sample_size_ratio(pi_p, c_ratio)?;
    let x = ratio * n_p as f64;
    let n_u = ceil_tolerant(x);
    if !(n_u.is_finite() && n_u < usize::MAX as f64) {
        return Err(Error::InvalidHyper(format!(
            "unlabeled sample size {x} is not representable"
        )));
    }
    Ok(n_u as usize)
}

/// `ceil(x)`, except that values within `1e-9` relative of an integer round
/// to that integer.
pub fn ceil_tolerant(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// `sqrt(C) / (1 - (sqrt(C) + 1) * pi_p)^2`, the factor applied to `n_p`.
pub fn sample_size_ratio(pi_p: f64, c_ratio: f64) -> Result<f64> {
    if !(c_ratio > 0.0 && c_ratio.is_finite()) {
        return Err(Error::InvalidHyper(format!("C must be > 0, got {c_ratio}")));
    }
    if !(pi_p >= 0.0 && pi_p.is_finite()) {
        return Err(Error::InvalidHyper(format!(
            "pi_p must be >= 0, got {pi_p}"
        )));
    }
    let root = c_ratio.sqrt();
    let gap = 1.0 - (root + 1.0) * pi_p;
    if gap <= 0.0 {
        return Err(Error::BoundUndefined {
            value: (root + 1.0) * pi_p,
        });
    }
    Ok(root / (gap * gap))
}

/// Per-record coefficients of the PU objective; multiply by the log term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuCoefficients {
    /// On `log D` of a positive.
    pub positive: f64,
    /// On `log(1 - D)` of a positive.
    pub correction: f64,
    /// On `log(1 - D)` of an unlabeled tuple.
    pub unlabeled: f64,
    /// On `log(1 - D)` of a generated tuple.
    pub generated: f64,
}

pub fn pu_coefficients(pi_p: f64) -> PuCoefficients {
    PuCoefficients {
        positive: pi_p,
        correction: -pi_p,
        unlabeled: 1.0,
        generated: 1.0,
    }
}

/// `V(D)` where the correction term is evaluated on its own sample of
/// positives rather than on `scores_pos`.
pub fn pu_objective(
    scores_pos: &[f64],
    scores_correction: &[f64],
    scores_unlabeled: &[f64],
    scores_generated: &[f64],
    pi_p: f64,
) -> Result<LossReport> {
    if scores_pos.is_empty() {
        return Err(Error::Precondition("empty positive batch".into()));
    }
    if !(0.0..1.0).contains(&pi_p) {
        return Err(Error::InvalidHyper(format!(
            "pi_p must lie in [0, 1), got {pi_p}"
        )));
    }
    check_scores("positive", scores_pos)?;
    check_scores("correction", scores_correction)?;
    check_scores("unlabeled", scores_unlabeled)?;
    check_scores("generated", scores_generated)?;
    let c = pu_coefficients(pi_p);
    Ok(LossReport::new(
        c.positive * scores_pos.iter().map(|&s| ln_d(s)).sum::<f64>(),
        c.correction
            * scores_correction
                .iter()
                .map(|&s| ln_one_minus_d(s))
                .sum::<f64>(),
        c.unlabeled
            * scores_unlabeled
                .iter()
                .map(|&s| ln_one_minus_d(s))
                .sum::<f64>(),
        c.generated
            * scores_generated
                .iter()
                .map(|&s| ln_one_minus_d(s))
                .sum::<f64>(),
    ))
}

/// `V(D)` with the correction evaluated on the positives themselves.
pub fn pu_disc_loss(
    scores_pos: &[f64],
    scores_unlabeled: &[f64],
    scores_generated: &[f64],
    pi_p: f64,
) -> Result<LossReport> {
    pu_objective(
        scores_pos,
        scores_pos,
        scores_unlabeled,
        scores_generated,
        pi_p,
    )
}

/// `V(D)` without generated terms.
pub fn pu_pointwise_loss(scores_pos: &[f64], scores_unlabeled: &[f64], pi_p: f64) -> Result<f64> {
    Ok(pu_disc_loss(scores_pos, scores_unlabeled, &[], pi_p)?.total)
}

/// Binary cross-entropy with positives labelled 1 and negatives 0; minimised.
pub fn pn_disc_loss(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    check_scores("positive", scores_pos)?;
    check_scores("negative", scores_neg)?;
    Ok(-scores_pos.iter().map(|&s| ln_d(s)).sum::<f64>()
        - scores_neg.iter().map(|&s| ln_one_minus_d(s)).sum::<f64>())
}

/// `-sum log D(fake)`; minimised by the generators.
pub fn gen_loss(scores_generated: &[f64]) -> Result<f64> {
    check_scores("generated", scores_generated)?;
    Ok(-scores_generated.iter().map(|&s| ln_d(s)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN_HALF: f64 = -std::f64::consts::LN_2;

    #[test]
    fn sample_size_examples() {
        assert_eq!(unlabeled_sample_size(1, 0.4, 1.0).unwrap(), 25);
        assert_eq!(unlabeled_sample_size(100, 0.0, 1.0).unwrap(), 100);
        assert_eq!(unlabeled_sample_size(100, 1e-12, 1.0).unwrap(), 100);
        assert_eq!(unlabeled_sample_size(10, 0.1, 4.0).unwrap(), 41);
        // n_p / (1 - 2 pi_p)^2 at pi_p = 1e-4
        let n_p = 44_300usize;
        let expected = (n_p as f64 / (1.0f64 - 2e-4).powi(2)).ceil() as usize;
        assert_eq!(unlabeled_sample_size(n_p, 1e-4, 1.0).unwrap(), expected);
        assert_eq!(unlabeled_sample_size(0, 0.2, 1.0).unwrap(), 0);
    }

    #[test]
    fn sample_size_domain() {
        assert!(matches!(
            unlabeled_sample_size(10, 0.5, 1.0),
            Err(Error::BoundUndefined { .. })
        ));
        assert!(unlabeled_sample_size(10, 0.34, 4.0).is_err());
        assert!(unlabeled_sample_size(10, 0.1, 0.0).is_err());
        assert!(unlabeled_sample_size(10, -0.1, 1.0).is_err());
    }

    #[test]
    fn pu_examples() {
        let r = pu_disc_loss(&[0.5], &[0.5], &[], 0.1).unwrap();
        assert!((r.total - LN_HALF).abs() < 1e-15);
        assert_eq!(r.positive_term + r.negative_correction, 0.0);

        let r = pu_disc_loss(&[0.7, 0.2], &[0.3, 0.6], &[0.1], 0.0).unwrap();
        let expected = (0.7f64).ln() + (0.4f64).ln() + (0.9f64).ln();
        assert!((r.total - expected).abs() < 1e-12);
        assert_eq!(r.positive_term, 0.0);

        assert!(pu_disc_loss(&[], &[0.5], &[], 0.1).is_err());
        assert!(pu_disc_loss(&[1.5], &[0.5], &[], 0.1).is_err());
    }

    #[test]
    fn unlabeled_score_monotone() {
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let s = k as f64 / 100.0;
            let v = pu_disc_loss(&[0.99], &[s], &[0.01], 0.1).unwrap().total;
            assert!(v < prev);
            prev = v;
        }
        let near_sup = pu_disc_loss(&[1.0 - 1e-9], &[1e-9], &[1e-9], 0.1)
            .unwrap()
            .total;
        assert!(near_sup > pu_disc_loss(&[0.9], &[0.1], &[0.1], 0.1).unwrap().total);
    }

    #[test]
    fn pn_examples() {
        let v = pn_disc_loss(&[0.5], &[0.5]).unwrap();
        assert!((v - 1.3862943611198906).abs() < 1e-12);
        assert!(pn_disc_loss(&[1.0 - 1e-12], &[1e-12]).unwrap() < 1e-11);
        let pos: [f64; 4] = [0.8, 0.35, 0.999, 0.12];
        let neg: [f64; 3] = [0.4, 0.02, 0.77];
        let mut brute = 0.0;
        for p in pos {
            brute += -p.ln();
        }
        for n in neg {
            brute += -(1.0 - n).ln();
        }
        assert!((pn_disc_loss(&pos, &neg).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn gen_examples() {
        let v = gen_loss(&[0.5; 4]).unwrap();
        assert!((v - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(gen_loss(&[1.0]).unwrap().abs() < 1e-15);
        // d loss / d score < 0 everywhere
        let h = 1e-6;
        for k in 1..100 {
            let s = k as f64 / 100.0;
            let fd = (gen_loss(&[s + h]).unwrap() - gen_loss(&[s - h]).unwrap()) / (2.0 * h);
            assert!(fd < 0.0, "s = {s}: {fd}");
        }
    }

    #[test]
    fn pointwise_examples() {
        let pos = vec![0.9; 128];
        let unl = vec![0.1; 313];
        let pi = 1e-4;
        let hand = 128.0 * (pi * (0.9f64).ln() - pi * (0.1f64).ln()) + 313.0 * (0.9f64).ln();
        assert!((pu_pointwise_loss(&pos, &unl, pi).unwrap() - hand).abs() < 1e-9);
        let v = pu_pointwise_loss(&[0.5; 7], &[0.5; 9], 0.3).unwrap();
        assert_eq!(v, 9.0 * LN_HALF);
    }

    #[test]
    fn clamping_keeps_values_finite() {
        let r = pu_disc_loss(&[0.0, 1.0], &[1.0, 0.0], &[1.0], 0.2).unwrap();
        assert!(r.total.is_finite());
        assert!(gen_loss(&[0.0]).unwrap().is_finite());
        assert!(pn_disc_loss(&[0.0], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn hyper_validation() {
        for hp in [
            HyperParams::ml_100k(),
            HyperParams::ml_1m(),
            HyperParams::yelp(),
        ] {
            hp.validate().unwrap();
            assert_eq!(hp.hidden, 2 * hp.dim);
            assert_eq!(hp.gen_ratio, 1.0);
        }
        let bad = [
            HyperParams {
                pi_p: 0.5,
                ..Default::default()
            },
            HyperParams {
                pi_p: 0.0,
                ..Default::default()
            },
            HyperParams {
                pi_p: 0.35,
                c_ratio: 4.0,
                ..Default::default()
            },
            HyperParams {
                delta: 0.0,
                ..Default::default()
            },
            HyperParams {
                c_ratio: 0.0,
                ..Default::default()
            },
            HyperParams {
                lr: 0.0,
                ..Default::default()
            },
            HyperParams {
                batch_size: 0,
                ..Default::default()
            },
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
        assert_eq!(HyperParams::preset("Yelp").unwrap().batch_size, 512);
        assert!(HyperParams::preset("netflix").is_none());
    }

    fn probs(max: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(1e-12f64..=1.0 - 1e-12, 0..max)
    }

    proptest! {
        #[test]
        fn report_total_is_sum(pos in probs(20).prop_filter("nonempty", |v| !v.is_empty()),
                               unl in probs(20), gen in probs(20), pi in 0.0f64..0.5) {
            let r = pu_disc_loss(&pos, &unl, &gen, pi).unwrap();
            let sum = r.positive_term + r.negative_correction + r.unlabeled_term + r.generated_term;
            prop_assert!((r.total - sum).abs() < 1e-12);
            prop_assert!(r.total.is_finite());
            let p = pu_pointwise_loss(&pos, &unl, pi).unwrap();
            let d = pu_disc_loss(&pos, &unl, &[], pi).unwrap().total;
            prop_assert!((p - d).abs() < 1e-12);
        }

        #[test]
        fn half_scores_cancel_per_positive(n in 1usize..50, pi in 0.0f64..0.5) {
            let r = pu_disc_loss(&vec![0.5; n], &[], &[], pi).unwrap();
            prop_assert_eq!(r.total, 0.0);
        }

        #[test]
        fn sample_size_monotone(n_p in 1usize..10_000, a in 0.0f64..0.45, b in 0.0f64..0.45,
                                c1 in 0.01f64..4.0, c2 in 0.01f64..4.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (clo, chi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            if (chi.sqrt() + 1.0) * hi < 1.0 {
                let base = unlabeled_sample_size(n_p, lo, clo).unwrap();
                prop_assert!(unlabeled_sample_size(n_p, hi, clo).unwrap() >= base);
                prop_assert!(unlabeled_sample_size(n_p, lo, chi).unwrap() >= base);
            }
        }
    }
}
