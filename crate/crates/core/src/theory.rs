//! Closed-form checks of the adversarial objective on finite supports.
//!
//! A [`DiscreteDistributions`] instance fixes the positive, negative and
//! generated distributions over `S` support points together with the prior
//! `pi_p`. The unlabeled distribution is taken to be exactly the data
//! mixture `pi_p * p_p + (1 - pi_p) * p_n`. All logarithms are natural.

use rand::Rng;

use crate::error::{Error, Result};
use crate::objective::SCORE_FLOOR;

/// Largest support the brute-force checks accept.
pub const MAX_SUPPORT: usize = 10_000;

/// Tolerance on the total mass of each distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Tolerance used by [`equilibrium_certificate`].
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-9;

/// Positive, negative and generated distributions over a shared finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistributions {
    p_p: Vec<f64>,
    p_n: Vec<f64>,
    p_g: Vec<f64>,
    pi_p: f64,
}

impl DiscreteDistributions {
    pub fn new(p_p: Vec<f64>, p_n: Vec<f64>, p_g: Vec<f64>, pi_p: f64) -> Result<Self> {
        let s = p_p.len();
        if s == 0 || s > MAX_SUPPORT {
            return Err(Error::Precondition(format!(
                "support size {s} outside 1..={MAX_SUPPORT}"
            )));
        }
        for (name, v) in [("p_n", &p_n), ("p_g", &p_g)] {
            if v.len() != s {
                return Err(Error::Precondition(format!(
                    "{name} has length {}, p_p has length {s}",
                    v.len()
                )));
            }
        }
        if !(0.0..=1.0).contains(&pi_p) {
            return Err(Error::Precondition(format!("pi_p = {pi_p} outside [0, 1]")));
        }
        for (name, v) in [("p_p", &p_p), ("p_n", &p_n), ("p_g", &p_g)] {
            check_probability_vector(name, v)?;
        }
        Ok(DiscreteDistributions {
            p_p,
            p_n,
            p_g,
            pi_p,
        })
    }

    pub fn support_size(&self) -> usize {
        self.p_p.len()
    }

    pub fn pi_p(&self) -> f64 {
        self.pi_p
    }

    pub fn p_p(&self) -> &[f64] {
        &self.p_p
    }

    pub fn p_n(&self) -> &[f64] {
        &self.p_n
    }

    pub fn p_g(&self) -> &[f64] {
        &self.p_g
    }

    /// `pi_p * p_p + (1 - pi_p) * p_n`.
    pub fn p_data(&self) -> Vec<f64> {
        self.p_p
            .iter()
            .zip(&self.p_n)
            .map(|(p, n)| self.pi_p * p + (1.0 - self.pi_p) * n)
            .collect()
    }

    /// Unlabeled distribution; identical to [`Self::p_data`].
    pub fn p_u(&self) -> Vec<f64> {
        self.p_data()
    }

    /// True when `pi_p == 0`: the optimal discriminator is identically zero
    /// and no equilibrium statement applies.
    pub fn is_degenerate(&self) -> bool {
        self.pi_p == 0.0
    }

    /// Copy with `p_g[index]` raised by `eps` and `p_g` renormalised.
    pub fn perturb_generated(&self, index: usize, eps: f64) -> Result<Self> {
        if index >= self.support_size() {
            return Err(Error::Precondition(format!(
                "perturbation index {index} outside support of size {}",
                self.support_size()
            )));
        }
        let mut p_g = self.p_g.clone();
        p_g[index] += eps;
        normalize(&mut p_g);
        Self::new(self.p_p.clone(), self.p_n.clone(), p_g, self.pi_p)
    }
}

fn check_probability_vector(name: &str, v: &[f64]) -> Result<()> {
    if let Some(k) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Precondition(format!(
            "{name}[{k}] = {} is not a probability mass",
            v[k]
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::Precondition(format!(
            "{name} sums to {total}, not 1"
        )));
    }
    Ok(())
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// `c * ln(x)` with `0 * ln(.) = 0` and `x` floored at [`SCORE_FLOOR`].
fn weighted_ln(c: f64, x: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * x.max(SCORE_FLOOR).ln()
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(q: f64) -> f64 {
    -weighted_ln(q, q) - weighted_ln(1.0 - q, 1.0 - q)
}

/// Objective value at equilibrium, `-2 H(pi_p / 2)`.
pub fn equilibrium_value(pi_p: f64) -> f64 {
    -2.0 * binary_entropy(pi_p / 2.0)
}

/// `KL(p || q)` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::AbsoluteContinuity { index });
        }
        total += a * (a / b).ln();
    }
    Ok(total)
}

/// `D*(x) = pi_p p_p(x) / (p_u(x) + p_g(x))`.
pub fn optimal_discriminator(dists: &DiscreteDistributions) -> Result<Vec<f64>> {
    let p_u = dists.p_u();
    dists
        .p_p
        .iter()
        .zip(&p_u)
        .zip(&dists.p_g)
        .enumerate()
        .map(|(index, ((&p, &u), &g))| {
            let num = dists.pi_p * p;
            let den = u + g;
            if num == 0.0 {
                Ok(0.0)
            } else if den == 0.0 {
                Err(Error::ZeroDenominator { index })
            } else {
                Ok(num / den)
            }
        })
        .collect()
}

/// `V(D) = sum_x [pi_p p_p ln D - pi_p p_p ln(1 - D) + (p_u + p_g) ln(1 - D)]`.
pub fn objective_value(dists: &DiscreteDistributions, d: &[f64]) -> Result<f64> {
    if d.len() != dists.support_size() {
        return Err(Error::DimensionMismatch {
            expected: dists.support_size(),
            actual: d.len(),
        });
    }
    if let Some(k) = d.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Precondition(format!(
            "D[{k}] = {} is not a probability",
            d[k]
        )));
    }
    let pi = dists.pi_p;
    let p_u = dists.p_u();
    let mut v = 0.0;
    for x in 0..d.len() {
        let pos = pi * dists.p_p[x];
        v += weighted_ln(pos, d[x]);
        v -= weighted_ln(pos, 1.0 - d[x]);
        v += weighted_ln(p_u[x], 1.0 - d[x]);
        v += weighted_ln(dists.p_g[x], 1.0 - d[x]);
    }
    Ok(v)
}

/// Generator objective at the optimal discriminator, evaluated directly and
/// through the entropy-plus-divergence form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub direct: f64,
    pub decomposed: f64,
}

impl Decomposition {
    pub fn gap(&self) -> f64 {
        (self.direct - self.decomposed).abs()
    }
}

pub fn generator_objective_decomposition(dists: &DiscreteDistributions) -> Result<Decomposition> {
    let pi = dists.pi_p;
    let p_u = dists.p_u();
    let mid: Vec<f64> = p_u
        .iter()
        .zip(&dists.p_g)
        .map(|(u, g)| (u + g) / 2.0)
        .collect();
    let rest: Vec<f64> = dists
        .p_n
        .iter()
        .zip(&dists.p_g)
        .map(|(n, g)| ((1.0 - pi) * n + g) / (2.0 - pi))
        .collect();
    let decomposed = equilibrium_value(pi)
        + pi * kl_divergence(&dists.p_p, &mid)?
        + (2.0 - pi) * kl_divergence(&rest, &mid)?;
    let direct = objective_value(dists, &optimal_discriminator(dists)?)?;
    Ok(Decomposition { direct, decomposed })
}

/// Outcome of testing an instance for the equilibrium `p_p = (p_u + p_g) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumCertificate {
    pub is_equilibrium: bool,
    /// `pi_p == 0`; never reported as an equilibrium.
    pub degenerate: bool,
    /// `max_x |D*(x) - pi_p / 2|`.
    pub max_d_deviation: f64,
    /// `|V(D*) - (-2 H(pi_p / 2))|`.
    pub v_deviation: f64,
}

pub fn equilibrium_certificate(dists: &DiscreteDistributions) -> Result<EquilibriumCertificate> {
    let p_u = dists.p_u();
    let mass_gap = dists
        .p_p
        .iter()
        .zip(&p_u)
        .zip(&dists.p_g)
        .map(|((p, u), g)| (p - (u + g) / 2.0).abs())
        .fold(0.0, f64::max);
    let d_star = optimal_discriminator(dists)?;
    let half = dists.pi_p / 2.0;
    let max_d_deviation = d_star.iter().map(|d| (d - half).abs()).fold(0.0, f64::max);
    let v_deviation = (objective_value(dists, &d_star)? - equilibrium_value(dists.pi_p)).abs();
    let degenerate = dists.is_degenerate();
    Ok(EquilibriumCertificate {
        is_equilibrium: !degenerate && mass_gap < EQUILIBRIUM_TOLERANCE,
        degenerate,
        max_d_deviation,
        v_deviation,
    })
}

fn random_masses<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..size).map(|_| rng.random_range(0.05..1.0)).collect();
    normalize(&mut v);
    v
}

/// Instance with independent, strictly positive `p_p`, `p_n` and `p_g`.
pub fn random_instance<R: Rng + ?Sized>(
    support_size: usize,
    pi_p: f64,
    rng: &mut R,
) -> Result<DiscreteDistributions> {
    let p_p = random_masses(support_size, rng);
    let p_n = random_masses(support_size, rng);
    let p_g = random_masses(support_size, rng);
    DiscreteDistributions::new(p_p, p_n, p_g, pi_p)
}

/// Instance with `p_g = 2 p_p - p_u`.
///
/// `p_n` is `p_p` reweighted by factors in `[1, 1.9]`, which keeps
/// `(1 - pi_p) p_n <= (2 - pi_p) p_p` and so `p_g >= 0`.
pub fn equilibrium_instance<R: Rng + ?Sized>(
    support_size: usize,
    pi_p: f64,
    rng: &mut R,
) -> Result<DiscreteDistributions> {
    let p_p = random_masses(support_size, rng);
    let mut p_n: Vec<f64> = p_p
        .iter()
        .map(|p| p * rng.random_range(1.0..=1.9))
        .collect();
    normalize(&mut p_n);
    let p_g: Vec<f64> = p_p
        .iter()
        .zip(&p_n)
        .map(|(p, n)| (2.0 * p - (pi_p * p + (1.0 - pi_p) * n)).max(0.0))
        .collect();
    DiscreteDistributions::new(p_p, p_n, p_g, pi_p)
}
