use super::{DiscriminatorParams, GeneratorParams};
use crate::error::{Error, Result};

/// Flat view over the tensors of a parameter set, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Parameters for DiscriminatorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.user_embeddings.as_slice().expect("standard layout"),
            self.item_embeddings.as_slice().expect("standard layout"),
            self.relation.as_slice(),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.user_embeddings
                .as_slice_mut()
                .expect("standard layout"),
            self.item_embeddings
                .as_slice_mut()
                .expect("standard layout"),
            self.relation.as_slice_mut(),
        ]
    }
}

impl Parameters for GeneratorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`) shaped like `params`.
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }
}

/// One bias-corrected Adam descent step: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<P: Parameters + ?Sized>(
    state: &mut AdamState,
    params: &mut P,
    grads: &P,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidHyper(format!(
            "learning rate must be > 0, got {lr}"
        )));
    }
    let grads = grads.tensors();
    let mut tensors = params.tensors_mut();
    if tensors.len() != state.first.len() || grads.len() != tensors.len() {
        return Err(Error::DimensionMismatch {
            expected: state.first.len(),
            actual: tensors.len(),
        });
    }
    for ((t, g), m) in tensors.iter().zip(&grads).zip(&state.first) {
        if t.len() != g.len() || t.len() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                actual: t.len().max(g.len()),
            });
        }
    }

    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bias1 = 1.0 - b1.powi(state.step as i32);
    let bias2 = 1.0 - b2.powi(state.step as i32);
    for (k, theta) in tensors.iter_mut().enumerate() {
        let g = grads[k];
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        for j in 0..theta.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
