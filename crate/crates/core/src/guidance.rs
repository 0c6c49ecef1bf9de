//! Composition of conditional ε predictions.
//!
//! `eps_terms[i]` is always `ε(x_t, t | y_1..y_i)`, with `eps_terms[0]` the
//! unconditional prediction. Every composer is linear in its ε arguments.

use serde::{Deserialize, Serialize};

use crate::error::{MvocError, Result};
use crate::tensor::VideoTensor;

/// Dependency strengths `w_1..w_N`; `w_0 = 1` and `w_{N+1} = 0` are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GuidanceWeights {
    w: Vec<f64>,
}

impl GuidanceWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(MvocError::NonFinite("guidance weights".into()));
        }
        Ok(Self { w })
    }

    /// `w_i = 1` for all `n` conditions.
    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }
    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn set(&mut self, i: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(MvocError::NonFinite("guidance weight".into()));
        }
        let n = self.w.len();
        let slot = self
            .w
            .get_mut(i)
            .ok_or_else(|| MvocError::Param(format!("weight index {i} out of range for N={n}")))?;
        *slot = value;
        Ok(())
    }

    /// `ω_i = w_i − w_{i+1}` for `i = 0..N`; always derived from the current `w`.
    pub fn omega(&self) -> Vec<f64> {
        weights_to_omega(self)
    }
}

pub fn weights_to_omega(w: &GuidanceWeights) -> Vec<f64> {
    let n = w.w.len();
    let at = |i: usize| -> f64 {
        match i {
            0 => 1.0,
            i if i > n => 0.0,
            i => w.w[i - 1],
        }
    };
    (0..=n).map(|i| at(i) - at(i + 1)).collect()
}

fn check_terms(terms: &[&VideoTensor], expected: usize) -> Result<()> {
    if terms.len() != expected {
        return Err(MvocError::Arity {
            expected,
            got: terms.len(),
        });
    }
    for t in &terms[1..] {
        terms[0].ensure_same_dims(t, "guidance terms")?;
    }
    Ok(())
}

fn weighted_sum(terms: &[&VideoTensor], coef: &[f64]) -> VideoTensor {
    let mut out = vec![0.0; terms[0].len()];
    for (t, &c) in terms.iter().zip(coef) {
        for (o, v) in out.iter_mut().zip(t.data()) {
            *o += c * v;
        }
    }
    VideoTensor::from_vec(terms[0].dims(), out).expect("finite combination of finite terms")
}

/// `ε₀ + Σ_i w_i (ε_i − ε_{i−1})`.
pub fn compose_eps_chained(eps_terms: &[&VideoTensor], w: &GuidanceWeights) -> Result<VideoTensor> {
    check_terms(eps_terms, w.len() + 1)?;
    let mut out = eps_terms[0].data().to_vec();
    for i in 1..eps_terms.len() {
        let wi = w.w[i - 1];
        let (cur, prev) = (eps_terms[i].data(), eps_terms[i - 1].data());
        for ((o, c), p) in out.iter_mut().zip(cur).zip(prev) {
            *o += wi * (c - p);
        }
    }
    VideoTensor::from_vec(eps_terms[0].dims(), out)
}

/// `ε₀ + Σ_i w_i (ε(·|y_i) − ε₀)` for independent conditions.
pub fn compose_eps_independent(eps_uncond: &VideoTensor, eps_single: &[&VideoTensor], w: &GuidanceWeights) -> Result<VideoTensor> {
    if eps_single.len() != w.len() {
        return Err(MvocError::Arity {
            expected: w.len(),
            got: eps_single.len(),
        });
    }
    for e in eps_single {
        eps_uncond.ensure_same_dims(e, "guidance terms")?;
    }
    let mut out = eps_uncond.data().to_vec();
    for (e, &wi) in eps_single.iter().zip(&w.w) {
        for ((o, c), u) in out.iter_mut().zip(e.data()).zip(eps_uncond.data()) {
            *o += wi * (c - u);
        }
    }
    VideoTensor::from_vec(eps_uncond.dims(), out)
}

/// Classifier-free guidance `ε₀ + w (ε_c − ε₀)`.
pub fn cfg(eps_uncond: &VideoTensor, eps_cond: &VideoTensor, w: f64) -> Result<VideoTensor> {
    eps_uncond.ensure_same_dims(eps_cond, "cfg")?;
    eps_uncond.zip_map(eps_cond, |u, c| u + w * (c - u))
}

/// `Σ_i ω_i ε_i`. The weights are not required to sum to one here.
pub fn compose_eps_omega(eps_terms: &[&VideoTensor], omega: &[f64]) -> Result<VideoTensor> {
    if eps_terms.is_empty() {
        return Err(MvocError::Arity { expected: 1, got: 0 });
    }
    check_terms(eps_terms, omega.len())?;
    Ok(weighted_sum(eps_terms, omega))
}
