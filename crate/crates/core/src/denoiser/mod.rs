//! Noise predictors ε_θ: the closed-form empirical-Bayes denoiser and a
//! seeded mini-UNet whose intermediate features and attention maps can be
//! recorded and overridden.

mod empirical;
mod unet;

pub use empirical::{eps_empirical, posterior_mean, posterior_weights, Dataset, DatasetEntry, EmpiricalBayes};
pub use unet::{AttentionKind, AttentionMap, InjectionBundle, MiniUNet, TapCategory, UNetConfig, UNetTapSet};

use crate::error::{MvocError, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::VideoTensor;

/// Ordered object ids `y_1..y_i`; empty is the null condition φ.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct ConditionSet(Vec<u32>);

impl ConditionSet {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(MvocError::Param(format!("duplicate condition id {dup}")));
        }
        Ok(Self(ids))
    }
    pub fn null() -> Self {
        Self(Vec::new())
    }
    pub fn ids(&self) -> &[u32] {
        &self.0
    }
    pub fn is_null(&self) -> bool {
        self.0.is_empty()
    }
    /// The first `i` ids.
    pub fn prefix(&self, i: usize) -> Self {
        Self(self.0[..i].to_vec())
    }
}

impl TryFrom<Vec<u32>> for ConditionSet {
    type Error = MvocError;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConditionSet> for Vec<u32> {
    fn from(c: ConditionSet) -> Self {
        c.0
    }
}

/// `∇ log p(x_t) = −ε / √(1 − ᾱ_t)`.
pub fn score_from_eps(eps: &VideoTensor, t: usize, s: &NoiseSchedule) -> Result<VideoTensor> {
    if t == 0 {
        return Err(MvocError::Range { t, lo: 1, hi: s.total() });
    }
    let ab = s.try_alpha_bar(t)?;
    Ok(eps.scale(-1.0 / (1.0 - ab).sqrt()))
}

/// Anything that predicts ε at `(x_t, t | condition)`.
pub trait NoisePredictor: Sync {
    fn predict(&self, xt: &VideoTensor, t: usize, cond: &ConditionSet) -> Result<VideoTensor>;
}
