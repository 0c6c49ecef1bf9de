//! Variance schedule, closed-form forward marginal and the DDPM reverse step.
//!
//! Timesteps are 1-based: `t ∈ [1, T]`, and `t = 0` denotes clean data with
//! `ᾱ_0 = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{MvocError, Result};
use crate::tensor::VideoTensor;

/// JSON form used inside run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    // index 0 holds the t = 0 convention (beta 0, alpha 1, alpha_bar 1)
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta from `beta_start` to `beta_end` over `total` steps, σ ≡ 0.
    pub fn linear(total: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if total < 1 {
            return Err(MvocError::Param("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(MvocError::Param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut beta = Vec::with_capacity(total + 1);
        beta.push(0.0);
        for t in 1..=total {
            let frac = if total == 1 {
                0.0
            } else {
                (t - 1) as f64 / (total - 1) as f64
            };
            beta.push(beta_start + (beta_end - beta_start) * frac);
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(total + 1);
        alpha_bar.push(1.0);
        for t in 1..=total {
            alpha_bar.push(alpha_bar[t - 1] * alpha[t]);
        }
        Ok(Self {
            config: ScheduleConfig {
                steps: total,
                beta_start,
                beta_end,
            },
            beta,
            alpha,
            alpha_bar,
            sigma: vec![0.0; total + 1],
        })
    }

    /// Replaces the reverse-step noise scale σ_t (index t-1 of `sigma`).
    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.total() {
            return Err(MvocError::Arity {
                expected: self.total(),
                got: sigma.len(),
            });
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(MvocError::Param("sigma must be finite and >= 0".into()));
        }
        self.sigma = std::iter::once(0.0).chain(sigma).collect();
        Ok(self)
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }
    pub fn total(&self) -> usize {
        self.config.steps
    }

    fn check(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.total() {
            return Err(MvocError::Range {
                t,
                lo,
                hi: self.total(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }
    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar[1..]
    }

    /// Checked accessor for `ᾱ_t` on `[0, T]`.
    pub fn try_alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t, 0)?;
        Ok(self.alpha_bar[t])
    }
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·noise`. `t = 0` returns `x0`.
pub fn forward_marginal(x0: &VideoTensor, t: usize, noise: &VideoTensor, s: &NoiseSchedule) -> Result<VideoTensor> {
    s.check(t, 0)?;
    x0.ensure_same_dims(noise, "forward_marginal")?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = s.alpha_bar(t);
    x0.lincomb(ab.sqrt(), noise, (1.0 - ab).sqrt())
}

/// Ancestral step `x_t → x_{t−1}`:
/// `(x_t − (1−α_t)/√(1−ᾱ_t)·ε)/√α_t + σ_t·noise`.
pub fn ddpm_step(
    xt: &VideoTensor,
    t: usize,
    eps_pred: &VideoTensor,
    noise: &VideoTensor,
    s: &NoiseSchedule,
) -> Result<VideoTensor> {
    s.check(t, 1)?;
    xt.ensure_same_dims(eps_pred, "ddpm_step eps")?;
    xt.ensure_same_dims(noise, "ddpm_step noise")?;
    let a = s.alpha(t);
    let coef = (1.0 - a) / (1.0 - s.alpha_bar(t)).sqrt();
    let inv = 1.0 / a.sqrt();
    let sigma = s.sigma(t);
    let data = xt
        .data()
        .iter()
        .zip(eps_pred.data())
        .zip(noise.data())
        .map(|((&x, &e), &n)| {
            let mean = inv * (x - coef * e);
            if sigma == 0.0 {
                mean
            } else {
                mean + sigma * n
            }
        })
        .collect();
    VideoTensor::from_vec(xt.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> VideoTensor {
        VideoTensor::filled([1, 1, 1, 1], v)
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - 0.3);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn default_schedule_matches_brute_force_product() {
        let s = ScheduleConfig::default().build().unwrap();
        // independent oracle: direct product of (1 - beta_t) with betas from linspace
        let prod: f64 = (0..1000)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0))
            .product();
        let got = s.alpha_bar(1000);
        assert!(((got - prod) / prod).abs() <= 1e-12, "{got} vs {prod}");
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            if t > 1 {
                assert!(s.beta(t) > s.beta(t - 1));
            }
        }
    }

    #[test]
    fn forward_marginal_limits() {
        let s = ScheduleConfig::default().build().unwrap();
        let x0 = VideoTensor::from_fn([1, 2, 2, 2], |_, c, y, x| (c + y + x) as f64);
        let n = VideoTensor::from_fn([1, 2, 2, 2], |_, c, y, x| (c * y) as f64 - x as f64);
        assert_eq!(forward_marginal(&x0, 0, &n, &s).unwrap(), x0);
        let z = forward_marginal(&VideoTensor::zeros(x0.dims()), 500, &n, &s).unwrap();
        let k = (1.0 - s.alpha_bar(500)).sqrt();
        assert!(z.max_abs_diff(&n.scale(k)) < 1e-15);
        assert!(matches!(forward_marginal(&x0, 1001, &n, &s), Err(MvocError::Range { .. })));
    }

    #[test]
    fn ddpm_zero_prediction() {
        let s = ScheduleConfig::default().build().unwrap();
        let x = scalar(0.8);
        let out = ddpm_step(&x, 10, &scalar(0.0), &scalar(5.0), &s).unwrap();
        assert!((out.data()[0] - 0.8 / s.alpha(10).sqrt()).abs() < 1e-15);
        assert!(ddpm_step(&x, 0, &x, &x, &s).is_err());
    }

    #[test]
    fn ddpm_true_noise_at_t1_recovers_x0() {
        // at t=1, alpha_bar = alpha so the mean is (x1 - sqrt(1-a)·eps)/sqrt(a) = x0
        let s = ScheduleConfig::default().build().unwrap();
        let (x0, eps) = (0.37, -1.2);
        let a: f64 = 1.0 - 1e-4;
        let x1 = a.sqrt() * x0 + (1.0 - a).sqrt() * eps;
        let out = ddpm_step(&scalar(x1), 1, &scalar(eps), &scalar(0.0), &s).unwrap();
        assert!((out.data()[0] - x0).abs() < 1e-12);
    }

    #[test]
    fn ddpm_is_linear_and_noise_free_at_zero_sigma() {
        let s = ScheduleConfig::default()
            .build()
            .unwrap()
            .with_sigma((1..=1000).map(|t| 0.001 * t as f64 / 1000.0).collect())
            .unwrap();
        let x = VideoTensor::from_fn([1, 1, 2, 2], |_, _, y, x| y as f64 - 0.3 * x as f64);
        let e = x.map(|v| 0.5 * v + 0.1);
        let n = x.map(|v| -v);
        let a = ddpm_step(&x, 200, &e, &n, &s).unwrap().scale(2.0);
        let b = ddpm_step(&x.scale(2.0), 200, &e.scale(2.0), &n.scale(2.0), &s).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);

        let det = ScheduleConfig::default().build().unwrap();
        let p = ddpm_step(&x, 200, &e, &n, &det).unwrap();
        let q = ddpm_step(&x, 200, &e, &n.scale(-7.0), &det).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn config_json_shape() {
        let json = serde_json::to_string(&ScheduleConfig::default()).unwrap();
        assert_eq!(json, r#"{"T":1000,"beta_start":0.0001,"beta_end":0.02}"#);
    }
}
