//! Deterministic DDIM stepping and DDIM inversion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{MvocError, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::VideoTensor;
use crate::vten;

/// Strictly decreasing sampling timesteps drawn from `[1, T]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPlan {
    steps: Vec<usize>,
}

impl TimestepPlan {
    /// `n` evenly strided steps `T, T − T/n, …, T/n` (integer arithmetic).
    pub fn uniform(total: usize, n: usize) -> Result<Self> {
        if n == 0 || n > total {
            return Err(MvocError::Param(format!(
                "need 1 <= N_steps <= T, got N_steps={n}, T={total}"
            )));
        }
        Self::new((0..n).map(|k| (n - k) * total / n).collect(), total)
    }

    pub fn new(steps: Vec<usize>, total: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(MvocError::Param("empty timestep plan".into()));
        }
        if steps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(MvocError::Param(format!("plan not strictly decreasing: {steps:?}")));
        }
        if steps[0] > total || *steps.last().unwrap() < 1 {
            return Err(MvocError::Param(format!("plan {steps:?} outside [1, {total}]")));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }
    pub fn len(&self) -> usize {
        self.steps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
    /// The timestep reached after step `k` (0-based): the next plan entry, or 0.
    pub fn next_after(&self, k: usize) -> usize {
        self.steps.get(k + 1).copied().unwrap_or(0)
    }
}

/// `x_{t_prev}` from `x_t` given ε (generalised to skip steps).
pub fn ddim_step(
    xt: &VideoTensor,
    t: usize,
    t_prev: usize,
    eps_pred: &VideoTensor,
    s: &NoiseSchedule,
    sigma_t: f64,
    noise: Option<&VideoTensor>,
) -> Result<VideoTensor> {
    if t_prev >= t {
        return Err(MvocError::Param(format!("ddim_step needs t > t_prev, got {t} -> {t_prev}")));
    }
    let ab_t = s.try_alpha_bar(t)?;
    let ab_p = s.try_alpha_bar(t_prev)?;
    if t == 0 {
        return Err(MvocError::Range { t, lo: 1, hi: s.total() });
    }
    xt.ensure_same_dims(eps_pred, "ddim_step eps")?;
    if !(sigma_t.is_finite() && sigma_t >= 0.0) {
        return Err(MvocError::Param(format!("sigma_t must be >= 0, got {sigma_t}")));
    }
    let residual = 1.0 - ab_p - sigma_t * sigma_t;
    // t_prev = 0 with sigma = 0 gives residual exactly 0
    if residual < 0.0 {
        return Err(MvocError::InvalidSigma {
            sigma: sigma_t,
            t_prev,
            residual,
        });
    }
    let noise = match (sigma_t > 0.0, noise) {
        (false, _) => None,
        (true, Some(n)) => {
            xt.ensure_same_dims(n, "ddim_step noise")?;
            Some(n)
        }
        (true, None) => return Err(MvocError::Param("sigma_t > 0 requires a noise tensor".into())),
    };
    let (sa_t, sb_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let sa_p = ab_p.sqrt();
    let dir = residual.sqrt();
    let mut out = Vec::with_capacity(xt.len());
    for (i, (&x, &e)) in xt.data().iter().zip(eps_pred.data()).enumerate() {
        let x0_hat = (x - sb_t * e) / sa_t;
        let mut v = sa_p * x0_hat + dir * e;
        if let Some(n) = noise {
            v += sigma_t * n.data()[i];
        }
        out.push(v);
    }
    VideoTensor::from_vec(xt.dims(), out)
}

/// The x̂0 implied by an ε prediction at `t`.
pub fn predict_x0(xt: &VideoTensor, t: usize, eps_pred: &VideoTensor, s: &NoiseSchedule) -> Result<VideoTensor> {
    let ab = s.try_alpha_bar(t)?;
    xt.lincomb(1.0 / ab.sqrt(), eps_pred, -(1.0 - ab).sqrt() / ab.sqrt())
}

/// Inversion `x_{t_prev} → x_t` (σ = 0):
/// `√(ᾱ_t/ᾱ_p)·x_p + √ᾱ_t·(√(1/ᾱ_t − 1) − √(1/ᾱ_p − 1))·ε`.
pub fn ddim_invert_between(
    x_prev: &VideoTensor,
    t_prev: usize,
    t: usize,
    eps_pred: &VideoTensor,
    s: &NoiseSchedule,
) -> Result<VideoTensor> {
    if t_prev >= t {
        return Err(MvocError::Param(format!("inversion needs t > t_prev, got {t_prev} -> {t}")));
    }
    let ab_t = s.try_alpha_bar(t)?;
    let ab_p = s.try_alpha_bar(t_prev)?;
    x_prev.ensure_same_dims(eps_pred, "ddim_invert eps")?;
    let a = (ab_t / ab_p).sqrt();
    let b = ab_t.sqrt() * ((1.0 / ab_t - 1.0).sqrt() - (1.0 / ab_p - 1.0).sqrt());
    x_prev.lincomb(a, eps_pred, b)
}

/// Single-step inversion `x_{t−1} → x_t`.
pub fn ddim_invert_step(x_prev: &VideoTensor, t: usize, eps_pred: &VideoTensor, s: &NoiseSchedule) -> Result<VideoTensor> {
    if t == 0 {
        return Err(MvocError::Range { t, lo: 1, hi: s.total() });
    }
    ddim_invert_between(x_prev, t - 1, t, eps_pred, s)
}

/// Result of a sampling loop. `trajectory` runs `x_T, …, x_0` when kept.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub x0: VideoTensor,
    pub trajectory: Vec<(usize, VideoTensor)>,
}

/// Deterministic DDIM loop over `plan`. The callback receives
/// `(x_t, t, step_index)` with `step_index` counting from 1 at the noisiest step.
pub fn sample_loop<F>(
    x_top: &VideoTensor,
    plan: &TimestepPlan,
    mut eps_fn: F,
    s: &NoiseSchedule,
    keep_trajectory: bool,
) -> Result<SampleOutput>
where
    F: FnMut(&VideoTensor, usize, usize) -> Result<VideoTensor>,
{
    if plan.steps()[0] > s.total() {
        return Err(MvocError::Param("plan exceeds schedule length".into()));
    }
    let mut x = x_top.clone();
    let mut trajectory = Vec::new();
    if keep_trajectory {
        trajectory.push((plan.steps()[0], x.clone()));
    }
    for (k, &t) in plan.steps().iter().enumerate() {
        let t_prev = plan.next_after(k);
        let eps = eps_fn(&x, t, k + 1)?;
        x = ddim_step(&x, t, t_prev, &eps, s, 0.0, None)?;
        if keep_trajectory {
            trajectory.push((t_prev, x.clone()));
        }
    }
    Ok(SampleOutput { x0: x, trajectory })
}

/// Per-timestep inversion latents `{y_t}` for every plan step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCache {
    entries: BTreeMap<usize, VideoTensor>,
}

impl LatentCache {
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, VideoTensor)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }
    pub fn get(&self, t: usize) -> Option<&VideoTensor> {
        self.entries.get(&t)
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn timesteps(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }
    /// Latent at the largest cached timestep.
    pub fn top(&self) -> Option<(usize, &VideoTensor)> {
        self.entries.iter().next_back().map(|(&t, v)| (t, v))
    }

    /// Writes `y{object}_t{timestep}.vten` files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, object: u32) -> Result<()> {
        let dir = dir.as_ref();
        for (t, y) in &self.entries {
            vten::save_tensor(dir.join(cache_file_name(object, *t)), y)?;
        }
        Ok(())
    }

    /// Loads every `y{object}_t*.vten` file in `dir`.
    pub fn load(dir: impl AsRef<Path>, object: u32) -> Result<Self> {
        let dir = dir.as_ref();
        let prefix = format!("y{object}_t");
        let mut entries = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| MvocError::io(dir, e))? {
            let entry = entry.map_err(|e| MvocError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(rest) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".vten")) else {
                continue;
            };
            let Ok(t) = rest.parse::<usize>() else { continue };
            entries.insert(t, vten::load_tensor(entry.path())?);
        }
        Ok(Self { entries })
    }
}

pub fn cache_file_name(object: u32, t: usize) -> String {
    format!("y{object}_t{t}.vten")
}

/// DDIM inversion over the mirrored plan. ε for the hop `t_prev → t` is
/// evaluated at `(x_{t_prev}, t_prev)`; the clean level uses timestep 1.
/// The callback's step index is the sampling index of the level being produced.
pub fn invert_loop<F>(x0: &VideoTensor, plan: &TimestepPlan, mut eps_fn: F, s: &NoiseSchedule) -> Result<LatentCache>
where
    F: FnMut(&VideoTensor, usize, usize) -> Result<VideoTensor>,
{
    if plan.steps()[0] > s.total() {
        return Err(MvocError::Param("plan exceeds schedule length".into()));
    }
    let mut x = x0.clone();
    let mut entries = BTreeMap::new();
    for k in (0..plan.len()).rev() {
        let t = plan.steps()[k];
        let t_prev = plan.next_after(k);
        let eps = eps_fn(&x, t_prev.max(1), k + 1)?;
        x = ddim_invert_between(&x, t_prev, t, &eps, s)?;
        entries.insert(t, x.clone());
    }
    Ok(LatentCache { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{forward_marginal, ScheduleConfig};

    fn sched() -> NoiseSchedule {
        ScheduleConfig::default().build().unwrap()
    }

    fn field(seed: f64) -> VideoTensor {
        VideoTensor::from_fn([2, 1, 3, 3], |f, _, y, x| ((f * 9 + y * 3 + x) as f64 * 0.7 + seed).sin())
    }

    #[test]
    fn uniform_plan_layout() {
        let p = TimestepPlan::uniform(1000, 50).unwrap();
        assert_eq!(p.len(), 50);
        assert_eq!(p.steps()[0], 1000);
        assert_eq!(p.steps()[1], 980);
        assert_eq!(*p.steps().last().unwrap(), 20);
        assert_eq!(p.next_after(49), 0);
        assert!(TimestepPlan::uniform(10, 11).is_err());
        assert!(TimestepPlan::new(vec![5, 5], 10).is_err());
        assert!(TimestepPlan::new(vec![11, 5], 10).is_err());
    }

    #[test]
    fn zero_prediction_step() {
        let s = sched();
        let x = field(0.0);
        let out = ddim_step(&x, 600, 400, &VideoTensor::zeros(x.dims()), &s, 0.0, None).unwrap();
        let k = (s.alpha_bar(400) / s.alpha_bar(600)).sqrt();
        assert!(out.max_abs_diff(&x.scale(k)) < 1e-14);
    }

    #[test]
    fn exact_eps_recovers_x0() {
        let s = sched();
        let (x0, eps) = (field(0.3), field(1.9));
        for t in [1, 250, 999] {
            let xt = forward_marginal(&x0, t, &eps, &s).unwrap();
            let hat = predict_x0(&xt, t, &eps, &s).unwrap();
            assert!(hat.max_abs_diff(&x0) <= 1e-10, "t={t}");
            let to_zero = ddim_step(&xt, t, 0, &eps, &s, 0.0, None).unwrap();
            assert!(to_zero.max_abs_diff(&x0) <= 1e-10, "t={t}");
        }
    }

    #[test]
    fn hand_evaluated_scalar_step() {
        // hand-picked alpha_bar values: schedule T=2, beta_1 = 0.1, beta_2 = 0.2
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let (ab1, ab2): (f64, f64) = (0.9, 0.9 * 0.8);
        let (x, e) = (0.5, 0.25);
        let want = ab1.sqrt() * (x - (1.0f64 - ab2).sqrt() * e) / ab2.sqrt() + (1.0f64 - ab1).sqrt() * e;
        let xv = VideoTensor::filled([1, 1, 1, 1], x);
        let ev = VideoTensor::filled([1, 1, 1, 1], e);
        let got = ddim_step(&xv, 2, 1, &ev, &s, 0.0, None).unwrap();
        assert!((got.data()[0] - want).abs() < 1e-15);
        // manual numbers: sqrt(0.9)*(0.5 - sqrt(0.28)*0.25)/sqrt(0.72) + sqrt(0.1)*0.25
        assert!((got.data()[0] - 0.49017194).abs() < 1e-7);
    }

    #[test]
    fn sigma_validation() {
        let s = sched();
        let x = field(0.0);
        let n = field(2.0);
        assert!(matches!(
            ddim_step(&x, 10, 5, &x, &s, 1.0, Some(&n)),
            Err(MvocError::InvalidSigma { .. })
        ));
        assert!(ddim_step(&x, 10, 5, &x, &s, 0.001, None).is_err());
        assert!(ddim_step(&x, 10, 5, &x, &s, 0.001, Some(&n)).is_ok());
        assert!(ddim_step(&x, 5, 5, &x, &s, 0.0, None).is_err());
    }

    #[test]
    fn invert_then_step_is_identity_for_fixed_eps() {
        let s = sched();
        let x = field(0.4);
        let eps = field(-1.1);
        for t in [1, 2, 300, 1000] {
            let up = ddim_invert_step(&x, t, &eps, &s).unwrap();
            let back = ddim_step(&up, t, t - 1, &eps, &s, 0.0, None).unwrap();
            assert!(back.rel_l2(&x) <= 1e-10, "t={t}");
        }
        let up = ddim_invert_step(&x, 40, &VideoTensor::zeros(x.dims()), &s).unwrap();
        let k = (s.alpha_bar(40) / s.alpha_bar(39)).sqrt();
        assert!(up.max_abs_diff(&x.scale(k)) < 1e-15);
        assert!(ddim_invert_step(&x, 1001, &eps, &s).is_err());
    }

    #[test]
    fn zero_eps_loops_telescope() {
        let s = sched();
        let plan = TimestepPlan::uniform(1000, 10).unwrap();
        let x0 = field(0.2);
        let zero = |x: &VideoTensor, _: usize, _: usize| Ok(VideoTensor::zeros(x.dims()));
        let cache = invert_loop(&x0, &plan, zero, &s).unwrap();
        assert_eq!(cache.len(), 10);
        for &t in plan.steps() {
            let y = cache.get(t).unwrap();
            assert!(y.max_abs_diff(&x0.scale(s.alpha_bar(t).sqrt())) < 1e-14);
        }
        let (top_t, top) = cache.top().unwrap();
        assert_eq!(top_t, 1000);
        let out = sample_loop(top, &plan, zero, &s, true).unwrap();
        assert_eq!(out.trajectory.len(), 11);
        assert!(out.x0.max_abs_diff(&x0) < 1e-12);
    }

    #[test]
    fn single_step_plan_matches_one_call() {
        let s = sched();
        let plan = TimestepPlan::new(vec![1000], 1000).unwrap();
        let x = field(0.9);
        let eps = field(0.1);
        let out = sample_loop(&x, &plan, |_, _, _| Ok(eps.clone()), &s, false).unwrap();
        let direct = ddim_step(&x, 1000, 0, &eps, &s, 0.0, None).unwrap();
        assert_eq!(out.x0, direct);
        assert!(out.trajectory.is_empty());
    }

    #[test]
    fn callback_errors_propagate() {
        let s = sched();
        let plan = TimestepPlan::uniform(1000, 5).unwrap();
        let r = sample_loop(&field(0.0), &plan, |_, _, _| Err(MvocError::UndefinedMetric), &s, false);
        assert!(matches!(r, Err(MvocError::UndefinedMetric)));
    }

    #[test]
    fn cache_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let cache = LatentCache::from_entries([(20, field(0.0)), (40, field(1.0))]);
        cache.save(dir.path(), 3).unwrap();
        assert!(dir.path().join("y3_t20.vten").exists());
        let back = LatentCache::load(dir.path(), 3).unwrap();
        assert_eq!(back.timesteps().collect::<Vec<_>>(), vec![20, 40]);
        assert!(back.get(40).unwrap().max_abs_diff(&field(1.0)) < 1e-6);
        assert!(LatentCache::load(dir.path(), 4).unwrap().is_empty());
    }
}
