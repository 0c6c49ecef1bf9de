use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConditionSet, NoisePredictor};
use crate::error::{MvocError, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::VideoTensor;
use crate::vten;

/// Clean samples `d_k`, each tagged with the condition ids it satisfies.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<VideoTensor>,
    labels: Vec<Vec<u32>>,
}

/// One row of `labels.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(samples: Vec<VideoTensor>, labels: Vec<Vec<u32>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(MvocError::Param("dataset needs at least one sample".into()));
        }
        if samples.len() != labels.len() {
            return Err(MvocError::Arity {
                expected: samples.len(),
                got: labels.len(),
            });
        }
        let dims = samples[0].dims();
        for s in &samples {
            if s.dims() != dims {
                return Err(MvocError::Shape(format!(
                    "dataset samples {:?} vs {:?}",
                    s.dims(),
                    dims
                )));
            }
        }
        Ok(Self { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn dims(&self) -> [usize; 4] {
        self.samples[0].dims()
    }
    pub fn samples(&self) -> &[VideoTensor] {
        &self.samples
    }
    pub fn labels(&self) -> &[Vec<u32>] {
        &self.labels
    }

    /// Indices of samples carrying every id in `cond` (all samples for φ).
    pub fn matching(&self, cond: &ConditionSet) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&k| cond.ids().iter().all(|id| self.labels[k].contains(id)))
            .collect()
    }

    /// Writes `d{k}.vten` per sample and a `labels.json` sidecar.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut index = Vec::with_capacity(self.len());
        for (k, (s, l)) in self.samples.iter().zip(&self.labels).enumerate() {
            let file = format!("d{k}.vten");
            vten::save_tensor(dir.join(&file), s)?;
            index.push(DatasetEntry {
                file,
                labels: l.clone(),
            });
        }
        let path = dir.join("labels.json");
        let json = serde_json::to_string_pretty(&index).map_err(|e| MvocError::json(&path, e))?;
        fs::write(&path, json).map_err(|e| MvocError::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("labels.json");
        let text = fs::read_to_string(&path).map_err(|e| MvocError::io(&path, e))?;
        let index: Vec<DatasetEntry> = serde_json::from_str(&text).map_err(|e| MvocError::json(&path, e))?;
        let mut samples = Vec::with_capacity(index.len());
        let mut labels = Vec::with_capacity(index.len());
        for e in index {
            samples.push(vten::load_tensor(dir.join(&e.file))?);
            labels.push(e.labels);
        }
        Self::new(samples, labels)
    }
}

fn check_t(t: usize, s: &NoiseSchedule) -> Result<f64> {
    if t == 0 || t > s.total() {
        return Err(MvocError::Range {
            t,
            lo: 1,
            hi: s.total(),
        });
    }
    Ok(s.alpha_bar(t))
}

/// Posterior weights over the condition-matching subset, returned as
/// `(sample index, weight)` pairs summing to one.
pub fn posterior_weights(
    xt: &VideoTensor,
    t: usize,
    data: &Dataset,
    s: &NoiseSchedule,
    cond: &ConditionSet,
) -> Result<Vec<(usize, f64)>> {
    let ab = check_t(t, s)?;
    if xt.dims() != data.dims() {
        return Err(MvocError::Shape(format!(
            "x_t {:?} vs dataset {:?}",
            xt.dims(),
            data.dims()
        )));
    }
    let idx = data.matching(cond);
    if idx.is_empty() {
        return Err(MvocError::UnknownCondition(cond.ids().to_vec()));
    }
    let (sa, var) = (ab.sqrt(), 1.0 - ab);
    let logits: Vec<f64> = idx
        .iter()
        .map(|&k| {
            let d2: f64 = xt
                .data()
                .iter()
                .zip(data.samples[k].data())
                .map(|(x, d)| {
                    let r = x - sa * d;
                    r * r
                })
                .sum();
            -d2 / (2.0 * var)
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(idx.into_iter().zip(exps.into_iter().map(|e| e / z)).collect())
}

/// `E[x_0 | x_t, cond]` under the Gaussian forward marginal.
pub fn posterior_mean(
    xt: &VideoTensor,
    t: usize,
    data: &Dataset,
    s: &NoiseSchedule,
    cond: &ConditionSet,
) -> Result<VideoTensor> {
    let weights = posterior_weights(xt, t, data, s, cond)?;
    if let [(k, _)] = weights[..] {
        return Ok(data.samples[k].clone());
    }
    let mut out = vec![0.0; xt.len()];
    for (k, w) in weights {
        for (o, d) in out.iter_mut().zip(data.samples[k].data()) {
            *o += w * d;
        }
    }
    VideoTensor::from_vec(xt.dims(), out)
}

/// `ε = (x_t − √ᾱ_t·E[x_0|x_t]) / √(1 − ᾱ_t)`.
pub fn eps_empirical(
    xt: &VideoTensor,
    t: usize,
    data: &Dataset,
    s: &NoiseSchedule,
    cond: &ConditionSet,
) -> Result<VideoTensor> {
    let ab = check_t(t, s)?;
    let mean = posterior_mean(xt, t, data, s, cond)?;
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    xt.zip_map(&mean, |x, m| (x - sa * m) / sb)
}

/// The empirical-Bayes backend bundled with its schedule.
#[derive(Debug, Clone)]
pub struct EmpiricalBayes {
    pub data: Dataset,
    pub schedule: NoiseSchedule,
}

impl EmpiricalBayes {
    pub fn new(data: Dataset, schedule: NoiseSchedule) -> Self {
        Self { data, schedule }
    }
}

impl NoisePredictor for EmpiricalBayes {
    fn predict(&self, xt: &VideoTensor, t: usize, cond: &ConditionSet) -> Result<VideoTensor> {
        eps_empirical(xt, t, &self.data, &self.schedule, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleConfig;

    fn scalar(v: f64) -> VideoTensor {
        VideoTensor::filled([1, 1, 1, 1], v)
    }

    fn sched() -> NoiseSchedule {
        ScheduleConfig::default().build().unwrap()
    }

    #[test]
    fn single_sample_returns_itself() {
        let d = Dataset::new(vec![scalar(0.3)], vec![vec![]]).unwrap();
        for (x, t) in [(5.0, 1), (-2.0, 500), (0.0, 1000)] {
            let m = posterior_mean(&scalar(x), t, &d, &sched(), &ConditionSet::null()).unwrap();
            assert_eq!(m.data()[0], 0.3);
        }
        let s = sched();
        let xt = scalar(0.3 * s.alpha_bar(70).sqrt());
        let e = eps_empirical(&xt, 70, &d, &s, &ConditionSet::null()).unwrap();
        assert_eq!(e.data()[0], 0.0);
    }

    #[test]
    fn symmetric_pair_gives_midpoint() {
        let s = sched();
        let d = Dataset::new(vec![scalar(-1.0), scalar(3.0)], vec![vec![], vec![]]).unwrap();
        let xt = scalar(s.alpha_bar(300).sqrt());
        let m = posterior_mean(&xt, 300, &d, &s, &ConditionSet::null()).unwrap();
        assert!((m.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_scalar_matches_direct_sum() {
        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        let pts = [-0.5, 0.2, 1.4];
        let d = Dataset::new(pts.iter().map(|&p| scalar(p)).collect(), vec![vec![]; 3]).unwrap();
        let (x, t) = (0.35, 2);
        let ab: f64 = 0.9 * 0.8;
        let w: Vec<f64> = pts
            .iter()
            .map(|p| (-(x - ab.sqrt() * p).powi(2) / (2.0 * (1.0 - ab))).exp())
            .collect();
        let want = w.iter().zip(&pts).map(|(w, p)| w * p).sum::<f64>() / w.iter().sum::<f64>();
        let got = posterior_mean(&scalar(x), t, &d, &s, &ConditionSet::null()).unwrap();
        assert!((got.data()[0] - want).abs() <= 1e-12);
    }

    #[test]
    fn unknown_condition_and_bad_t() {
        let d = Dataset::new(vec![scalar(1.0)], vec![vec![1]]).unwrap();
        let c = ConditionSet::new(vec![2]).unwrap();
        assert!(matches!(
            posterior_mean(&scalar(0.0), 5, &d, &sched(), &c),
            Err(MvocError::UnknownCondition(_))
        ));
        assert!(posterior_mean(&scalar(0.0), 0, &d, &sched(), &ConditionSet::null()).is_err());
    }

    #[test]
    fn dataset_validation_and_persistence() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![scalar(1.0)], vec![]).is_err());
        let two = VideoTensor::zeros([1, 1, 1, 2]);
        assert!(Dataset::new(vec![scalar(1.0), two], vec![vec![], vec![]]).is_err());

        let d = Dataset::new(vec![scalar(0.5), scalar(-0.25)], vec![vec![1], vec![1, 2]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    }
}
