//! End-to-end composition: object inversion, first-frame cut-paste edit,
//! injection-guided sampling, and evaluation.
//!
//! Stage one inverts every object clip under its own condition id and
//! places its mask in composite coordinates. Stage two inverts the cut-paste
//! composite to get `x_T`, then samples with [`guided_eps`], refreshing each
//! object's taps from its cached latent at the current timestep.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{ConditionSet, MiniUNet, UNetConfig};
use crate::error::{MvocError, Result};
use crate::guidance::GuidanceWeights;
use crate::injection::{active_categories, guided_eps, GuidedStep, InjectionSchedule, ObjectLayer, StepReport};
use crate::metrics::{sequence_warping_error, SequenceReport, WarpMetricConfig};
use crate::sampler::{invert_loop, sample_loop, LatentCache, TimestepPlan};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::synthdata::{self, Background, ObjectSpec, SceneSpec, Shape, Trajectory};
use crate::tensor::{affine_apply, affine_apply_mask, hadamard_blend, AffineTransform, FlowField, Mask, VideoTensor, MASK_THRESHOLD};
use crate::vten;

/// Intervals evaluated after composition (short and long range).
pub const EVAL_INTERVALS: [usize; 2] = [2, 4];

fn default_steps() -> usize {
    50
}

/// `run.json`: settings for a standalone inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub unet: UNetConfig,
    /// Condition used for every ε evaluation; empty means unconditional.
    #[serde(default)]
    pub condition: ConditionSet,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            n_steps: default_steps(),
            unet: UNetConfig::default(),
            condition: ConditionSet::null(),
        }
    }
}

/// Noise predictor used by composition. Only the mini-UNet exposes taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    MiniUnet(UNetConfig),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::MiniUnet(UNetConfig::default())
    }
}

/// A foreground object: a clip directory as written by `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInput {
    pub id: u32,
    pub source: PathBuf,
    /// Mask file inside `source`; defaults to `mask_{id}.vten`.
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default = "AffineTransform::identity")]
    pub transform: AffineTransform,
    /// Larger is nearer; the background is layer 0.
    pub layer: i32,
}

/// `job.json`. Relative paths resolve against the job file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionJob {
    pub background: PathBuf,
    #[serde(default)]
    pub objects: Vec<ObjectInput>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    /// `w_1..w_N` in layer order; all ones when absent.
    #[serde(default)]
    pub weights: Option<GuidanceWeights>,
    #[serde(default)]
    pub injection: InjectionSchedule,
    #[serde(default)]
    pub backend: Backend,
    /// Seeds the denoiser weights; overrides the backend's own seed.
    #[serde(default)]
    pub seed: u64,
}

impl CompositionJob {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MvocError::io(path, e))?;
        let mut job: Self = serde_json::from_str(&text).map_err(|e| MvocError::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        job.background = base.join(&job.background);
        for o in &mut job.objects {
            o.source = base.join(&o.source);
        }
        job.validate()?;
        Ok(job)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| MvocError::json(path, e))?;
        fs::write(path, text).map_err(|e| MvocError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.injection.validate()?;
        if self.n_steps == 0 {
            return Err(MvocError::Param("n_steps must be >= 1".into()));
        }
        let mut layers: Vec<i32> = self.objects.iter().map(|o| o.layer).collect();
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        layers.sort_unstable();
        ids.sort_unstable();
        if layers.iter().any(|&l| l <= 0) || layers.windows(2).any(|w| w[0] == w[1]) {
            return Err(MvocError::Param("object layers must be distinct and >= 1 (0 is the background)".into()));
        }
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(MvocError::Param("object ids must be distinct".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.objects.len() {
                return Err(MvocError::Arity {
                    expected: self.objects.len(),
                    got: w.len(),
                });
            }
        }
        Ok(())
    }

    pub fn guidance_weights(&self) -> GuidanceWeights {
        self.weights.clone().unwrap_or_else(|| GuidanceWeights::uniform(self.objects.len()))
    }

    pub fn unet_config(&self) -> UNetConfig {
        let Backend::MiniUnet(cfg) = &self.backend;
        UNetConfig {
            seed: self.seed,
            ..cfg.clone()
        }
    }
}

/// A video with its optional mask and ground-truth flows keyed by interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub video: VideoTensor,
    pub mask: Option<Mask>,
    pub flows: BTreeMap<usize, (FlowField, Mask)>,
}

impl Clip {
    /// Reads `video.vten`, the named mask and any `flow_g*/mask_g*` pairs.
    pub fn load(dir: impl AsRef<Path>, mask_file: Option<&str>) -> Result<Self> {
        let dir = dir.as_ref();
        let video = vten::load_tensor(dir.join("video.vten"))?;
        let mask = mask_file.map(|m| vten::load_mask(dir.join(m))).transpose()?;
        let mut flows = BTreeMap::new();
        for g in 1..video.frames() {
            let (fp, mp) = (dir.join(format!("flow_g{g}.vten")), dir.join(format!("mask_g{g}.vten")));
            if fp.exists() {
                let flow = vten::load_flow(&fp)?;
                let m = if mp.exists() {
                    vten::load_mask(&mp)?
                } else {
                    Mask::ones([flow.pairs(), flow.height(), flow.width()])
                };
                flows.insert(g, (flow, m));
            }
        }
        Ok(Self { video, mask, flows })
    }
}

/// Everything a job reads, already in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct JobInputs {
    pub background: Clip,
    /// Same order as `job.objects`.
    pub objects: Vec<Clip>,
}

impl JobInputs {
    pub fn load(job: &CompositionJob) -> Result<Self> {
        let background = Clip::load(&job.background, None)?;
        let objects = job
            .objects
            .iter()
            .map(|o| {
                let name = o.mask.clone().unwrap_or_else(|| format!("mask_{}.vten", o.id));
                Clip::load(&o.source, Some(&name))
            })
            .collect::<Result<_>>()?;
        Ok(Self { background, objects })
    }

    fn validate(&self, job: &CompositionJob) -> Result<()> {
        let [f, c, h, w] = self.background.video.dims();
        if self.objects.len() != job.objects.len() {
            return Err(MvocError::Arity {
                expected: job.objects.len(),
                got: self.objects.len(),
            });
        }
        for (o, clip) in job.objects.iter().zip(&self.objects) {
            let [of, oc, oh, ow] = clip.video.dims();
            if of != f || oc != c {
                return Err(MvocError::Shape(format!(
                    "object {} clip {:?} vs background {:?}",
                    o.id,
                    clip.video.dims(),
                    self.background.video.dims()
                )));
            }
            match &clip.mask {
                Some(m) if m.dims() == [of, oh, ow] => {}
                _ => return Err(MvocError::Shape(format!("object {} mask missing or mis-sized", o.id))),
            }
        }
        let _ = (h, w);
        Ok(())
    }
}

/// Stage-one output for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedObject {
    pub id: u32,
    pub layer: i32,
    pub transform: AffineTransform,
    /// Binarized mask in the object's own frame.
    pub mask: Mask,
    /// Object clip and mask resampled into composite coordinates.
    pub placed_video: VideoTensor,
    pub placed_mask: Mask,
    pub cache: LatentCache,
}

fn invert_clip(unet: &MiniUNet, video: &VideoTensor, cond: &ConditionSet, plan: &TimestepPlan) -> Result<LatentCache> {
    invert_loop(
        video,
        plan,
        |x, t, _| unet.forward(x, t, cond, None, false).map(|(e, _)| e),
        unet.schedule(),
    )
}

/// Inverts each object under its own id and places its mask; sorted far to near.
pub fn preprocess_objects(job: &CompositionJob, inputs: &JobInputs, unet: &MiniUNet, plan: &TimestepPlan) -> Result<Vec<PreparedObject>> {
    inputs.validate(job)?;
    let [_, _, h, w] = inputs.background.video.dims();
    let mut out = job
        .objects
        .par_iter()
        .zip(&inputs.objects)
        .map(|(o, clip)| {
            let mask = clip.mask.as_ref().expect("validated").binarize(MASK_THRESHOLD);
            let cache = invert_clip(unet, &clip.video, &ConditionSet::new(vec![o.id])?, plan)?;
            Ok(PreparedObject {
                id: o.id,
                layer: o.layer,
                transform: o.transform,
                placed_video: affine_apply(&clip.video, &o.transform, (h, w))?,
                placed_mask: affine_apply_mask(&mask, &o.transform, (h, w))?.binarize(MASK_THRESHOLD),
                mask,
                cache,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|p| p.layer);
    Ok(out)
}

fn masked_channel_means(v: &VideoTensor, m: &Mask, f: usize) -> Option<Vec<f64>> {
    let n = m.plane(f).iter().sum::<f64>();
    if n == 0.0 {
        return None;
    }
    Some(
        (0..v.channels())
            .map(|c| v.plane(f, c).iter().zip(m.plane(f)).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect(),
    )
}

/// Per-object colour offsets that move the placed object's frame-1 mean onto
/// the mean of the background it covers.
pub fn color_offsets(background: &VideoTensor, objects: &[PreparedObject]) -> Vec<Vec<f64>> {
    objects
        .iter()
        .map(|o| {
            match (
                masked_channel_means(background, &o.placed_mask, 0),
                masked_channel_means(&o.placed_video, &o.placed_mask, 0),
            ) {
                (Some(target), Some(src)) => target.iter().zip(&src).map(|(t, s)| t - s).collect(),
                _ => vec![0.0; background.channels()],
            }
        })
        .collect()
}

/// Layer-ordered paste of the colour-matched objects over `background`.
pub fn cut_paste(background: &VideoTensor, objects: &[PreparedObject], offsets: &[Vec<f64>]) -> Result<VideoTensor> {
    let mut out = background.clone();
    for (o, off) in objects.iter().zip(offsets) {
        let shifted = VideoTensor::from_fn(o.placed_video.dims(), |f, c, y, x| o.placed_video.get(f, c, y, x) + off[c]);
        out = hadamard_blend(&out, &shifted, &o.placed_mask)?;
    }
    Ok(out)
}

/// The edited first frame: cut-paste plus colour matching on frame 1.
pub fn edit_first_frame(background: &VideoTensor, objects: &[PreparedObject]) -> Result<VideoTensor> {
    let offsets = color_offsets(background, objects);
    let first: Vec<PreparedObject> = objects
        .iter()
        .map(|o| PreparedObject {
            placed_video: o.placed_video.frame(0),
            placed_mask: o.placed_mask.frame(0),
            ..o.clone()
        })
        .collect();
    cut_paste(&background.frame(0), &first, &offsets)
}

/// Index (layer order) of the nearest object covering each composite pixel.
fn owners(objects: &[PreparedObject], dims: [usize; 3]) -> Vec<Option<usize>> {
    let mut own = vec![None; dims.iter().product()];
    for (k, o) in objects.iter().enumerate() {
        for (i, &m) in o.placed_mask.data().iter().enumerate() {
            if m > 0.0 {
                own[i] = Some(k);
            }
        }
    }
    own
}

/// Ground-truth flow of the composite over interval `g`, built from the
/// background's flow and each object's flow carried through its placement.
/// `None` when some clip lacks a flow at `g`.
pub fn composite_flow(inputs: &JobInputs, job: &CompositionJob, objects: &[PreparedObject], g: usize) -> Result<Option<(FlowField, Mask)>> {
    let Some((bg_flow, bg_valid)) = inputs.background.flows.get(&g) else {
        return Ok(None);
    };
    let mut obj_flows = Vec::with_capacity(objects.len());
    for o in objects {
        let k = job.objects.iter().position(|j| j.id == o.id).expect("prepared from job");
        match inputs.objects[k].flows.get(&g) {
            Some(fl) => obj_flows.push((fl, o.transform.inverse()?)),
            None => return Ok(None),
        }
    }
    let [nf, _, h, w] = inputs.background.video.dims();
    let hw = h * w;
    let own = owners(objects, [nf, h, w]);
    let pairs = nf - g;
    let mut flow = VideoTensor::zeros([pairs, 2, h, w]);
    let mut valid = vec![0.0; pairs * hw];
    for f in 0..pairs {
        for y in 0..h {
            for x in 0..w {
                let owner = own[f * hw + y * w + x];
                let (d, ok) = match owner {
                    None => (bg_flow.at(f, y, x), bg_valid.get(f, y, x) > 0.0),
                    Some(k) => {
                        let ((ofl, ovalid), inv) = &obj_flows[k];
                        let (sy, sx) = inv.apply(y as f64, x as f64);
                        let (oh, ow) = (ofl.height(), ofl.width());
                        let qy = (sy.round().max(0.0) as usize).min(oh - 1);
                        let qx = (sx.round().max(0.0) as usize).min(ow - 1);
                        let (dy, dx) = ofl.at(f, qy, qx);
                        (objects[k].transform.apply_linear(dy, dx), ovalid.get(f, qy, qx) > 0.0)
                    }
                };
                flow.set(f, 0, y, x, d.0);
                flow.set(f, 1, y, x, d.1);
                let (ty, tx) = (y as f64 + d.0, x as f64 + d.1);
                if !ok || ty < 0.0 || tx < 0.0 || ty > (h - 1) as f64 || tx > (w - 1) as f64 {
                    continue;
                }
                let (ry, rx) = (ty.round() as usize, tx.round() as usize);
                if own[(f + g) * hw + ry * w + rx] == owner {
                    valid[f * hw + y * w + x] = 1.0;
                }
            }
        }
    }
    Ok(Some((FlowField::new(flow)?, Mask::from_vec([pairs, h, w], valid)?)))
}

/// PSNR (peak 1) over pixels where `mask > 0`, all channels. `None` for an
/// empty region; infinite when the region matches exactly.
pub fn masked_psnr(a: &VideoTensor, b: &VideoTensor, mask: &Mask) -> Result<Option<f64>> {
    a.ensure_same_dims(b, "psnr")?;
    let [f, c, h, w] = a.dims();
    if mask.dims() != [f, h, w] {
        return Err(MvocError::Shape("psnr mask".into()));
    }
    let (mut se, mut n) = (0.0, 0usize);
    for fi in 0..f {
        let m = mask.plane(fi);
        for ci in 0..c {
            for ((x, y), &mm) in a.plane(fi, ci).iter().zip(b.plane(fi, ci)).zip(m) {
                if mm > 0.0 {
                    se += (x - y) * (x - y);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(-10.0 * (se / n as f64).log10()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub id: u32,
    /// `null` when the object is fully hidden or reproduced exactly.
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub warp: Vec<SequenceReport>,
    pub objects: Vec<ObjectScore>,
}

/// Stage-one state shared by every sampling run of one job.
pub struct Prepared {
    pub unet: MiniUNet,
    pub plan: TimestepPlan,
    pub objects: Vec<PreparedObject>,
    pub first_frame: VideoTensor,
    pub cut_paste: VideoTensor,
    /// `x_T` from inverting the cut-paste composite under all object ids.
    pub x_top: VideoTensor,
    /// Object ids in layer order.
    pub condition: ConditionSet,
    /// Composite flows for the evaluation intervals, when available.
    pub flows: BTreeMap<usize, (FlowField, Mask)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub video: VideoTensor,
    pub injection_report: Vec<StepReport>,
    pub metrics: MetricsReport,
}

/// Stage one: object inversion, first-frame edit, cut-paste and `x_T`.
pub fn prepare(job: &CompositionJob, inputs: &JobInputs) -> Result<Prepared> {
    job.validate()?;
    let schedule = job.schedule.build()?;
    let plan = TimestepPlan::uniform(schedule.total(), job.n_steps)?;
    let unet = MiniUNet::new(job.unet_config(), schedule)?;
    let objects = preprocess_objects(job, inputs, &unet, &plan)?;
    let bg = &inputs.background.video;
    let offsets = color_offsets(bg, &objects);
    let cut = cut_paste(bg, &objects, &offsets)?;
    let first_frame = edit_first_frame(bg, &objects)?;
    let condition = ConditionSet::new(objects.iter().map(|o| o.id).collect())?;
    let x_top = invert_clip(&unet, &cut, &condition, &plan)?
        .top()
        .map(|(_, y)| y.clone())
        .ok_or_else(|| MvocError::Param("empty plan".into()))?;
    let mut flows = BTreeMap::new();
    for g in EVAL_INTERVALS {
        if g < bg.frames() {
            if let Some(fl) = composite_flow(inputs, job, &objects, g)? {
                flows.insert(g, fl);
            }
        }
    }
    Ok(Prepared {
        unet,
        plan,
        objects,
        first_frame,
        cut_paste: cut,
        x_top,
        condition,
        flows,
    })
}

impl Prepared {
    fn schedule(&self) -> &NoiseSchedule {
        self.unet.schedule()
    }

    /// Stage two: guided sampling from `x_T` with the given injection
    /// fractions and weights (in layer order), then evaluation.
    pub fn sample(&self, injection: &InjectionSchedule, weights: &GuidanceWeights) -> Result<Outcome> {
        injection.validate()?;
        if weights.len() != self.objects.len() {
            return Err(MvocError::Arity {
                expected: self.objects.len(),
                got: weights.len(),
            });
        }
        let omega = weights.omega();
        let n_steps = self.plan.len();
        let ctx = GuidedStep {
            unet: &self.unet,
            sched: injection,
            n_steps,
            omega: &omega,
        };
        let mut layers: Vec<ObjectLayer> = self
            .objects
            .iter()
            .map(|o| ObjectLayer::new(o.id, o.placed_mask.clone(), o.transform))
            .collect();
        let mut report = Vec::with_capacity(n_steps);
        let out = sample_loop(
            &self.x_top,
            &self.plan,
            |x, t, step| {
                let active = active_categories(injection, step, n_steps);
                for (layer, obj) in layers.iter_mut().zip(&self.objects) {
                    layer.taps.clear();
                    if active.is_empty() {
                        continue;
                    }
                    let y = obj.cache.get(t).ok_or(MvocError::CacheMiss { object: obj.id, t })?;
                    let taps = self.unet.record_taps(y, t, &ConditionSet::new(vec![obj.id])?, &active)?;
                    layer.taps.insert(t, taps);
                }
                let (eps, r) = guided_eps(&ctx, x, t, step, &layers)?;
                report.push(r);
                Ok(eps)
            },
            self.schedule(),
            false,
        )?;
        let video = out.x0;
        if !video.is_finite() {
            return Err(MvocError::NonFinite("composited video".into()));
        }
        let metrics = self.evaluate(&video)?;
        Ok(Outcome {
            video,
            injection_report: report,
            metrics,
        })
    }

    pub fn evaluate(&self, video: &VideoTensor) -> Result<MetricsReport> {
        let mut warp = Vec::new();
        for (&g, (flow, mask)) in &self.flows {
            warp.push(sequence_warping_error(video, flow, mask, &WarpMetricConfig::new(g))?);
        }
        let [f, _, h, w] = video.dims();
        let own = owners(&self.objects, [f, h, w]);
        let objects = self
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let vis = Mask::from_vec([f, h, w], own.iter().map(|&x| if x == Some(k) { 1.0 } else { 0.0 }).collect())?;
                let psnr = masked_psnr(video, &o.placed_video, &vis)?.filter(|p| p.is_finite());
                Ok(ObjectScore { id: o.id, psnr })
            })
            .collect::<Result<_>>()?;
        Ok(MetricsReport { warp, objects })
    }

    /// Human-readable plan: per-step fired categories and the guidance terms.
    pub fn explain(&self, injection: &InjectionSchedule, weights: &GuidanceWeights) -> String {
        let omega = weights.omega();
        let n = self.plan.len();
        let mut s = format!(
            "objects (far to near): {:?}\nomega: {:?}\nsteps: {n}\n",
            self.condition.ids(),
            omega
        );
        for (k, &t) in self.plan.steps().iter().enumerate() {
            let a: Vec<&str> = active_categories(injection, k + 1, n).iter().map(|c| c.short_name()).collect();
            s.push_str(&format!("step {:>3} t={:>4} inject [{}]\n", k + 1, t, a.join(",")));
        }
        s
    }
}

/// Runs both stages with the job's own injection schedule and weights.
pub fn compose_video(job: &CompositionJob, inputs: &JobInputs) -> Result<(Prepared, Outcome)> {
    let prepared = prepare(job, inputs)?;
    let weights = reorder_weights(job, &prepared)?;
    let outcome = prepared.sample(&job.injection, &weights)?;
    Ok((prepared, outcome))
}

/// Job weights are listed per `job.objects`; sampling wants layer order.
pub fn reorder_weights(job: &CompositionJob, prepared: &Prepared) -> Result<GuidanceWeights> {
    let w = job.guidance_weights();
    let by_id: BTreeMap<u32, f64> = job.objects.iter().map(|o| o.id).zip(w.as_slice().iter().copied()).collect();
    GuidanceWeights::new(prepared.objects.iter().map(|o| by_id[&o.id]).collect())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| MvocError::json(path, e))?;
    fs::write(path, text).map_err(|e| MvocError::io(path, e))
}

/// Writes a self-describing output directory.
pub fn write_outputs(dir: impl AsRef<Path>, job: &CompositionJob, prepared: &Prepared, outcome: &Outcome) -> Result<()> {
    let dir = dir.as_ref();
    let previews = dir.join("previews");
    let caches = dir.join("caches");
    for d in [&previews, &caches] {
        fs::create_dir_all(d).map_err(|e| MvocError::io(d, e))?;
    }
    job.save(dir.join("job.json"))?;
    vten::save_tensor(dir.join("video.vten"), &outcome.video)?;
    vten::save_tensor(dir.join("cut_paste.vten"), &prepared.cut_paste)?;
    synthdata::write_preview(dir.join("first_frame.ppm"), &prepared.first_frame, 0)?;
    for f in 0..outcome.video.frames() {
        synthdata::write_preview(previews.join(format!("frame_{:03}.ppm", f + 1)), &outcome.video, f)?;
    }
    for o in &prepared.objects {
        o.cache.save(&caches, o.id)?;
        vten::save_mask(dir.join(format!("placed_mask_{}.vten", o.id)), &o.placed_mask)?;
    }
    for (g, (flow, mask)) in &prepared.flows {
        vten::save_flow(dir.join(format!("flow_g{g}.vten")), flow)?;
        vten::save_mask(dir.join(format!("mask_g{g}.vten")), mask)?;
    }
    for r in &outcome.metrics.warp {
        r.write_csv(dir.join(format!("warp_g{}.csv", r.interval)))?;
    }
    write_json(&dir.join("injection_report.json"), &outcome.injection_report)?;
    write_json(&dir.join("metrics.json"), &outcome.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertReport {
    pub n_steps: usize,
    pub top_t: usize,
    /// Relative L2 error of sampling back from the top latent.
    pub reconstruction_rel_l2: f64,
}

/// Standalone inversion: caches every latent and checks the round trip.
pub fn run_invert(video: &VideoTensor, cfg: &RunConfig, out: impl AsRef<Path>) -> Result<InvertReport> {
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| MvocError::io(out, e))?;
    let schedule = cfg.schedule.build()?;
    let plan = TimestepPlan::uniform(schedule.total(), cfg.n_steps)?;
    let unet = MiniUNet::new(cfg.unet.clone(), schedule)?;
    let cache = invert_clip(&unet, video, &cfg.condition, &plan)?;
    let object = cfg.condition.ids().last().copied().unwrap_or(0);
    cache.save(out, object)?;
    let (top_t, top) = cache.top().expect("non-empty plan");
    let recon = sample_loop(
        top,
        &plan,
        |x, t, _| unet.forward(x, t, &cfg.condition, None, false).map(|(e, _)| e),
        unet.schedule(),
        false,
    )?
    .x0;
    vten::save_tensor(out.join("reconstruction.vten"), &recon)?;
    write_json(&out.join("run.json"), cfg)?;
    let report = InvertReport {
        n_steps: cfg.n_steps,
        top_t,
        reconstruction_rel_l2: recon.rel_l2(video),
    };
    write_json(&out.join("invert_report.json"), &report)?;
    Ok(report)
}

/// Default two-object scene: a disc and a square, each filmed over its own
/// backdrop, composited over a drifting texture. `seed` varies colours,
/// motion and placement.
pub fn synthetic_scenes(seed: u64, frames: usize, size: usize) -> (SceneSpec, Vec<(ObjectInput, SceneSpec)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let c = (s - 1.0) / 2.0;
    let bg_spec = SceneSpec {
        height: size,
        width: size,
        frames,
        background: Background::Texture {
            base: colour(&mut rng, 0.35, 0.55),
            amplitude: 0.12,
            period: s / 3.0,
            velocity: [0.0, 0.25],
        },
        objects: vec![],
        seed,
    };
    let backdrop = colour(&mut rng, 0.05, 0.2);
    let (c1, c2) = (colour(&mut rng, 0.7, 0.95), colour(&mut rng, 0.6, 0.9));
    let v = rng.gen_range(0.3..0.5);
    let shift = rng.gen_range(-2.0..2.0_f64).round();
    let disc = SceneSpec {
        height: size,
        width: size,
        frames,
        background: Background::Solid { color: backdrop },
        objects: vec![ObjectSpec {
            id: 1,
            shape: Shape::Disc,
            size: s * 0.3,
            color: c1,
            trajectory: Trajectory::Linear {
                start: [c, c - v * (frames as f64 - 1.0) / 2.0],
                velocity: [0.0, v],
            },
            layer: 1,
        }],
        seed,
    };
    let square = SceneSpec {
        height: size,
        width: size,
        frames,
        background: Background::Gradient {
            top: backdrop,
            bottom: colour(&mut rng, 0.1, 0.3),
        },
        objects: vec![ObjectSpec {
            id: 2,
            shape: Shape::Square,
            size: s * 0.25,
            color: c2,
            trajectory: Trajectory::Sinusoidal {
                center: [c, c],
                amplitude: [s * 0.08, 0.0],
                period: frames as f64,
                phase: 0.0,
            },
            layer: 1,
        }],
        seed,
    };
    let q = s / 4.0;
    let objects = vec![
        (
            ObjectInput {
                id: 1,
                source: PathBuf::from("object1"),
                mask: None,
                transform: AffineTransform::translation(-q + shift, -q),
                layer: 1,
            },
            disc,
        ),
        (
            ObjectInput {
                id: 2,
                source: PathBuf::from("object2"),
                mask: None,
                transform: AffineTransform::translation(q, q - shift),
                layer: 2,
            },
            square,
        ),
    ];
    (bg_spec, objects)
}

fn colour(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [0; 3].map(|_| rng.gen_range(lo..hi))
}

fn clip_from_scene(spec: &SceneSpec, mask_of: Option<u32>) -> Result<Clip> {
    let r = synthdata::render_scene(spec)?;
    let mask = mask_of.map(|id| r.masks.iter().find(|(i, _)| *i == id).expect("object in scene").1.clone());
    let mut flows = BTreeMap::new();
    for g in 1..spec.frames {
        flows.insert(g, synthdata::ground_truth_flow(spec, g)?);
    }
    Ok(Clip { video: r.video, mask, flows })
}

/// The default job (16 frames, 32×32, two objects) with inputs in memory.
pub fn synthetic_job(seed: u64) -> Result<(CompositionJob, JobInputs)> {
    let (bg, objs) = synthetic_scenes(seed, 16, 32);
    let inputs = JobInputs {
        background: clip_from_scene(&bg, None)?,
        objects: objs
            .iter()
            .map(|(o, s)| clip_from_scene(s, Some(o.id)))
            .collect::<Result<_>>()?,
    };
    let job = CompositionJob {
        background: PathBuf::from("background"),
        objects: objs.into_iter().map(|(o, _)| o).collect(),
        schedule: ScheduleConfig::default(),
        n_steps: default_steps(),
        weights: None,
        injection: InjectionSchedule::default(),
        backend: Backend::default(),
        seed,
    };
    Ok((job, inputs))
}

/// Writes the default job's scenes and `job.json` under `dir`.
pub fn write_synthetic_job(dir: impl AsRef<Path>, seed: u64, frames: usize, size: usize) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let (bg, objs) = synthetic_scenes(seed, frames, size);
    synthdata::write_scene(dir.join("background"), &bg, &synthdata::render_scene(&bg)?)?;
    for (o, s) in &objs {
        synthdata::write_scene(dir.join(&o.source), s, &synthdata::render_scene(s)?)?;
    }
    let job = CompositionJob {
        background: PathBuf::from("background"),
        objects: objs.into_iter().map(|(o, _)| o).collect(),
        schedule: ScheduleConfig::default(),
        n_steps: default_steps(),
        weights: None,
        injection: InjectionSchedule::default(),
        backend: Backend::default(),
        seed,
    };
    let path = dir.join("job.json");
    job.save(&path)?;
    Ok(path)
}
