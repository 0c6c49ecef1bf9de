//! Layered composition of object features and attention maps, injection
//! scheduling, and the injection-conditioned composite ε.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{AttentionKind, AttentionMap, ConditionSet, InjectionBundle, MiniUNet, TapCategory};
use crate::error::{MvocError, Result};
use crate::guidance::compose_eps_omega;
use crate::tensor::{affine_apply, hadamard_blend, mask_resample, AffineTransform, Mask, VideoTensor, MASK_THRESHOLD};

/// Fraction of sampling steps, counted from the noisiest, on which each tap
/// category is overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionSchedule {
    pub r_fn: f64,
    pub r_fr: f64,
    pub r_at: f64,
    pub r_as: f64,
}

impl Default for InjectionSchedule {
    fn default() -> Self {
        Self {
            r_fn: 0.02,
            r_fr: 0.1,
            r_at: 1.0,
            r_as: 1.0,
        }
    }
}

impl InjectionSchedule {
    pub fn disabled() -> Self {
        Self {
            r_fn: 0.0,
            r_fr: 0.0,
            r_at: 0.0,
            r_as: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("r_fn", self.r_fn), ("r_fr", self.r_fr), ("r_at", self.r_at), ("r_as", self.r_as)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(MvocError::Param(format!("{name} = {r} not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn fraction(&self, c: TapCategory) -> f64 {
        match c {
            TapCategory::InputFeature => self.r_fn,
            TapCategory::ResidualFeature => self.r_fr,
            TapCategory::TemporalAttention => self.r_at,
            TapCategory::SpatialAttention => self.r_as,
        }
    }

    /// `round(r · n_steps)`.
    pub fn active_steps(&self, c: TapCategory, n_steps: usize) -> usize {
        (self.fraction(c) * n_steps as f64).round() as usize
    }
}

/// True iff `step_index ≤ round(r · n_steps)`; steps are 1-based.
pub fn injection_active(sched: &InjectionSchedule, step_index: usize, n_steps: usize, c: TapCategory) -> bool {
    step_index >= 1 && step_index <= sched.active_steps(c, n_steps)
}

pub fn active_categories(sched: &InjectionSchedule, step_index: usize, n_steps: usize) -> Vec<TapCategory> {
    TapCategory::ALL
        .into_iter()
        .filter(|&c| injection_active(sched, step_index, n_steps, c))
        .collect()
}

/// One foreground object: placement in composite coordinates plus its taps
/// keyed by timestep.
#[derive(Debug, Clone)]
pub struct ObjectLayer {
    pub id: u32,
    /// Placement region in composite coordinates, full resolution.
    pub mask: Mask,
    /// Maps object coordinates to composite coordinates.
    pub transform: AffineTransform,
    pub taps: BTreeMap<usize, InjectionBundle>,
}

impl ObjectLayer {
    pub fn new(id: u32, mask: Mask, transform: AffineTransform) -> Self {
        Self {
            id,
            mask,
            transform,
            taps: BTreeMap::new(),
        }
    }
}

fn nearest_index(v: f64, n: usize) -> usize {
    (v.round().max(0.0) as usize).min(n - 1)
}

/// Token index transport on a `(h, w)` grid: `src[q]` is the source token
/// pulled into destination `q`; `dst[k]` is where source token `k` lands.
fn token_transport(t: &AffineTransform, grid: (usize, usize)) -> Result<(Vec<usize>, Vec<usize>)> {
    let (h, w) = grid;
    let inv = t.inverse()?;
    let mut src = Vec::with_capacity(h * w);
    let mut dst = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = inv.apply(y as f64, x as f64);
            src.push(nearest_index(sy, h) * w + nearest_index(sx, w));
            let (dy, dx) = t.apply(y as f64, x as f64);
            dst.push(nearest_index(dy, h) * w + nearest_index(dx, w));
        }
    }
    Ok((src, dst))
}

/// Moves an attention map into composite coordinates. Query rows are
/// pulled through `T⁻¹`, key mass is pushed through `T`; rows stay stochastic.
pub fn transport_attention(map: &AttentionMap, t: &AffineTransform) -> Result<AttentionMap> {
    if t.is_identity() {
        return Ok(map.clone());
    }
    let (src, dst) = token_transport(t, map.grid)?;
    let mut out = map.clone();
    match map.kind {
        AttentionKind::Spatial => {
            let n = map.tokens();
            for f in 0..map.frames {
                let block = map.block(f);
                let ob = &mut out.data[f * n * n..(f + 1) * n * n];
                ob.fill(0.0);
                for q in 0..n {
                    let srow = &block[src[q] * n..(src[q] + 1) * n];
                    let drow = &mut ob[q * n..(q + 1) * n];
                    for (k, &p) in srow.iter().enumerate() {
                        drow[dst[k]] += p;
                    }
                }
            }
        }
        AttentionKind::Temporal => {
            let b = map.frames * map.frames;
            for (p, &s) in src.iter().enumerate() {
                out.data[p * b..(p + 1) * b].copy_from_slice(map.block(s));
            }
        }
    }
    Ok(out)
}

/// Row-gated blend: query token `(f, q)` takes `overlay`'s row with weight `m[f, q]`.
fn blend_attention(base: &AttentionMap, overlay: &AttentionMap, mask: &Mask) -> Result<AttentionMap> {
    if !base.same_geometry(overlay) || mask.dims() != [base.frames, base.grid.0, base.grid.1] {
        return Err(MvocError::Shape(format!(
            "attention blend: {:?}/{:?} grid {:?} with mask {:?}",
            base.kind,
            overlay.kind,
            base.grid,
            mask.dims()
        )));
    }
    let mut out = base.clone();
    let n = base.block_size();
    let rows = base.data.len() / n;
    for r in 0..rows {
        let (f, q) = match base.kind {
            AttentionKind::Spatial => (r / base.tokens(), r % base.tokens()),
            AttentionKind::Temporal => (r % base.frames, r / base.frames),
        };
        let m = mask.plane(f)[q];
        if m == 0.0 {
            continue;
        }
        let orow = &overlay.data[r * n..(r + 1) * n];
        for (d, o) in out.data[r * n..(r + 1) * n].iter_mut().zip(orow) {
            *d = *d * (1.0 - m) + o * m;
        }
    }
    Ok(out)
}

fn compose_feature(prev: &VideoTensor, layer_feat: &VideoTensor, layer: &ObjectLayer) -> Result<VideoTensor> {
    let [_, _, h, w] = prev.dims();
    let factor = layer.mask.height() as f64 / h as f64;
    let mask = mask_resample(&layer.mask, h, w, MASK_THRESHOLD)?;
    let t = layer.transform.at_resolution(factor);
    let overlay = affine_apply(layer_feat, &t, (h, w))?;
    hadamard_blend(prev, &overlay, &mask)
}

fn compose_attention(prev: &AttentionMap, layer_map: &AttentionMap, layer: &ObjectLayer) -> Result<AttentionMap> {
    let (h, w) = prev.grid;
    let factor = layer.mask.height() as f64 / h as f64;
    let mask = mask_resample(&layer.mask, h, w, MASK_THRESHOLD)?;
    let overlay = transport_attention(layer_map, &layer.transform.at_resolution(factor))?;
    blend_attention(prev, &overlay, &mask)
}

fn missing(layer: &ObjectLayer, c: TapCategory) -> MvocError {
    MvocError::InjectionShape {
        site: c.short_name().into(),
        detail: format!("object {} has no cached {} taps", layer.id, c.short_name()),
    }
}

/// Layer-by-layer composition: for every category present in `base`,
/// `X_i = X_{i−1} ⊙ (1 − M_i) + 𝒯_i(X(y_i)) ⊙ M_i`.
pub fn compose_layers(base: &InjectionBundle, layers: &[&ObjectLayer], t: usize) -> Result<InjectionBundle> {
    let mut cur = base.clone();
    for layer in layers {
        let taps = layer.taps.get(&t).ok_or(MvocError::CacheMiss { object: layer.id, t })?;
        if let Some(prev) = &cur.f_n {
            let src = taps.f_n.as_ref().ok_or_else(|| missing(layer, TapCategory::InputFeature))?;
            cur.f_n = Some(compose_feature(prev, src, layer)?);
        }
        if let Some(prev) = &cur.f_r {
            let src = taps.f_r.as_ref().ok_or_else(|| missing(layer, TapCategory::ResidualFeature))?;
            if src.len() != prev.len() {
                return Err(missing(layer, TapCategory::ResidualFeature));
            }
            cur.f_r = Some(
                prev.iter()
                    .zip(src)
                    .map(|(p, s)| compose_feature(p, s, layer))
                    .collect::<Result<_>>()?,
            );
        }
        for (slot, src, cat) in [
            (&mut cur.a_s, &taps.a_s, TapCategory::SpatialAttention),
            (&mut cur.a_t, &taps.a_t, TapCategory::TemporalAttention),
        ] {
            if let Some(prev) = slot.as_ref() {
                let src = src.as_ref().ok_or_else(|| missing(layer, cat))?;
                if src.len() != prev.len() {
                    return Err(missing(layer, cat));
                }
                *slot = Some(
                    prev.iter()
                        .zip(src)
                        .map(|(p, s)| compose_attention(p, s, layer))
                        .collect::<Result<_>>()?,
                );
            }
        }
    }
    Ok(cur)
}

/// Which categories fired at one sampling step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub t: usize,
    #[serde(rename = "fn")]
    pub f_n: bool,
    #[serde(rename = "fr")]
    pub f_r: bool,
    #[serde(rename = "at")]
    pub a_t: bool,
    #[serde(rename = "as")]
    pub a_s: bool,
}

impl StepReport {
    pub fn new(step: usize, t: usize, active: &[TapCategory]) -> Self {
        Self {
            step,
            t,
            f_n: active.contains(&TapCategory::InputFeature),
            f_r: active.contains(&TapCategory::ResidualFeature),
            a_t: active.contains(&TapCategory::TemporalAttention),
            a_s: active.contains(&TapCategory::SpatialAttention),
        }
    }
}

/// Per-step evaluation context for [`guided_eps`].
pub struct GuidedStep<'a> {
    pub unet: &'a MiniUNet,
    pub sched: &'a InjectionSchedule,
    pub n_steps: usize,
    /// `ω_0..ω_N`, one per prefix of `layers`.
    pub omega: &'a [f64],
}

/// `Σ_i ω_i · ε(x_t, t | {F_it, A_it})` over layer prefixes `i = 0..N`.
///
/// The base taps come from an unconditional pass on `xt`; prefix `i` is a
/// pass conditioned on the first `i` object ids with the composed taps of
/// the active categories injected. Terms with `ω_i = 0` are not evaluated.
pub fn guided_eps(
    ctx: &GuidedStep<'_>,
    xt: &VideoTensor,
    t: usize,
    step_index: usize,
    layers: &[ObjectLayer],
) -> Result<(VideoTensor, StepReport)> {
    if ctx.omega.len() != layers.len() + 1 {
        return Err(MvocError::Arity {
            expected: layers.len() + 1,
            got: ctx.omega.len(),
        });
    }
    let active = active_categories(ctx.sched, step_index, ctx.n_steps);
    let report = StepReport::new(step_index, t, &active);
    let inject = !active.is_empty() && !layers.is_empty();

    let mut terms: Vec<(f64, VideoTensor)> = Vec::with_capacity(layers.len() + 1);
    let base = if inject || ctx.omega[0] != 0.0 {
        let (eps0, taps) = ctx.unet.forward(xt, t, &ConditionSet::null(), None, inject)?;
        if ctx.omega[0] != 0.0 {
            terms.push((ctx.omega[0], eps0));
        }
        taps.map(|taps| InjectionBundle::from_taps(taps, |c| active.contains(&c)))
    } else {
        None
    };

    let ids: Vec<u32> = layers.iter().map(|l| l.id).collect();
    let cond_all = ConditionSet::new(ids)?;
    let refs: Vec<&ObjectLayer> = layers.iter().collect();
    let prefix_terms: Vec<Option<(f64, VideoTensor)>> = (1..=layers.len())
        .into_par_iter()
        .map(|i| {
            let w = ctx.omega[i];
            if w == 0.0 {
                return Ok(None);
            }
            let bundle = match &base {
                Some(b) => Some(compose_layers(b, &refs[..i], t)?),
                None => None,
            };
            let (eps, _) = ctx.unet.forward(xt, t, &cond_all.prefix(i), bundle.as_ref(), false)?;
            Ok(Some((w, eps)))
        })
        .collect::<Result<_>>()?;
    terms.extend(prefix_terms.into_iter().flatten());

    if terms.is_empty() {
        return Ok((VideoTensor::zeros(xt.dims()), report));
    }
    let (w, e): (Vec<f64>, Vec<&VideoTensor>) = terms.iter().map(|(w, e)| (*w, e)).unzip();
    Ok((compose_eps_omega(&e, &w)?, report))
}
