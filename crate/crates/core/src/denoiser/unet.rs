//! Seeded, untrained mini-UNet with spatial and temporal self-attention.
//!
//! Layout (widths `w0`, `w1`):
//!
//! ```text
//! [x_t/√ᾱ_t ‖ cond one-hot] → conv_in ──────────────────────── F_n ───┐
//!   → pool → res(w0) F_r0 → spatial A_s0 → temporal A_t0 ─── skip ──┐ │
//!   → pool → res(w1) F_r1 → spatial A_s1 → temporal A_t1            │ │
//!   → res(w1) F_r2                                                  │ │
//!   → up → [‖ skip] → res(w0) F_r3 ─────────────────────────────────┘ │
//!   → up → [‖ F_n]  → res(w0) F_r4 ───────────────────────────────────┘
//!   → conv_out → head,  x̂0 = z + √(1 − ᾱ_t)(head − z),  z = x_t/√ᾱ_t
//! ```
//!
//! Weights are i.i.d. Gaussian with standard deviation `init_scale/√fan_in`
//! (unit gain for attention queries, keys and values), drawn from `seed`. The input conv,
//! the channel-changing skip convolutions and the output conv additionally
//! carry an identity embedding on the data channels, so image content flows
//! through the tap sites; replacing a tap therefore changes what the network
//! reconstructs there.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ConditionSet, NoisePredictor};
use crate::error::{MvocError, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TapCategory {
    /// Input-stage features.
    #[serde(rename = "fn")]
    InputFeature,
    /// Residual-block outputs.
    #[serde(rename = "fr")]
    ResidualFeature,
    /// Temporal self-attention maps.
    #[serde(rename = "at")]
    TemporalAttention,
    /// Spatial self-attention maps.
    #[serde(rename = "as")]
    SpatialAttention,
}

impl TapCategory {
    pub const ALL: [TapCategory; 4] = [
        TapCategory::InputFeature,
        TapCategory::ResidualFeature,
        TapCategory::TemporalAttention,
        TapCategory::SpatialAttention,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            TapCategory::InputFeature => "fn",
            TapCategory::ResidualFeature => "fr",
            TapCategory::TemporalAttention => "at",
            TapCategory::SpatialAttention => "as",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub cond_slots: usize,
    pub widths: [usize; 2],
    pub temb_dim: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            cond_slots: 4,
            widths: [16, 32],
            temb_dim: 16,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    /// One `N×N` block per frame over the `N = h·w` spatial tokens.
    Spatial,
    /// One `F×F` block per spatial position over the frames.
    Temporal,
}

/// Post-softmax attention probabilities for one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub kind: AttentionKind,
    pub frames: usize,
    pub grid: (usize, usize),
    pub data: Vec<f64>,
}

impl AttentionMap {
    pub fn tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }
    /// Side length of each square block.
    pub fn block_size(&self) -> usize {
        match self.kind {
            AttentionKind::Spatial => self.tokens(),
            AttentionKind::Temporal => self.frames,
        }
    }
    pub fn block_count(&self) -> usize {
        match self.kind {
            AttentionKind::Spatial => self.frames,
            AttentionKind::Temporal => self.tokens(),
        }
    }
    pub fn block(&self, b: usize) -> &[f64] {
        let n = self.block_size();
        &self.data[b * n * n..(b + 1) * n * n]
    }
    pub fn same_geometry(&self, other: &AttentionMap) -> bool {
        self.kind == other.kind && self.frames == other.frames && self.grid == other.grid
    }
    /// Largest `|row sum − 1|` over every row of every block.
    pub fn max_row_sum_error(&self) -> f64 {
        let n = self.block_size();
        self.data
            .chunks_exact(n)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Every tap site of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetTapSet {
    pub f_n: VideoTensor,
    pub f_r: Vec<VideoTensor>,
    pub a_s: Vec<AttentionMap>,
    pub a_t: Vec<AttentionMap>,
}

/// Replacement values for tap sites; `None` leaves a category untouched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InjectionBundle {
    pub f_n: Option<VideoTensor>,
    pub f_r: Option<Vec<VideoTensor>>,
    pub a_s: Option<Vec<AttentionMap>>,
    pub a_t: Option<Vec<AttentionMap>>,
}

impl InjectionBundle {
    /// Keeps only the categories for which `active` is true.
    pub fn from_taps(taps: UNetTapSet, active: impl Fn(TapCategory) -> bool) -> Self {
        Self {
            f_n: active(TapCategory::InputFeature).then_some(taps.f_n),
            f_r: active(TapCategory::ResidualFeature).then_some(taps.f_r),
            a_s: active(TapCategory::SpatialAttention).then_some(taps.a_s),
            a_t: active(TapCategory::TemporalAttention).then_some(taps.a_t),
        }
    }

    pub fn is_active(&self, c: TapCategory) -> bool {
        match c {
            TapCategory::InputFeature => self.f_n.is_some(),
            TapCategory::ResidualFeature => self.f_r.is_some(),
            TapCategory::SpatialAttention => self.a_s.is_some(),
            TapCategory::TemporalAttention => self.a_t.is_some(),
        }
    }

    pub fn is_empty(&self) -> bool {
        TapCategory::ALL.iter().all(|&c| !self.is_active(c))
    }
}

// ---------------------------------------------------------------- layers

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    gain: f64,
}

impl Init {
    /// `n` draws with standard deviation `gain / √fan_in`.
    fn vec(&mut self, n: usize, fan_in: usize, gain: f64) -> Vec<f64> {
        let k = gain / (fan_in as f64).sqrt();
        (0..n).map(|_| k * self.normal.sample(&mut self.rng)).collect()
    }
}

struct Conv {
    cin: usize,
    cout: usize,
    k: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Conv {
    fn new(init: &mut Init, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            cin,
            cout,
            k,
            w: init.vec(cout * cin * k * k, cin * k * k, init.gain),
            b: init.vec(cout, cin * k * k, init.gain),
        }
    }

    /// Adds 1 at the centre tap mapping input channel `src + c` to output `c`.
    fn embed_identity(mut self, src: usize, count: usize) -> Self {
        let k = self.k;
        let centre = (k / 2) * k + k / 2;
        for c in 0..count {
            self.w[(c * self.cin + src + c) * k * k + centre] += 1.0;
        }
        self
    }

    fn forward(&self, x: &VideoTensor) -> VideoTensor {
        let [nf, cin, h, w] = x.dims();
        debug_assert_eq!(cin, self.cin);
        let mut out = VideoTensor::zeros([nf, self.cout, h, w]);
        let pad = (self.k / 2) as isize;
        for f in 0..nf {
            for co in 0..self.cout {
                let dst = out.plane_mut(f, co);
                dst.fill(self.b[co]);
                for ci in 0..cin {
                    let src = x.plane(f, ci);
                    for ky in 0..self.k {
                        let dy = ky as isize - pad;
                        let y_lo = (-dy).max(0) as usize;
                        let y_hi = (h as isize - dy).min(h as isize) as usize;
                        for kx in 0..self.k {
                            let wv = self.w[((co * cin + ci) * self.k + ky) * self.k + kx];
                            let dx = kx as isize - pad;
                            let x_lo = (-dx).max(0) as usize;
                            let x_hi = (w as isize - dx).min(w as isize) as usize;
                            for y in y_lo..y_hi {
                                let sy = (y as isize + dy) as usize;
                                let s0 = sy * w + (x_lo as isize + dx) as usize;
                                let srow = &src[s0..s0 + (x_hi - x_lo)];
                                let drow = &mut dst[y * w + x_lo..y * w + x_hi];
                                for (d, s) in drow.iter_mut().zip(srow) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    temb_w: Vec<f64>,
    temb_b: Vec<f64>,
    skip: Option<Conv>,
}

impl ResBlock {
    fn new(init: &mut Init, cin: usize, cout: usize, temb_dim: usize, identity_src: usize) -> Self {
        let conv1 = Conv::new(init, cin, cout, 3);
        let conv2 = Conv::new(init, cout, cout, 3);
        let temb_w = init.vec(cout * temb_dim, temb_dim, init.gain);
        let temb_b = init.vec(cout, temb_dim, init.gain);
        let skip = (cin != cout).then(|| {
            let n = cout.min(cin - identity_src);
            Conv::new(init, cin, cout, 1).embed_identity(identity_src, n)
        });
        Self {
            conv1,
            conv2,
            temb_w,
            temb_b,
            skip,
        }
    }

    fn forward(&self, x: &VideoTensor, temb: &[f64]) -> VideoTensor {
        let mut h = self.conv1.forward(&silu(x));
        let cout = self.conv1.cout;
        let [nf, _, _, _] = h.dims();
        for c in 0..cout {
            let row = &self.temb_w[c * temb.len()..(c + 1) * temb.len()];
            let bias = self.temb_b[c] + row.iter().zip(temb).map(|(a, b)| a * b).sum::<f64>();
            for f in 0..nf {
                h.plane_mut(f, c).iter_mut().for_each(|v| *v += bias);
            }
        }
        let h = self.conv2.forward(&silu(&h));
        let mut out = match &self.skip {
            Some(s) => s.forward(x),
            None => x.clone(),
        };
        out.data_mut().iter_mut().zip(h.data()).for_each(|(o, v)| *o += v);
        out
    }
}

struct Attention {
    c: usize,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
}

impl Attention {
    fn new(init: &mut Init, c: usize) -> Self {
        Self {
            c,
            // unit-gain queries, keys and values keep the maps non-trivial;
            // the output projection sets how much attention moves features
            wq: init.vec(c * c, c, 1.0),
            wk: init.vec(c * c, c, 1.0),
            wv: init.vec(c * c, c, 1.0),
            wo: init.vec(c * c, c, init.gain),
        }
    }

    /// `tok` is `n×c`; returns the residual update `(A·V)·W_oᵀ` (`n×c`).
    /// `map` receives the probabilities actually used (override or softmax).
    fn attend(&self, tok: &[f64], n: usize, ov: Option<&[f64]>, map: &mut [f64]) -> Vec<f64> {
        let c = self.c;
        let mut normed = vec![0.0; n * c];
        for i in 0..n {
            let row = &tok[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for j in 0..c {
                normed[i * c + j] = (row[j] - mean) * inv;
            }
        }
        let project = |w: &[f64]| {
            let mut out = vec![0.0; n * c];
            for i in 0..n {
                let x = &normed[i * c..(i + 1) * c];
                for o in 0..c {
                    out[i * c + o] = w[o * c..(o + 1) * c].iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            out
        };
        let v = project(&self.wv);
        match ov {
            Some(a) => map.copy_from_slice(a),
            None => {
                let q = project(&self.wq);
                let k = project(&self.wk);
                let scale = 1.0 / (c as f64).sqrt();
                for i in 0..n {
                    let qi = &q[i * c..(i + 1) * c];
                    let row = &mut map[i * n..(i + 1) * n];
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = scale * qi.iter().zip(&k[j * c..(j + 1) * c]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for r in row.iter_mut() {
                        *r = (*r - max).exp();
                        z += *r;
                    }
                    row.iter_mut().for_each(|r| *r /= z);
                }
            }
        }
        let mut av = vec![0.0; n * c];
        for i in 0..n {
            let dst = &mut av[i * c..(i + 1) * c];
            for j in 0..n {
                let p = map[i * n + j];
                if p == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(&v[j * c..(j + 1) * c]) {
                    *d += p * s;
                }
            }
        }
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let a = &av[i * c..(i + 1) * c];
            for o in 0..c {
                out[i * c + o] = self.wo[o * c..(o + 1) * c].iter().zip(a).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    fn spatial(&self, x: &VideoTensor, ov: Option<&AttentionMap>) -> (VideoTensor, AttentionMap) {
        let [nf, c, h, w] = x.dims();
        let n = h * w;
        let mut map = AttentionMap {
            kind: AttentionKind::Spatial,
            frames: nf,
            grid: (h, w),
            data: vec![0.0; nf * n * n],
        };
        let mut out = x.clone();
        let mut tok = vec![0.0; n * c];
        for f in 0..nf {
            for ch in 0..c {
                for (p, v) in x.plane(f, ch).iter().enumerate() {
                    tok[p * c + ch] = *v;
                }
            }
            let block = &mut map.data[f * n * n..(f + 1) * n * n];
            let delta = self.attend(&tok, n, ov.map(|m| m.block(f)), block);
            for ch in 0..c {
                for (p, o) in out.plane_mut(f, ch).iter_mut().enumerate() {
                    *o += delta[p * c + ch];
                }
            }
        }
        (out, map)
    }

    fn temporal(&self, x: &VideoTensor, ov: Option<&AttentionMap>) -> (VideoTensor, AttentionMap) {
        let [nf, c, h, w] = x.dims();
        let n = h * w;
        let mut map = AttentionMap {
            kind: AttentionKind::Temporal,
            frames: nf,
            grid: (h, w),
            data: vec![0.0; n * nf * nf],
        };
        let mut out = x.clone();
        let mut tok = vec![0.0; nf * c];
        for p in 0..n {
            for f in 0..nf {
                for ch in 0..c {
                    tok[f * c + ch] = x.data()[x.offset(f, ch, 0, 0) + p];
                }
            }
            let block = &mut map.data[p * nf * nf..(p + 1) * nf * nf];
            let delta = self.attend(&tok, nf, ov.map(|m| m.block(p)), block);
            for f in 0..nf {
                for ch in 0..c {
                    let o = out.offset(f, ch, 0, 0) + p;
                    out.data_mut()[o] += delta[f * c + ch];
                }
            }
        }
        (out, map)
    }
}

fn silu(x: &VideoTensor) -> VideoTensor {
    x.map(|v| v / (1.0 + (-v).exp()))
}

fn avg_pool2(x: &VideoTensor) -> VideoTensor {
    let [nf, c, h, w] = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = VideoTensor::zeros([nf, c, oh, ow]);
    for f in 0..nf {
        for ch in 0..c {
            let src = x.plane(f, ch);
            let dst = out.plane_mut(f, ch);
            for y in 0..oh {
                for xx in 0..ow {
                    let s = src[2 * y * w + 2 * xx]
                        + src[2 * y * w + 2 * xx + 1]
                        + src[(2 * y + 1) * w + 2 * xx]
                        + src[(2 * y + 1) * w + 2 * xx + 1];
                    dst[y * ow + xx] = 0.25 * s;
                }
            }
        }
    }
    out
}

fn upsample2(x: &VideoTensor) -> VideoTensor {
    let [nf, c, h, w] = x.dims();
    VideoTensor::from_fn([nf, c, 2 * h, 2 * w], |f, ch, y, xx| x.get(f, ch, y / 2, xx / 2))
}

fn concat_channels(a: &VideoTensor, b: &VideoTensor) -> VideoTensor {
    let [nf, ca, h, w] = a.dims();
    let cb = b.channels();
    let mut data = Vec::with_capacity((ca + cb) * nf * h * w);
    for f in 0..nf {
        let n = h * w;
        data.extend_from_slice(&a.data()[f * ca * n..(f + 1) * ca * n]);
        data.extend_from_slice(&b.data()[f * cb * n..(f + 1) * cb * n]);
    }
    VideoTensor::from_vec([nf, ca + cb, h, w], data).expect("concat dims")
}

fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half.max(1) as f64).exp();
        out.push((t as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half.max(1) as f64).exp();
        out.push((t as f64 * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

// ---------------------------------------------------------------- network

const RESIDUAL_SITES: usize = 5;
const ATTENTION_SITES: usize = 2;

pub struct MiniUNet {
    config: UNetConfig,
    schedule: NoiseSchedule,
    conv_in: Conv,
    res: Vec<ResBlock>,
    s_attn: Vec<Attention>,
    t_attn: Vec<Attention>,
    conv_out: Conv,
}

impl std::fmt::Debug for MiniUNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MiniUNet").field("config", &self.config).finish_non_exhaustive()
    }
}

/// What a pass should stop after and collect.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Depth {
    Full,
    /// Stops after the down path; only F_n, F_r0..1 and attention maps exist.
    DownPath,
}

struct PassOutput {
    eps: Option<VideoTensor>,
    f_n: Option<VideoTensor>,
    f_r: Vec<VideoTensor>,
    a_s: Vec<AttentionMap>,
    a_t: Vec<AttentionMap>,
}

impl MiniUNet {
    pub fn new(config: UNetConfig, schedule: NoiseSchedule) -> Result<Self> {
        let [w0, w1] = config.widths;
        if config.in_channels == 0 || w0 < config.in_channels || w1 < w0 || config.temb_dim == 0 {
            return Err(MvocError::Param(format!(
                "unet widths {:?} must satisfy in_channels <= w0 <= w1",
                config.widths
            )));
        }
        if !(config.init_scale.is_finite() && config.init_scale > 0.0) {
            return Err(MvocError::Param("init_scale must be positive".into()));
        }
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            normal: Normal::new(0.0, 1.0).expect("valid normal"),
            gain: config.init_scale,
        };
        let c = config.in_channels;
        let conv_in = Conv::new(&mut init, c + config.cond_slots, w0, 3).embed_identity(0, c);
        let td = config.temb_dim;
        let res = vec![
            ResBlock::new(&mut init, w0, w0, td, 0),
            ResBlock::new(&mut init, w0, w1, td, 0),
            ResBlock::new(&mut init, w1, w1, td, 0),
            // up path: identity taken from the skip connection half
            ResBlock::new(&mut init, w1 + w0, w0, td, w1),
            ResBlock::new(&mut init, w0 + w0, w0, td, w0),
        ];
        let s_attn = vec![Attention::new(&mut init, w0), Attention::new(&mut init, w1)];
        let t_attn = vec![Attention::new(&mut init, w0), Attention::new(&mut init, w1)];
        let conv_out = Conv::new(&mut init, w0, c, 3).embed_identity(0, c);
        Ok(Self {
            config,
            schedule,
            conv_in,
            res,
            s_attn,
            t_attn,
            conv_out,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }
    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// ε prediction, optionally overriding tap sites and recording all taps.
    /// Recorded taps are the values actually used downstream.
    pub fn forward(
        &self,
        xt: &VideoTensor,
        t: usize,
        cond: &ConditionSet,
        overrides: Option<&InjectionBundle>,
        record: bool,
    ) -> Result<(VideoTensor, Option<UNetTapSet>)> {
        let out = self.pass(xt, t, cond, overrides, Depth::Full)?;
        let taps = record.then(|| UNetTapSet {
            f_n: out.f_n.expect("full pass records F_n"),
            f_r: out.f_r,
            a_s: out.a_s,
            a_t: out.a_t,
        });
        Ok((out.eps.expect("full pass produces eps"), taps))
    }

    /// Records only the requested categories, running no further than needed.
    pub fn record_taps(&self, xt: &VideoTensor, t: usize, cond: &ConditionSet, wanted: &[TapCategory]) -> Result<InjectionBundle> {
        let depth = if wanted.contains(&TapCategory::ResidualFeature) {
            Depth::Full
        } else {
            Depth::DownPath
        };
        let out = self.pass(xt, t, cond, None, depth)?;
        let want = |c| wanted.contains(&c);
        Ok(InjectionBundle {
            f_n: if want(TapCategory::InputFeature) { out.f_n } else { None },
            f_r: want(TapCategory::ResidualFeature).then_some(out.f_r),
            a_s: want(TapCategory::SpatialAttention).then_some(out.a_s),
            a_t: want(TapCategory::TemporalAttention).then_some(out.a_t),
        })
    }

    fn validate_input(&self, xt: &VideoTensor, t: usize) -> Result<()> {
        let [_, c, h, w] = xt.dims();
        if c != self.config.in_channels {
            return Err(MvocError::Shape(format!(
                "unet expects {} channels, got {c}",
                self.config.in_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(MvocError::Shape(format!("unet needs H, W divisible by 4, got {h}x{w}")));
        }
        if t == 0 || t > self.schedule.total() {
            return Err(MvocError::Range {
                t,
                lo: 1,
                hi: self.schedule.total(),
            });
        }
        Ok(())
    }

    fn validate_overrides(&self, xt: &VideoTensor, ov: &InjectionBundle) -> Result<()> {
        let [nf, _, h, w] = xt.dims();
        let [w0, w1] = self.config.widths;
        let feature_dims = [
            [nf, w0, h / 2, w / 2],
            [nf, w1, h / 4, w / 4],
            [nf, w1, h / 4, w / 4],
            [nf, w0, h / 2, w / 2],
            [nf, w0, h, w],
        ];
        let err = |site: String, detail: String| MvocError::InjectionShape { site, detail };
        if let Some(f) = &ov.f_n {
            if f.dims() != [nf, w0, h, w] {
                return Err(err("F_n".into(), format!("{:?} vs {:?}", f.dims(), [nf, w0, h, w])));
            }
        }
        if let Some(fr) = &ov.f_r {
            if fr.len() != RESIDUAL_SITES {
                return Err(err("F_r".into(), format!("{} maps, need {RESIDUAL_SITES}", fr.len())));
            }
            for (i, (f, d)) in fr.iter().zip(&feature_dims).enumerate() {
                if f.dims() != *d {
                    return Err(err(format!("F_r[{i}]"), format!("{:?} vs {d:?}", f.dims())));
                }
            }
        }
        let grids = [(h / 2, w / 2), (h / 4, w / 4)];
        for (name, maps, kind) in [
            ("A_s", &ov.a_s, AttentionKind::Spatial),
            ("A_t", &ov.a_t, AttentionKind::Temporal),
        ] {
            let Some(maps) = maps else { continue };
            if maps.len() != ATTENTION_SITES {
                return Err(err(name.into(), format!("{} maps, need {ATTENTION_SITES}", maps.len())));
            }
            for (i, (m, g)) in maps.iter().zip(grids).enumerate() {
                let expected = m.block_count() * m.block_size() * m.block_size();
                if m.kind != kind || m.frames != nf || m.grid != g || m.data.len() != expected {
                    return Err(err(
                        format!("{name}[{i}]"),
                        format!("{:?} {} frames grid {:?} vs {kind:?} {nf} frames grid {g:?}", m.kind, m.frames, m.grid),
                    ));
                }
            }
        }
        Ok(())
    }

    fn pass(&self, xt: &VideoTensor, t: usize, cond: &ConditionSet, ov: Option<&InjectionBundle>, depth: Depth) -> Result<PassOutput> {
        self.validate_input(xt, t)?;
        if let Some(ov) = ov {
            self.validate_overrides(xt, ov)?;
        }
        let ab = self.schedule.alpha_bar(t);
        let [nf, c, h, w] = xt.dims();
        let k = self.config.cond_slots;
        let scaled = xt.scale(1.0 / ab.sqrt());
        let mut cond_planes = VideoTensor::zeros([nf, k.max(1), h, w]);
        for id in cond.ids() {
            if k == 0 {
                break;
            }
            let slot = *id as usize % k;
            for f in 0..nf {
                cond_planes.plane_mut(f, slot).fill(1.0);
            }
        }
        let input = if k == 0 { scaled } else { concat_channels(&scaled, &cond_planes) };
        let temb = timestep_embedding(t, self.config.temb_dim);

        let ov_f_r = |i: usize| ov.and_then(|o| o.f_r.as_ref()).map(|v| v[i].clone());
        let ov_as = |i: usize| ov.and_then(|o| o.a_s.as_ref()).map(|v| &v[i]);
        let ov_at = |i: usize| ov.and_then(|o| o.a_t.as_ref()).map(|v| &v[i]);

        let f_n = match ov.and_then(|o| o.f_n.as_ref()) {
            Some(f) => f.clone(),
            None => self.conv_in.forward(&input),
        };
        let mut f_r = Vec::with_capacity(RESIDUAL_SITES);
        let mut a_s = Vec::with_capacity(ATTENTION_SITES);
        let mut a_t = Vec::with_capacity(ATTENTION_SITES);

        let mut hcur = avg_pool2(&f_n);
        let mut skip = None;
        for level in 0..ATTENTION_SITES {
            if level > 0 {
                hcur = avg_pool2(&hcur);
            }
            hcur = ov_f_r(level).unwrap_or_else(|| self.res[level].forward(&hcur, &temb));
            f_r.push(hcur.clone());
            let (hs, ms) = self.s_attn[level].spatial(&hcur, ov_as(level));
            let (ht, mt) = self.t_attn[level].temporal(&hs, ov_at(level));
            a_s.push(ms);
            a_t.push(mt);
            hcur = ht;
            if level == 0 {
                skip = Some(hcur.clone());
            }
        }
        if depth == Depth::DownPath {
            return Ok(PassOutput {
                eps: None,
                f_n: Some(f_n),
                f_r,
                a_s,
                a_t,
            });
        }
        hcur = ov_f_r(2).unwrap_or_else(|| self.res[2].forward(&hcur, &temb));
        f_r.push(hcur.clone());
        let up = concat_channels(&upsample2(&hcur), skip.as_ref().expect("level 0 ran"));
        hcur = ov_f_r(3).unwrap_or_else(|| self.res[3].forward(&up, &temb));
        f_r.push(hcur.clone());
        let up = concat_channels(&upsample2(&hcur), &f_n);
        hcur = ov_f_r(4).unwrap_or_else(|| self.res[4].forward(&up, &temb));
        f_r.push(hcur.clone());
        let x0_hat = self.conv_out.forward(&hcur);
        debug_assert_eq!(x0_hat.dims(), [nf, c, h, w]);

        // x̂0 = z + √(1−ᾱ)(head − z) with z = x_t/√ᾱ, so the head's departure
        // from identity fades as t → 0; this reduces to ε = x_t − √ᾱ·head.
        let eps = xt.lincomb(1.0, &x0_hat, -ab.sqrt())?;
        if !eps.is_finite() {
            return Err(MvocError::NonFinite(format!("unet eps at t={t}")));
        }
        Ok(PassOutput {
            eps: Some(eps),
            f_n: Some(f_n),
            f_r,
            a_s,
            a_t,
        })
    }
}

impl NoisePredictor for MiniUNet {
    fn predict(&self, xt: &VideoTensor, t: usize, cond: &ConditionSet) -> Result<VideoTensor> {
        Ok(self.forward(xt, t, cond, None, false)?.0)
    }
}
