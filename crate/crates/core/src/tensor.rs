//! Dense video tensors, spatial masks, flow fields and affine placement.
//!
//! Everything here is a plain value type. `VideoTensor` stores `(frame,
//! channel, height, width)` in row-major order; `Mask` drops the channel
//! axis and is broadcast over channels wherever it gates a tensor.

use crate::error::{MvocError, Result};

/// Rank-4 `(F, C, H, W)` array of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(MvocError::Shape(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MvocError::NonFinite("VideoTensor data".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 4], value: f64) -> Self {
        assert!(value.is_finite());
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f(frame, channel, row, col)`.
    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(dims);
        let [nf, nc, nh, nw] = dims;
        let mut i = 0;
        for fi in 0..nf {
            for c in 0..nc {
                for y in 0..nh {
                    for x in 0..nw {
                        out.data[i] = f(fi, c, y, x);
                        i += 1;
                    }
                }
            }
        }
        debug_assert!(out.data.iter().all(|v| v.is_finite()));
        out
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    pub fn frames(&self) -> usize {
        self.dims[0]
    }
    pub fn channels(&self) -> usize {
        self.dims[1]
    }
    pub fn height(&self) -> usize {
        self.dims[2]
    }
    pub fn width(&self) -> usize {
        self.dims[3]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    /// Mutable view of the payload. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        ((f * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }
    #[inline]
    pub fn get(&self, f: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(f, c, y, x)]
    }
    #[inline]
    pub fn set(&mut self, f: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.offset(f, c, y, x);
        self.data[o] = v;
    }

    /// One `(H, W)` plane.
    pub fn plane(&self, f: usize, c: usize) -> &[f64] {
        let n = self.dims[2] * self.dims[3];
        let o = self.offset(f, c, 0, 0);
        &self.data[o..o + n]
    }
    pub fn plane_mut(&mut self, f: usize, c: usize) -> &mut [f64] {
        let n = self.dims[2] * self.dims[3];
        let o = self.offset(f, c, 0, 0);
        &mut self.data[o..o + n]
    }

    /// Single frame as a `(1, C, H, W)` tensor.
    pub fn frame(&self, f: usize) -> VideoTensor {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        VideoTensor {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[f * n..(f + 1) * n].to_vec(),
        }
    }

    /// Stacks `(1, C, H, W)` (or longer) tensors along the frame axis.
    pub fn stack_frames(parts: &[VideoTensor]) -> Result<VideoTensor> {
        let first = parts
            .first()
            .ok_or_else(|| MvocError::Shape("cannot stack zero frames".into()))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::new();
        let mut frames = 0;
        for p in parts {
            if p.dims[1..] != [c, h, w] {
                return Err(MvocError::Shape(format!(
                    "frame dims {:?} vs {:?}",
                    p.dims,
                    first.dims
                )));
            }
            frames += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(VideoTensor {
            dims: [frames, c, h, w],
            data,
        })
    }

    pub fn ensure_same_dims(&self, other: &VideoTensor, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(MvocError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VideoTensor {
        VideoTensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &VideoTensor, f: impl Fn(f64, f64) -> f64) -> Result<VideoTensor> {
        self.ensure_same_dims(other, "zip_map")?;
        Ok(VideoTensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: f64) -> VideoTensor {
        self.map(|v| v * k)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &VideoTensor, b: f64) -> Result<VideoTensor> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn add(&self, other: &VideoTensor) -> Result<VideoTensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &VideoTensor) -> Result<VideoTensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &VideoTensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// ‖self − other‖ / ‖other‖.
    pub fn rel_l2(&self, reference: &VideoTensor) -> f64 {
        assert_eq!(self.dims, reference.dims);
        let num: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        num.sqrt() / reference.l2_norm().max(f64::MIN_POSITIVE)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(MvocError::Shape(format!("dims must be positive, got {dims:?}")));
    }
    Ok(())
}

/// Spatial gate `(F, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Mask {
    /// Values are clamped into `[0, 1]`.
    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(MvocError::Shape(format!(
                "mask dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MvocError::NonFinite("Mask data".into()));
        }
        Ok(Self {
            dims,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Self {
        assert!(dims.iter().all(|&d| d > 0));
        Self {
            dims,
            data: vec![value.clamp(0.0, 1.0); dims.iter().product()],
        }
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn ones(dims: [usize; 3]) -> Self {
        Self::filled(dims, 1.0)
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dims);
        let [nf, nh, nw] = dims;
        for fi in 0..nf {
            for y in 0..nh {
                for x in 0..nw {
                    m.data[(fi * nh + y) * nw + x] = f(fi, y, x).clamp(0.0, 1.0);
                }
            }
        }
        m
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn frames(&self) -> usize {
        self.dims[0]
    }
    pub fn height(&self) -> usize {
        self.dims[1]
    }
    pub fn width(&self) -> usize {
        self.dims[2]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn get(&self, f: usize, y: usize, x: usize) -> f64 {
        self.data[(f * self.dims[1] + y) * self.dims[2] + x]
    }
    #[inline]
    pub fn set(&mut self, f: usize, y: usize, x: usize, v: f64) {
        let o = (f * self.dims[1] + y) * self.dims[2] + x;
        self.data[o] = v.clamp(0.0, 1.0);
    }
    pub fn plane(&self, f: usize) -> &[f64] {
        let n = self.dims[1] * self.dims[2];
        &self.data[f * n..(f + 1) * n]
    }

    pub fn binarize(&self, threshold: f64) -> Mask {
        Mask {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn frame(&self, f: usize) -> Mask {
        Mask {
            dims: [1, self.dims[1], self.dims[2]],
            data: self.plane(f).to_vec(),
        }
    }

    /// Frames `[start, end)`.
    pub fn frame_range(&self, start: usize, end: usize) -> Mask {
        let n = self.dims[1] * self.dims[2];
        Mask {
            dims: [end - start, self.dims[1], self.dims[2]],
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    /// Pointwise product (intersection for binary masks).
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.dims != other.dims {
            return Err(MvocError::Shape(format!(
                "mask dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Mask {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    /// Single-channel tensor view, for persistence and warping.
    pub fn to_tensor(&self) -> VideoTensor {
        VideoTensor {
            dims: [self.dims[0], 1, self.dims[1], self.dims[2]],
            data: self.data.clone(),
        }
    }
}

/// Per-pixel displacement `(dy, dx)` from frame `t` to frame `t + G`,
/// stored as `(F − G, 2, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(VideoTensor);

impl FlowField {
    pub fn new(t: VideoTensor) -> Result<Self> {
        if t.channels() != 2 {
            return Err(MvocError::Shape(format!(
                "flow needs 2 channels, got {:?}",
                t.dims()
            )));
        }
        let bound = t.height().max(t.width()) as f64;
        if t.data().iter().any(|v| v.abs() > bound) {
            return Err(MvocError::Param(format!(
                "flow displacement exceeds max(H, W) = {bound}"
            )));
        }
        Ok(Self(t))
    }

    pub fn zeros(pairs: usize, h: usize, w: usize) -> Self {
        Self(VideoTensor::zeros([pairs, 2, h, w]))
    }

    pub fn pairs(&self) -> usize {
        self.0.frames()
    }
    pub fn height(&self) -> usize {
        self.0.height()
    }
    pub fn width(&self) -> usize {
        self.0.width()
    }
    /// `(dy, dx)` at pair `k`, pixel `(y, x)`.
    #[inline]
    pub fn at(&self, k: usize, y: usize, x: usize) -> (f64, f64) {
        (self.0.get(k, 0, y, x), self.0.get(k, 1, y, x))
    }
    pub fn frame(&self, k: usize) -> FlowField {
        FlowField(self.0.frame(k))
    }
    pub fn as_tensor(&self) -> &VideoTensor {
        &self.0
    }
    pub fn into_tensor(self) -> VideoTensor {
        self.0
    }
}

/// 2×3 affine map acting on `(row, col)` pixel-centre coordinates:
/// `p' = L·p + t`, with `L = [[m00, m01], [m10, m11]]`, `t = (m02, m12)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "[[f64; 3]; 2]", into = "[[f64; 3]; 2]")]
pub struct AffineTransform {
    m: [[f64; 3]; 2],
}

impl TryFrom<[[f64; 3]; 2]> for AffineTransform {
    type Error = MvocError;
    fn try_from(m: [[f64; 3]; 2]) -> Result<Self> {
        AffineTransform::new(m)
    }
}

impl From<AffineTransform> for [[f64; 3]; 2] {
    fn from(t: AffineTransform) -> Self {
        t.m
    }
}

const MIN_DET: f64 = 1e-9;

impl AffineTransform {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MvocError::NonFinite("affine matrix".into()));
        }
        let t = Self { m };
        let det = t.det();
        if det.abs() <= MIN_DET {
            return Err(MvocError::SingularTransform { det });
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(dy: f64, dx: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dy], [0.0, 1.0, dx]],
        }
    }

    /// Uniform scale about the origin followed by a translation.
    pub fn scale_translate(s: f64, dy: f64, dx: f64) -> Result<Self> {
        Self::new([[s, 0.0, dy], [0.0, s, dx]])
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        self.m
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply(&self, y: f64, x: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * y + m[0][1] * x + m[0][2],
            m[1][0] * y + m[1][1] * x + m[1][2],
        )
    }

    /// Applies only the linear block (for displacement vectors).
    pub fn apply_linear(&self, dy: f64, dx: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * dy + m[0][1] * dx, m[1][0] * dy + m[1][1] * dx)
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if det.abs() <= MIN_DET {
            return Err(MvocError::SingularTransform { det });
        }
        let [[a, b, ty], [c, d, tx]] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Self {
            m: [
                [ia, ib, -(ia * ty + ib * tx)],
                [ic, id, -(ic * ty + id * tx)],
            ],
        })
    }

    /// The same placement expressed on a grid downsampled by `factor`
    /// (pixel centres aligned, as produced by `factor × factor` average pooling).
    pub fn at_resolution(&self, factor: f64) -> Self {
        if factor == 1.0 {
            return *self;
        }
        let c = (factor - 1.0) / 2.0;
        let (ly, lx) = self.apply_linear(c, c);
        let [[a, b, ty], [cc, d, tx]] = self.m;
        Self {
            m: [
                [a, b, (ly + ty - c) / factor],
                [cc, d, (lx + tx - c) / factor],
            ],
        }
    }
}

/// Bilinear sample with zero padding; returns `(value, fully_in_bounds)`.
pub(crate) fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> (f64, bool) {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (iy, ix) = (y0 as i64, x0 as i64);
    let hi = h as i64;
    let wi = w as i64;
    let tap = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= hi || xx >= wi {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let inside = y >= 0.0 && x >= 0.0 && y <= (h - 1) as f64 && x <= (w - 1) as f64;
    if fy == 0.0 && fx == 0.0 {
        return (tap(iy, ix), inside);
    }
    let v = tap(iy, ix) * (1.0 - fy) * (1.0 - fx)
        + tap(iy, ix + 1) * (1.0 - fy) * fx
        + tap(iy + 1, ix) * fy * (1.0 - fx)
        + tap(iy + 1, ix + 1) * fy * fx;
    (v, inside)
}

fn warp_plane(src: &[f64], sh: usize, sw: usize, inv: &AffineTransform, out: &mut [f64], oh: usize, ow: usize) {
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = inv.apply(y as f64, x as f64);
            out[y * ow + x] = bilinear(src, sh, sw, sy, sx).0;
        }
    }
}

/// `base ⊙ (1 − M) + overlay ⊙ M`, with `M` broadcast over channels.
pub fn hadamard_blend(base: &VideoTensor, overlay: &VideoTensor, mask: &Mask) -> Result<VideoTensor> {
    base.ensure_same_dims(overlay, "hadamard_blend")?;
    let [f, c, h, w] = base.dims();
    if mask.dims() != [f, h, w] {
        return Err(MvocError::Shape(format!(
            "mask {:?} does not gate tensor {:?}",
            mask.dims(),
            base.dims()
        )));
    }
    let mut out = base.clone();
    let n = h * w;
    for fi in 0..f {
        let m = mask.plane(fi);
        for ci in 0..c {
            let o = base.offset(fi, ci, 0, 0);
            let b = &base.data[o..o + n];
            let v = &overlay.data[o..o + n];
            for (i, dst) in out.data[o..o + n].iter_mut().enumerate() {
                *dst = b[i] * (1.0 - m[i]) + v[i] * m[i];
            }
        }
    }
    Ok(out)
}

/// Inverse-warp resampling: output pixel `p` reads `src` at `t⁻¹·p`.
pub fn affine_apply(src: &VideoTensor, t: &AffineTransform, out_hw: (usize, usize)) -> Result<VideoTensor> {
    let (oh, ow) = out_hw;
    check_dims(&[oh, ow])?;
    let inv = t.inverse()?;
    let [f, c, sh, sw] = src.dims();
    if t.is_identity() && (oh, ow) == (sh, sw) {
        return Ok(src.clone());
    }
    let mut out = VideoTensor::zeros([f, c, oh, ow]);
    for fi in 0..f {
        for ci in 0..c {
            warp_plane(src.plane(fi, ci), sh, sw, &inv, out.plane_mut(fi, ci), oh, ow);
        }
    }
    Ok(out)
}

/// Mask version of [`affine_apply`]; result is soft (not re-binarized).
pub fn affine_apply_mask(src: &Mask, t: &AffineTransform, out_hw: (usize, usize)) -> Result<Mask> {
    let (oh, ow) = out_hw;
    check_dims(&[oh, ow])?;
    let inv = t.inverse()?;
    let [f, sh, sw] = src.dims();
    if t.is_identity() && (oh, ow) == (sh, sw) {
        return Ok(src.clone());
    }
    let mut data = vec![0.0; f * oh * ow];
    for fi in 0..f {
        warp_plane(src.plane(fi), sh, sw, &inv, &mut data[fi * oh * ow..(fi + 1) * oh * ow], oh, ow);
    }
    Mask::from_vec([f, oh, ow], data)
}

fn resample_axis(src: &[f64], outer: usize, n_in: usize, stride: usize, n_out: usize) -> Vec<f64> {
    // Generic 1-D resample along an axis of length n_in with the given
    // element stride; area average when shrinking, nearest when growing.
    let inner = stride;
    let mut out = vec![0.0; outer * n_out * inner];
    let ratio = n_in as f64 / n_out as f64;
    for o in 0..outer {
        for j in 0..n_out {
            for i in 0..inner {
                let v = if n_out >= n_in {
                    let s = (((j as f64 + 0.5) * ratio).floor() as usize).min(n_in - 1);
                    src[(o * n_in + s) * inner + i]
                } else {
                    let lo = j as f64 * ratio;
                    let hi = lo + ratio;
                    let mut acc = 0.0;
                    let mut k = lo.floor() as usize;
                    while (k as f64) < hi && k < n_in {
                        let overlap = (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
                        acc += overlap * src[(o * n_in + k) * inner + i];
                        k += 1;
                    }
                    acc / ratio
                };
                out[(o * n_out + j) * inner + i] = v;
            }
        }
    }
    out
}

/// Area-average (shrinking) or nearest (growing) resample, then binarize.
/// Same-size requests return the mask unchanged.
pub fn mask_resample(mask: &Mask, target_h: usize, target_w: usize, threshold: f64) -> Result<Mask> {
    check_dims(&[target_h, target_w])?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MvocError::Param(format!("threshold {threshold} not in [0,1]")));
    }
    let [f, h, w] = mask.dims();
    if (h, w) == (target_h, target_w) {
        return Ok(mask.clone());
    }
    let rows = resample_axis(mask.data(), f, h, w, target_h);
    let cols = resample_axis(&rows, f * target_h, w, 1, target_w);
    Ok(Mask::from_vec([f, target_h, target_w], cols)?.binarize(threshold))
}

/// Default binarization threshold for masks.
pub const MASK_THRESHOLD: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: [usize; 4], v: f64) -> VideoTensor {
        VideoTensor::filled(dims, v)
    }

    #[test]
    fn construction_rejects_bad_payloads() {
        assert!(VideoTensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(VideoTensor::from_vec([1, 1, 1, 1], vec![f64::NAN]).is_err());
        assert!(VideoTensor::from_vec([0, 1, 1, 1], vec![]).is_err());
        let m = Mask::from_vec([1, 1, 2], vec![-0.5, 3.0]).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0]);
    }

    #[test]
    fn blend_identity_cases() {
        let dims = [2, 3, 4, 4];
        let base = VideoTensor::from_fn(dims, |f, c, y, x| (f + 2 * c + 3 * y) as f64 - x as f64 * 0.5);
        let overlay = VideoTensor::from_fn(dims, |f, c, y, x| (f * c) as f64 + (y * x) as f64 * 0.25);
        assert_eq!(hadamard_blend(&base, &overlay, &Mask::zeros([2, 4, 4])).unwrap(), base);
        assert_eq!(hadamard_blend(&base, &overlay, &Mask::ones([2, 4, 4])).unwrap(), overlay);
        let mid = hadamard_blend(&t(dims, 0.0), &t(dims, 2.0), &Mask::filled([2, 4, 4], 0.5)).unwrap();
        assert!(mid.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn blend_rejects_mismatch() {
        let a = t([1, 1, 2, 2], 0.0);
        let b = t([1, 1, 2, 3], 0.0);
        assert!(matches!(
            hadamard_blend(&a, &b, &Mask::ones([1, 2, 2])),
            Err(MvocError::Shape(_))
        ));
        assert!(hadamard_blend(&a, &a, &Mask::ones([1, 3, 2])).is_err());
    }

    #[test]
    fn identity_warp_is_bitwise() {
        let src = VideoTensor::from_fn([2, 2, 5, 3], |f, c, y, x| ((f * 7 + c * 5 + y * 3 + x) as f64).sin());
        let out = affine_apply(&src, &AffineTransform::identity(), (5, 3)).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn translation_moves_hot_pixel_one_row() {
        let mut src = VideoTensor::zeros([1, 1, 3, 3]);
        src.set(0, 0, 1, 1, 1.0);
        let out = affine_apply(&src, &AffineTransform::translation(1.0, 0.0), (3, 3)).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let want = if (y, x) == (2, 1) { 1.0 } else { 0.0 };
                assert_eq!(out.get(0, 0, y, x), want, "({y},{x})");
            }
        }
    }

    #[test]
    fn upscale_of_constant_field() {
        // Brute force: output pixel p is fully interior iff p/2 lies in [0, H-1].
        let src = t([1, 1, 4, 4], 0.7);
        let scale = AffineTransform::scale_translate(2.0, 0.0, 0.0).unwrap();
        let out = affine_apply(&src, &scale, (10, 10)).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let (sy, sx) = (y as f64 / 2.0, x as f64 / 2.0);
                let v = out.get(0, 0, y, x);
                if sy <= 3.0 && sx <= 3.0 {
                    assert!((v - 0.7).abs() < 1e-15);
                } else if sy >= 4.0 || sx >= 4.0 {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn singular_transform_rejected() {
        assert!(matches!(
            AffineTransform::new([[1.0, 2.0, 0.0], [0.5, 1.0, 0.0]]),
            Err(MvocError::SingularTransform { .. })
        ));
    }

    #[test]
    fn inverse_round_trips_points() {
        let t = AffineTransform::new([[1.5, 0.2, 3.0], [-0.4, 0.8, -2.0]]).unwrap();
        let inv = t.inverse().unwrap();
        let (y, x) = inv.apply(t.apply(2.5, -1.25).0, t.apply(2.5, -1.25).1);
        assert!((y - 2.5).abs() < 1e-12 && (x + 1.25).abs() < 1e-12);
    }

    #[test]
    fn at_resolution_scales_translation() {
        let t = AffineTransform::translation(4.0, -8.0);
        let lo = t.at_resolution(4.0);
        assert_eq!(lo.matrix(), [[1.0, 0.0, 1.0], [0.0, 1.0, -2.0]]);
    }

    #[test]
    fn mask_resample_cases() {
        let m = Mask::from_fn([1, 3, 5], |_, y, x| ((y + x) % 2) as f64);
        assert_eq!(mask_resample(&m, 3, 5, 0.5).unwrap(), m);

        let ones = Mask::ones([1, 4, 4]);
        assert_eq!(mask_resample(&ones, 2, 2, 0.5).unwrap(), Mask::ones([1, 2, 2]));

        let quad = Mask::from_fn([1, 4, 4], |_, y, x| if y >= 2 && x < 2 { 1.0 } else { 0.0 });
        let r = mask_resample(&quad, 2, 2, 0.5).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0, 1.0, 0.0]);

        let up = mask_resample(&r, 4, 4, 0.5).unwrap();
        assert_eq!(up, quad);
        assert!(mask_resample(&m, 2, 2, 1.5).is_err());
    }

    #[test]
    fn mask_resample_non_integer_ratio_is_area_weighted() {
        // 3 -> 2 cells: cell 0 covers [0,1.5), weights 1 and 0.5.
        let m = Mask::from_vec([1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let r = mask_resample(&m, 1, 2, 0.6).unwrap();
        assert_eq!(r.data(), &[1.0, 0.0]);
        let r = mask_resample(&m, 1, 2, 0.7).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0]);
    }

    #[test]
    fn flow_rejects_huge_displacements() {
        let big = VideoTensor::filled([1, 2, 4, 4], 5.0);
        assert!(FlowField::new(big).is_err());
        assert!(FlowField::new(VideoTensor::zeros([1, 3, 4, 4])).is_err());
    }

    #[test]
    fn affine_serde_round_trip() {
        let t = AffineTransform::new([[2.0, 0.0, 1.0], [0.0, 2.0, -3.0]]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "[[2.0,0.0,1.0],[0.0,2.0,-3.0]]");
        let back: AffineTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<AffineTransform>("[[0,0,0],[0,0,0]]").is_err());
    }
}
