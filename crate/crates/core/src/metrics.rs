//! Masked warping error for short- and long-range temporal consistency.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MvocError, Result};
use crate::tensor::{bilinear, FlowField, Mask, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowSource {
    #[default]
    GroundTruth,
    ForwardBackwardEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpMetricConfig {
    /// Interval `G` between compared frames.
    #[serde(rename = "G")]
    pub interval: usize,
    /// Forward-backward inconsistency (pixels) above which a pixel is occluded.
    pub occlusion_threshold: f64,
    pub flow_source: FlowSource,
}

impl WarpMetricConfig {
    pub fn new(interval: usize) -> Self {
        Self {
            interval,
            occlusion_threshold: 0.5,
            flow_source: FlowSource::GroundTruth,
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.interval == 0 || self.interval >= frames {
            return Err(MvocError::Param(format!(
                "interval G={} must satisfy 1 <= G < {frames}",
                self.interval
            )));
        }
        if !(self.occlusion_threshold >= 0.0) {
            return Err(MvocError::Param("occlusion threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Backward warp `out(p) = frame(p + flow(p))`, bilinear. Samples that leave
/// the image read zero and are cleared in the returned validity mask.
pub fn warp_frame(frame: &VideoTensor, flow: &FlowField) -> Result<(VideoTensor, Mask)> {
    let [f, c, h, w] = frame.dims();
    if f != 1 || flow.pairs() != 1 || flow.height() != h || flow.width() != w {
        return Err(MvocError::Shape(format!(
            "warp_frame: frame {:?} with flow {:?}",
            frame.dims(),
            flow.as_tensor().dims()
        )));
    }
    let mut out = VideoTensor::zeros([1, c, h, w]);
    let mut valid = vec![1.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = flow.at(0, y, x);
            let (sy, sx) = (y as f64 + dy, x as f64 + dx);
            for ci in 0..c {
                let (v, inside) = bilinear(frame.plane(0, ci), h, w, sy, sx);
                out.set(0, ci, y, x, v);
                if !inside {
                    valid[y * w + x] = 0.0;
                }
            }
        }
    }
    Ok((out, Mask::from_vec([1, h, w], valid)?))
}

/// `(1/ΣM) Σ_p M(p) ‖V_t(p) − V̂_{t+G}(p)‖²`, squared norm over channels.
/// `M` is the occlusion mask intersected with the in-bounds region of the warp.
pub fn warping_error(v_t: &VideoTensor, v_tg: &VideoTensor, flow: &FlowField, mask: &Mask) -> Result<f64> {
    v_t.ensure_same_dims(v_tg, "warping_error frames")?;
    let [_, c, h, w] = v_t.dims();
    if mask.dims() != [1, h, w] {
        return Err(MvocError::Shape(format!(
            "occlusion mask {:?} for frame {:?}",
            mask.dims(),
            v_t.dims()
        )));
    }
    let (warped, valid) = warp_frame(v_tg, flow)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..h * w {
        let m = mask.data()[i] * valid.data()[i];
        if m == 0.0 {
            continue;
        }
        let mut d2 = 0.0;
        for ci in 0..c {
            let d = v_t.plane(0, ci)[i] - warped.plane(0, ci)[i];
            d2 += d * d;
        }
        num += m * d2;
        den += m;
    }
    if den == 0.0 {
        return Err(MvocError::UndefinedMetric);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    #[serde(rename = "G")]
    pub interval: usize,
    /// `(t, error)` per pair, `t` 1-based.
    pub pairs: Vec<(usize, f64)>,
    pub mean: f64,
}

impl SequenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,error\n");
        for (t, e) in &self.pairs {
            let _ = writeln!(s, "{t},{e:.10e}");
        }
        let _ = writeln!(s, "mean,{:.10e}", self.mean);
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| MvocError::io(path, e))
    }
}

/// Mean warping error over the `T − G` valid pairs `(t, t + G)`.
/// `flows` and `masks` hold one entry per pair.
pub fn sequence_warping_error(video: &VideoTensor, flows: &FlowField, masks: &Mask, cfg: &WarpMetricConfig) -> Result<SequenceReport> {
    let frames = video.frames();
    cfg.validate(frames)?;
    let g = cfg.interval;
    let pairs = frames - g;
    if flows.pairs() != pairs || masks.frames() != pairs {
        return Err(MvocError::Shape(format!(
            "G={g} over {frames} frames needs {pairs} flows/masks, got {}/{}",
            flows.pairs(),
            masks.frames()
        )));
    }
    let errs = (0..pairs)
        .map(|k| warping_error(&video.frame(k), &video.frame(k + g), &flows.frame(k), &masks.frame(k)).map(|e| (k + 1, e)))
        .collect::<Result<Vec<_>>>()?;
    let mean = errs.iter().map(|(_, e)| e).sum::<f64>() / pairs as f64;
    Ok(SequenceReport {
        interval: g,
        pairs: errs,
        mean,
    })
}

/// Non-occlusion mask from forward/backward flow consistency:
/// `p` is valid iff `p + f_fw(p)` stays inside and
/// `‖f_fw(p) + f_bw(p + f_fw(p))‖ ≤ threshold`.
pub fn forward_backward_occlusion(fw: &FlowField, bw: &FlowField, threshold: f64) -> Result<Mask> {
    if fw.as_tensor().dims() != bw.as_tensor().dims() {
        return Err(MvocError::Shape("forward and backward flows differ in shape".into()));
    }
    let (n, h, w) = (fw.pairs(), fw.height(), fw.width());
    let mut data = vec![0.0; n * h * w];
    for k in 0..n {
        let by = bw.as_tensor().plane(k, 0);
        let bx = bw.as_tensor().plane(k, 1);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = fw.at(k, y, x);
                let (sy, sx) = (y as f64 + dy, x as f64 + dx);
                let (ry, in_y) = bilinear(by, h, w, sy, sx);
                let (rx, _) = bilinear(bx, h, w, sy, sx);
                let r = ((dy + ry).powi(2) + (dx + rx).powi(2)).sqrt();
                if in_y && r <= threshold {
                    data[(k * h + y) * w + x] = 1.0;
                }
            }
        }
    }
    Mask::from_vec([n, h, w], data)
}

/// Forward flow under an image-wide translation `(dy, dx)` per frame.
pub fn uniform_flow(pairs: usize, h: usize, w: usize, dy: f64, dx: f64) -> Result<FlowField> {
    FlowField::new(VideoTensor::from_fn([pairs, 2, h, w], |_, c, _, _| if c == 0 { dy } else { dx }))
}
