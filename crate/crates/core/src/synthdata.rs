//! Deterministic synthetic scenes: anti-aliased shapes over simple
//! backgrounds, with exact masks and analytic ground-truth flow.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Dataset;
use crate::error::{MvocError, Result};
use crate::tensor::{FlowField, Mask, VideoTensor, MASK_THRESHOLD};
use crate::vten;

/// Subsamples per pixel side used for coverage.
pub const SUPERSAMPLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Solid {
        color: [f64; 3],
    },
    /// Vertical blend from `top` (row 0) to `bottom` (last row).
    Gradient {
        top: [f64; 3],
        bottom: [f64; 3],
    },
    /// Product of sinusoids translating at `velocity` px/frame; per-channel
    /// phases are drawn from the scene seed.
    Texture {
        base: [f64; 3],
        amplitude: f64,
        period: f64,
        velocity: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disc,
    Square,
    Triangle,
}

/// Object centre over time, `(row, col)` in pixel-centre coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Linear {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    Sinusoidal {
        center: [f64; 2],
        amplitude: [f64; 2],
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Trajectory {
    pub fn at(&self, frame: usize) -> (f64, f64) {
        let f = frame as f64;
        match *self {
            Trajectory::Linear { start, velocity } => (start[0] + velocity[0] * f, start[1] + velocity[1] * f),
            Trajectory::Sinusoidal {
                center,
                amplitude,
                period,
                phase,
            } => {
                let s = (2.0 * PI * f / period + phase).sin();
                (center[0] + amplitude[0] * s, center[1] + amplitude[1] * s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub shape: Shape,
    /// Diameter or side length in pixels.
    pub size: f64,
    pub color: [f64; 3],
    pub trajectory: Trajectory,
    /// Larger is nearer the camera.
    pub layer: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: Background,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| MvocError::json("<scene spec>", e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MvocError::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| MvocError::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(MvocError::Spec("canvas and frame count must be positive".into()));
        }
        let finite3 = |c: &[f64; 3]| c.iter().all(|v| v.is_finite());
        match &self.background {
            Background::Solid { color } if !finite3(color) => return Err(MvocError::Spec("non-finite colour".into())),
            Background::Gradient { top, bottom } if !finite3(top) || !finite3(bottom) => {
                return Err(MvocError::Spec("non-finite colour".into()))
            }
            Background::Texture { period, .. } if !(*period > 0.0) => {
                return Err(MvocError::Spec("texture period must be > 0".into()))
            }
            _ => {}
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        let mut layers: Vec<i32> = self.objects.iter().map(|o| o.layer).collect();
        ids.sort_unstable();
        layers.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(MvocError::Spec("object ids must be unique".into()));
        }
        if layers.windows(2).any(|w| w[0] == w[1]) {
            return Err(MvocError::Spec("layer order must be total (distinct layers)".into()));
        }
        for o in &self.objects {
            if !(o.size > 0.0) || !finite3(&o.color) {
                return Err(MvocError::Spec(format!("object {}: bad size or colour", o.id)));
            }
            if let Trajectory::Sinusoidal { period, .. } = o.trajectory {
                if !(period > 0.0) {
                    return Err(MvocError::Spec(format!("object {}: period must be > 0", o.id)));
                }
            }
            for f in 0..self.frames {
                let (cy, cx) = o.trajectory.at(f);
                let inside = (0.0..=(self.height - 1) as f64).contains(&cy) && (0.0..=(self.width - 1) as f64).contains(&cx);
                if !inside {
                    return Err(MvocError::Spec(format!(
                        "object {} centre ({cy}, {cx}) leaves the canvas at frame {}",
                        o.id,
                        f + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Objects sorted far to near.
    fn depth_order(&self) -> Vec<&ObjectSpec> {
        let mut v: Vec<&ObjectSpec> = self.objects.iter().collect();
        v.sort_by_key(|o| o.layer);
        v
    }

    fn object(&self, id: u32) -> Result<&ObjectSpec> {
        self.objects
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| MvocError::Spec(format!("no object with id {id}")))
    }
}

fn inside(shape: Shape, size: f64, dy: f64, dx: f64) -> bool {
    let r = size / 2.0;
    match shape {
        Shape::Disc => dy * dy + dx * dx <= r * r,
        Shape::Square => dy.abs() <= r && dx.abs() <= r,
        // apex up at dy = -r, base at dy = +r spanning ±r
        Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
    }
}

/// Fractional coverage of every pixel of an `h × w` frame.
fn coverage(o: &ObjectSpec, centre: (f64, f64), h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let r = o.size / 2.0 + 1.0;
    let (cy, cx) = centre;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil().max(0.0) as usize).min(h - 1);
    let x1 = ((cx + r).ceil().max(0.0) as usize).min(w - 1);
    let n = SUPERSAMPLE as f64;
    let offs: Vec<f64> = (0..SUPERSAMPLE).map(|i| (i as f64 + 0.5) / n - 0.5).collect();
    for y in y0..=y1 {
        for x in x0..=x1 {
            // integer part first so integer motion shifts coverage exactly
            let (by, bx) = (y as f64 - cy, x as f64 - cx);
            let mut hits = 0usize;
            for sy in &offs {
                for sx in &offs {
                    if inside(o.shape, o.size, by + sy, bx + sx) {
                        hits += 1;
                    }
                }
            }
            out[y * w + x] = hits as f64 / (n * n);
        }
    }
    out
}

fn texture_phases(seed: u64) -> [[f64; 2]; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [[0.0; 2]; 3];
    for c in p.iter_mut() {
        *c = [rng.gen::<f64>() * 2.0 * PI, rng.gen::<f64>() * 2.0 * PI];
    }
    p
}

fn background_frame(spec: &SceneSpec, f: usize) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let mut out = vec![0.0; 3 * h * w];
    let phases = texture_phases(spec.seed);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = match spec.background {
                    Background::Solid { color } => color[c],
                    Background::Gradient { top, bottom } => {
                        let a = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
                        top[c] * (1.0 - a) + bottom[c] * a
                    }
                    Background::Texture {
                        base,
                        amplitude,
                        period,
                        velocity,
                    } => {
                        let u = y as f64 - velocity[0] * f as f64;
                        let v = x as f64 - velocity[1] * f as f64;
                        let k = 2.0 * PI / period;
                        base[c] + amplitude * (k * u + phases[c][0]).sin() * (k * v + phases[c][1]).cos()
                    }
                };
            }
        }
    }
    out
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Rendered scene. Frame-pair quantities use interval 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    pub video: VideoTensor,
    /// Per object, in spec order: coverage ≥ 0.5 of the full shape.
    pub masks: Vec<(u32, Mask)>,
    /// Per object: the part of its mask not hidden by nearer objects.
    pub visible: Vec<(u32, Mask)>,
    /// Per object: its own displacement field (uniform over the frame).
    pub object_flows: Vec<(u32, FlowField)>,
    /// Displacement of whichever layer is visible at each pixel.
    pub flow: FlowField,
    /// 1 where the visible layer stays visible at the flow target.
    pub non_occluded: Mask,
}

/// Renders the scene with supersampled coverage; bit-identical for equal specs.
pub fn render_scene(spec: &SceneSpec) -> Result<SceneRender> {
    spec.validate()?;
    let (h, w, nf) = (spec.height, spec.width, spec.frames);
    let hw = h * w;
    let mut video = vec![0.0; nf * 3 * hw];
    let mut masks = vec![vec![0.0; nf * hw]; spec.objects.len()];
    let order = spec.depth_order();
    for f in 0..nf {
        let frame = &mut video[f * 3 * hw..(f + 1) * 3 * hw];
        frame.copy_from_slice(&background_frame(spec, f));
        for o in &order {
            let k = spec.objects.iter().position(|x| x.id == o.id).expect("object in spec");
            let cov = coverage(o, o.trajectory.at(f), h, w);
            for (i, &a) in cov.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let p = &mut frame[c * hw + i];
                    *p = *p * (1.0 - a) + o.color[c] * a;
                }
                if a >= MASK_THRESHOLD {
                    masks[k][f * hw + i] = 1.0;
                }
            }
        }
    }
    for v in video.iter_mut() {
        *v = round_f32(*v);
    }
    let video = VideoTensor::from_vec([nf, 3, h, w], video)?;
    let masks: Vec<(u32, Mask)> = spec
        .objects
        .iter()
        .zip(masks)
        .map(|(o, m)| Ok((o.id, Mask::from_vec([nf, h, w], m)?)))
        .collect::<Result<_>>()?;
    let owners = owner_maps(spec, &masks);
    let visible = spec
        .objects
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let data = owners.iter().map(|&ow| if ow == Some(k) { 1.0 } else { 0.0 }).collect();
            Ok((o.id, Mask::from_vec([nf, h, w], data)?))
        })
        .collect::<Result<_>>()?;
    let (flow, non_occluded) = if nf > 1 {
        ground_truth_flow(spec, 1)?
    } else {
        (FlowField::zeros(0, h, w), Mask::zeros([0, h, w]))
    };
    let object_flows = spec
        .objects
        .iter()
        .map(|o| Ok((o.id, object_flow(spec, o.id, 1)?)))
        .collect::<Result<_>>()?;
    Ok(SceneRender {
        video,
        masks,
        visible,
        object_flows,
        flow,
        non_occluded,
    })
}

/// Index (spec order) of the nearest object whose mask covers each pixel.
fn owner_maps(spec: &SceneSpec, masks: &[(u32, Mask)]) -> Vec<Option<usize>> {
    let [nf, h, w] = [spec.frames, spec.height, spec.width];
    let mut order: Vec<usize> = (0..spec.objects.len()).collect();
    order.sort_by_key(|&k| spec.objects[k].layer);
    let mut owners = vec![None; nf * h * w];
    for &k in &order {
        for (i, &m) in masks[k].1.data().iter().enumerate() {
            if m > 0.0 {
                owners[i] = Some(k);
            }
        }
    }
    owners
}

fn displacement(o: &ObjectSpec, f: usize, g: usize) -> (f64, f64) {
    let (a, b) = (o.trajectory.at(f), o.trajectory.at(f + g));
    (b.0 - a.0, b.1 - a.1)
}

fn background_displacement(spec: &SceneSpec, g: usize) -> (f64, f64) {
    match spec.background {
        Background::Texture { velocity, .. } => (velocity[0] * g as f64, velocity[1] * g as f64),
        _ => (0.0, 0.0),
    }
}

/// Object `id`'s displacement from frame `f` to `f + g`, as a uniform field.
pub fn object_flow(spec: &SceneSpec, id: u32, g: usize) -> Result<FlowField> {
    let o = spec.object(id)?;
    let pairs = spec.frames.saturating_sub(g);
    FlowField::new(VideoTensor::from_fn([pairs, 2, spec.height, spec.width], |f, c, _, _| {
        let d = displacement(o, f, g);
        round_f32(if c == 0 { d.0 } else { d.1 })
    }))
}

/// Composite flow over interval `g` and its non-occlusion mask. A pixel is
/// non-occluded when its target lies inside the frame and the same layer is
/// visible at the (rounded) target.
pub fn ground_truth_flow(spec: &SceneSpec, g: usize) -> Result<(FlowField, Mask)> {
    spec.validate()?;
    if g == 0 || g >= spec.frames {
        return Err(MvocError::Param(format!("interval {g} needs 1 <= g < {}", spec.frames)));
    }
    let (h, w, nf) = (spec.height, spec.width, spec.frames);
    let hw = h * w;
    let masks: Vec<(u32, Mask)> = spec
        .objects
        .iter()
        .map(|o| {
            let mut m = vec![0.0; nf * hw];
            for f in 0..nf {
                for (i, a) in coverage(o, o.trajectory.at(f), h, w).into_iter().enumerate() {
                    if a >= MASK_THRESHOLD {
                        m[f * hw + i] = 1.0;
                    }
                }
            }
            Ok((o.id, Mask::from_vec([nf, h, w], m)?))
        })
        .collect::<Result<_>>()?;
    let owners = owner_maps(spec, &masks);
    let pairs = nf - g;
    let mut flow = VideoTensor::zeros([pairs, 2, h, w]);
    let mut valid = vec![0.0; pairs * hw];
    let bg = background_displacement(spec, g);
    for f in 0..pairs {
        for y in 0..h {
            for x in 0..w {
                let owner = owners[f * hw + y * w + x];
                let (dy, dx) = match owner {
                    Some(k) => displacement(&spec.objects[k], f, g),
                    None => bg,
                };
                let (dy, dx) = (round_f32(dy), round_f32(dx));
                flow.set(f, 0, y, x, dy);
                flow.set(f, 1, y, x, dx);
                let (ty, tx) = (y as f64 + dy, x as f64 + dx);
                if ty < 0.0 || tx < 0.0 || ty > (h - 1) as f64 || tx > (w - 1) as f64 {
                    continue;
                }
                let (ry, rx) = (ty.round() as usize, tx.round() as usize);
                if owners[(f + g) * hw + ry * w + rx] == owner {
                    valid[f * hw + y * w + x] = 1.0;
                }
            }
        }
    }
    Ok((FlowField::new(flow)?, Mask::from_vec([pairs, h, w], valid)?))
}

/// One rendered sample per spec, labelled with `labels[k]`.
pub fn build_dataset(specs: &[SceneSpec], labels: Vec<Vec<u32>>) -> Result<Dataset> {
    let samples = specs.iter().map(|s| render_scene(s).map(|r| r.video)).collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, labels)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (3 channels) or PGM (1 channel) of frame `f`, clamped to [0, 1].
pub fn write_preview(path: impl AsRef<Path>, video: &VideoTensor, f: usize) -> Result<()> {
    let path = path.as_ref();
    let [_, c, h, w] = video.dims();
    let (magic, chans) = match c {
        1 => ("P5", 1),
        3 => ("P6", 3),
        _ => return Err(MvocError::Shape(format!("preview needs 1 or 3 channels, got {c}"))),
    };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ci in 0..chans {
                bytes.push(to_byte(video.get(f, ci, y, x)));
            }
        }
    }
    fs::write(path, bytes).map_err(|e| MvocError::io(path, e))
}

/// Writes everything `gen-data` produces into `dir`.
pub fn write_scene(dir: impl AsRef<Path>, spec: &SceneSpec, render: &SceneRender) -> Result<()> {
    let dir = dir.as_ref();
    let previews = dir.join("previews");
    fs::create_dir_all(&previews).map_err(|e| MvocError::io(&previews, e))?;
    let spec_path = dir.join("scene.json");
    let json = serde_json::to_string_pretty(spec).map_err(|e| MvocError::json(&spec_path, e))?;
    fs::write(&spec_path, json).map_err(|e| MvocError::io(&spec_path, e))?;
    vten::save_tensor(dir.join("video.vten"), &render.video)?;
    for ((id, m), (_, vis)) in render.masks.iter().zip(&render.visible) {
        vten::save_mask(dir.join(format!("mask_{id}.vten")), m)?;
        vten::save_mask(dir.join(format!("visible_{id}.vten")), vis)?;
        let mt = m.to_tensor();
        for f in 0..spec.frames {
            write_preview(previews.join(format!("mask{id}_{:03}.pgm", f + 1)), &mt, f)?;
        }
    }
    for (id, fl) in &render.object_flows {
        vten::save_flow(dir.join(format!("object_flow_{id}.vten")), fl)?;
    }
    for g in [1, 2, 4] {
        if g < spec.frames {
            let (fl, m) = ground_truth_flow(spec, g)?;
            vten::save_flow(dir.join(format!("flow_g{g}.vten")), &fl)?;
            vten::save_mask(dir.join(format!("mask_g{g}.vten")), &m)?;
        }
    }
    for f in 0..spec.frames {
        write_preview(previews.join(format!("frame_{:03}.ppm", f + 1)), &render.video, f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(velocity: [f64; 2]) -> SceneSpec {
        SceneSpec {
            height: 16,
            width: 16,
            frames: 5,
            background: Background::Solid { color: [0.1, 0.2, 0.3] },
            objects: vec![ObjectSpec {
                id: 1,
                shape: Shape::Disc,
                size: 6.0,
                color: [0.9, 0.5, 0.1],
                trajectory: Trajectory::Linear {
                    start: [5.0, 7.0],
                    velocity,
                },
                layer: 1,
            }],
            seed: 0,
        }
    }

    fn centroid(m: &Mask, f: usize) -> (f64, f64) {
        let (h, w) = (m.height(), m.width());
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let v = m.get(f, y, x);
                sy += v * y as f64;
                sx += v * x as f64;
                n += v;
            }
        }
        (sy / n, sx / n)
    }

    #[test]
    fn static_disc_is_constant() {
        let r = render_scene(&disc([0.0, 0.0])).unwrap();
        for f in 1..5 {
            assert_eq!(r.video.frame(f).data(), r.video.frame(0).data());
            assert_eq!(r.masks[0].1.plane(f), r.masks[0].1.plane(0));
        }
        assert!(r.flow.as_tensor().data().iter().all(|&v| v == 0.0));
        assert!(r.masks[0].1.is_binary());
    }

    #[test]
    fn moving_disc_centroid_advances_one_pixel() {
        let r = render_scene(&disc([1.0, 0.0])).unwrap();
        let m = &r.masks[0].1;
        for f in 1..5 {
            let (a, b) = (centroid(m, f - 1), centroid(m, f));
            assert_eq!(b.0 - a.0, 1.0);
            assert_eq!(b.1, a.1);
        }
        assert_eq!(r.object_flows[0].1.at(0, 0, 0), (1.0, 0.0));
    }

    #[test]
    fn rendering_is_deterministic_and_validated() {
        let mut s = disc([0.5, 0.25]);
        s.background = Background::Texture {
            base: [0.5; 3],
            amplitude: 0.2,
            period: 8.0,
            velocity: [0.0, 0.5],
        };
        s.seed = 11;
        assert_eq!(render_scene(&s).unwrap(), render_scene(&s).unwrap());
        let mut bad = disc([4.0, 0.0]);
        bad.frames = 4;
        assert!(matches!(render_scene(&bad), Err(MvocError::Spec(_))));
        let mut dup = disc([0.0, 0.0]);
        dup.objects.push(dup.objects[0]);
        assert!(dup.validate().is_err());
    }

    #[test]
    fn nearer_layer_owns_overlap() {
        let mut s = disc([0.0, 0.0]);
        let mut sq = s.objects[0];
        sq.id = 2;
        sq.shape = Shape::Square;
        sq.layer = 2;
        sq.color = [0.0, 1.0, 0.0];
        s.objects.push(sq);
        let r = render_scene(&s).unwrap();
        assert_eq!(r.video.get(0, 1, 5, 7), 1.0);
        assert_eq!(r.visible[0].1.sum(), 0.0);
        assert_eq!(r.visible[1].1.sum(), r.masks[1].1.sum());
    }

    #[test]
    fn dataset_from_specs() {
        let d = build_dataset(&[disc([0.0, 0.0]), disc([1.0, 0.0])], vec![vec![1], vec![2]]).unwrap();
        assert_eq!(d.len(), 2);
        let one = build_dataset(&[disc([0.0, 0.0])], vec![vec![]]).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn spec_json_round_trip() {
        let s = disc([1.0, 0.0]);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(SceneSpec::from_json(&text).unwrap(), s);
    }
}
