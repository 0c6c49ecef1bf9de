//! Flow-warping error of a rendered scene under its ground-truth flow,
//! then after adding per-frame noise.

use mvoc::metrics::{sequence_warping_error, WarpMetricConfig};
use mvoc::pipeline::synthetic_scenes;
use mvoc::synthdata::{ground_truth_flow, render_scene};
use mvoc::tensor::VideoTensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> mvoc::Result<()> {
    let (spec, _) = synthetic_scenes(0, 16, 32);
    let video = render_scene(&spec)?.video;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let noisy = VideoTensor::from_fn(video.dims(), |f, c, y, x| video.get(f, c, y, x) + noise.sample(&mut rng));
    for g in [2, 4] {
        let (flow, mask) = ground_truth_flow(&spec, g)?;
        let cfg = WarpMetricConfig::new(g);
        let clean = sequence_warping_error(&video, &flow, &mask, &cfg)?;
        let dirty = sequence_warping_error(&noisy, &flow, &mask, &cfg)?;
        println!("G={g}: clean {:.3e}, noisy {:.3e} over {} pairs", clean.mean, dirty.mean, clean.pairs.len());
    }
    Ok(())
}
