//! Deterministic DDIM inversion followed by sampling, with the exact
//! empirical denoiser. The error shrinks as the plan gets finer.

use mvoc::denoiser::{ConditionSet, Dataset, EmpiricalBayes, NoisePredictor};
use mvoc::sampler::{invert_loop, sample_loop, TimestepPlan};
use mvoc::schedule::ScheduleConfig;
use mvoc::tensor::VideoTensor;

fn wave(phase: f64) -> VideoTensor {
    VideoTensor::from_fn([8, 1, 16, 16], move |f, _, y, x| {
        0.5 + 0.1 * ((x as f64 * 0.4 + phase + f as f64 * 0.3).sin() * (y as f64 * 0.25).cos())
    })
}

fn main() -> mvoc::Result<()> {
    let s = ScheduleConfig::default().build()?;
    let step = std::f64::consts::TAU / 32.0;
    let data = Dataset::new((0..32).map(|k| wave(step * k as f64)).collect(), vec![vec![]; 32])?;
    let model = EmpiricalBayes::new(data, s.clone());
    let null = ConditionSet::null();

    for (label, x0) in [("member", wave(step * 5.0)), ("between members", wave(step * 5.5))] {
        println!("{label}:");
        for n in [10, 25, 50] {
            let plan = TimestepPlan::uniform(s.total(), n)?;
            let cache = invert_loop(&x0, &plan, |x, t, _| model.predict(x, t, &null), &s)?;
            let (top_t, top) = cache.top().expect("non-empty plan");
            let back = sample_loop(top, &plan, |x, t, _| model.predict(x, t, &null), &s, false)?.x0;
            println!("  N={n:>2}  x_{top_t} cached, rel L2 {:.3e}", back.rel_l2(&x0));
        }
    }
    Ok(())
}
