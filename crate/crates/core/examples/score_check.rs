//! The score recovered from ε against a central difference of the log
//! density of a two-point dataset under the forward process.

use mvoc::denoiser::{eps_empirical, score_from_eps, ConditionSet, Dataset};
use mvoc::schedule::{NoiseSchedule, ScheduleConfig};
use mvoc::tensor::VideoTensor;

const POINTS: [[f64; 2]; 2] = [[-0.8, 0.3], [0.6, -0.5]];

fn log_density(x: [f64; 2], t: usize, s: &NoiseSchedule) -> f64 {
    let ab = s.alpha_bar(t);
    let var = 1.0 - ab;
    POINTS
        .iter()
        .map(|p| (-((x[0] - ab.sqrt() * p[0]).powi(2) + (x[1] - ab.sqrt() * p[1]).powi(2)) / (2.0 * var)).exp())
        .sum::<f64>()
        .ln()
}

fn main() -> mvoc::Result<()> {
    let s = ScheduleConfig::default().build()?;
    let data = Dataset::new(
        POINTS.iter().map(|p| VideoTensor::from_vec([1, 1, 1, 2], p.to_vec())).collect::<mvoc::Result<_>>()?,
        vec![vec![], vec![]],
    )?;
    let x = [0.2, -0.1];
    let h = 1e-4;
    for t in [100, 500, 1000] {
        let xt = VideoTensor::from_vec([1, 1, 1, 2], x.to_vec())?;
        let score = score_from_eps(&eps_empirical(&xt, t, &data, &s, &ConditionSet::null())?, t, &s)?;
        let fd: Vec<f64> = (0..2)
            .map(|d| {
                let (mut a, mut b) = (x, x);
                a[d] += h;
                b[d] -= h;
                (log_density(a, t, &s) - log_density(b, t, &s)) / (2.0 * h)
            })
            .collect();
        println!("t={t:>4}  score {:?}  finite diff [{:.8}, {:.8}]", score.data(), fd[0], fd[1]);
    }
    Ok(())
}
