//! Chained guidance on toy noise predictions: the nested form, the
//! collapsed ω weights, and the single-condition CFG special case.

use mvoc::guidance::{cfg, compose_eps_chained, compose_eps_omega, GuidanceWeights};
use mvoc::tensor::VideoTensor;

fn main() -> mvoc::Result<()> {
    // ε for ∅, {1}, {1,2}, {1,2,3} on a single pixel
    let terms: Vec<VideoTensor> = [0.10, 0.40, 0.25, 0.90].iter().map(|&v| VideoTensor::filled([1, 1, 1, 1], v)).collect();
    let refs: Vec<&VideoTensor> = terms.iter().collect();

    let w = GuidanceWeights::new(vec![3.0, 1.5, 2.0])?;
    let omega = w.omega();
    println!("w     = {:?}", w.as_slice());
    println!("omega = {omega:?} (sum {})", omega.iter().sum::<f64>());
    println!("chained  {:.6}", compose_eps_chained(&refs, &w)?.data()[0]);
    println!("omega    {:.6}", compose_eps_omega(&refs, &omega)?.data()[0]);

    let ones = GuidanceWeights::uniform(3);
    println!("all ones {:.6} (full condition {:.6})", compose_eps_chained(&refs, &ones)?.data()[0], terms[3].data()[0]);

    let one = GuidanceWeights::new(vec![7.5])?;
    println!(
        "N=1: chained {:.6}, cfg {:.6}",
        compose_eps_chained(&refs[..2], &one)?.data()[0],
        cfg(&terms[0], &terms[1], 7.5)?.data()[0]
    );
    Ok(())
}
