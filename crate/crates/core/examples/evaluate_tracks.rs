//! Score noisy copies of ground-truth tracks at increasing noise levels.
//!
//! cargo run --example evaluate_tracks

use tto::metrics::evaluate;
use tto::model::split_frames;
use tto::synth::{ground_truth, jitter_tracks, preset};

fn main() -> anyhow::Result<()> {
    let spec = preset("default", 3)?;
    let gt = ground_truth(&spec)?;
    let (_, test) = split_frames(gt.num_frames(), 10)?;
    println!("{:>7} {:>8} {:>8} {:>9}", "sigma", "δ_avg", "J", "J_masked");
    for sigma in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let pred = if sigma > 0.0 { jitter_tracks(&gt, sigma, 7)? } else { gt.clone() };
        let r = evaluate(&pred, &gt, spec.width, spec.height, &test)?;
        println!("{sigma:>7.1} {:>8.2} {:>8.3} {:>9.3}", r.delta.avg, r.jitter, r.jitter_masked);
    }
    let r = evaluate(&jitter_tracks(&gt, 2.0, 7)?, &gt, spec.width, spec.height, &test)?;
    println!("\nfull report at sigma 2:\n{}", r.to_table());
    Ok(())
}
