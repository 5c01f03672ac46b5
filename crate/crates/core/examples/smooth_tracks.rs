//! Kalman-smooth jittered tracks and report what it does to J and δ_avg.
//!
//! cargo run --example smooth_tracks

use tto::metrics::evaluate;
use tto::smooth::{kalman_smooth, KalmanConfig};
use tto::synth::{ground_truth, jitter_tracks, preset, JITTER_SIGMA};

fn main() -> anyhow::Result<()> {
    let cfg = KalmanConfig::default();
    println!("process noise {}, measurement noise {}, {} passes\n", cfg.process_noise, cfg.measurement_noise, cfg.iterations);
    println!("{:<6} {:>10} {:>10} {:>16}", "seed", "J noisy", "J smooth", "δ_avg clean+KF");
    for seed in 0..5 {
        let spec = preset("jittered", seed)?;
        let gt = ground_truth(&spec)?;
        let frames: Vec<usize> = (0..gt.num_frames()).collect();
        let noisy = jitter_tracks(&gt, JITTER_SIGMA, seed)?;
        let before = evaluate(&noisy, &gt, spec.width, spec.height, &frames)?;
        let after = evaluate(&kalman_smooth(&noisy, &cfg)?, &gt, spec.width, spec.height, &frames)?;
        // Smoothing clean tracks should barely move them.
        let clean = evaluate(&kalman_smooth(&gt, &cfg)?, &gt, spec.width, spec.height, &frames)?;
        println!(
            "{seed:<6} {:>10.3} {:>10.3} {:>16.2}",
            before.jitter, after.jitter, clean.delta.avg
        );
    }
    Ok(())
}
