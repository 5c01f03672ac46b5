//! Frozen versus optimized tracking on a synthetic suite.
//!
//! cargo run --release --example benchmark -- [preset] [scenes] [steps] [schedule]

use std::time::Instant;

use tto::pipeline::{prepare_scene, PipelineConfig};
use tto::synth::{suite, AnnotationSchedule};
use tto::tracker::track_video;
use tto::ttopt::init_embedding;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map(String::as_str).unwrap_or("distractor-heavy");
    let count: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let steps: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let schedule: AnnotationSchedule = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(AnnotationSchedule::Interval { n: 10 });
    let mut cfg = PipelineConfig::default();
    cfg.optim.steps = steps;
    let manifest = suite(preset, count, 0, schedule, 0.0)?;
    let (mut frozen_sum, mut opt_sum, mut wins) = (0.0, 0.0, 0);
    println!("{:<22} {:>8} {:>8} {:>8} {:>7}", "scene", "frozen", "init", "optim", "secs");
    for entry in &manifest.scenes {
        let started = Instant::now();
        let scene = prepare_scene(entry, &cfg.features)?;
        let (_, frozen) = scene.frozen(&cfg.tracker)?;
        let init = init_embedding(&scene.features, &scene.ann)?;
        let init_report = scene.score(&track_video(&scene.features, &scene.ann, &init, &cfg.tracker)?)?;
        let opt = scene.optimized(&cfg, |_| {})?;
        println!(
            "{:<22} {:>8.2} {:>8.2} {:>8.2} {:>7.1}",
            entry.id,
            frozen.delta.avg,
            init_report.delta.avg,
            opt.report.delta.avg,
            started.elapsed().as_secs_f64()
        );
        frozen_sum += frozen.delta.avg;
        opt_sum += opt.report.delta.avg;
        if opt.report.delta.avg > frozen.delta.avg {
            wins += 1;
        }
    }
    let n = manifest.scenes.len() as f64;
    println!(
        "mean frozen {:.2}  optimized {:.2}  improved on {wins}/{}",
        frozen_sum / n,
        opt_sum / n,
        manifest.scenes.len()
    );
    Ok(())
}
