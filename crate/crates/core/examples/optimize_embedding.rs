//! Optimize the appearance embedding of one scene and compare against the
//! frozen tracker.
//!
//! cargo run --release --example optimize_embedding -- [seed] [steps]

use tto::pipeline::{prepare_scene, PipelineConfig};
use tto::synth::{preset, AnnotationSchedule, SuiteEntry};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let mut cfg = PipelineConfig::default();
    cfg.optim.steps = steps;
    let entry = SuiteEntry {
        id: format!("distractor-heavy-{seed:03}"),
        spec: preset("distractor-heavy", seed)?,
        schedule: AnnotationSchedule::Interval { n: 10 },
        noise_sigma: 0.0,
    };
    let scene = prepare_scene(&entry, &cfg.features)?;
    let (_, frozen) = scene.frozen(&cfg.tracker)?;

    let every = (steps / 10).max(1);
    let opt = scene.optimized(&cfg, |r| {
        if r.step % every == 0 {
            println!("step {:>4}  loss {:.4}  (track {:.4} + reg {:.4})  lr {:.1e}", r.step, r.total, r.track, r.reg, r.lr);
        }
    })?;
    println!("\nfrozen     δ_avg {:6.2}  J {:.3}", frozen.delta.avg, frozen.jitter);
    println!("optimized  δ_avg {:6.2}  J {:.3}", opt.report.delta.avg, opt.report.jitter);
    println!("took {:.1}s", opt.trace.duration_secs);
    Ok(())
}
