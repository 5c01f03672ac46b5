//! Compare annotation strategies over a few small scenes.
//!
//! cargo run --release --example ablation_sweep -- [intervals|strategies|pseudo] [scenes] [steps]

use tto::pipeline::{ablate, AblationMode, PipelineConfig};
use tto::synth::{preset_with, AnnotationSchedule, SuiteEntry, SuiteManifest};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: AblationMode = args.next().unwrap_or_else(|| "strategies".into()).parse()?;
    let scenes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let mut cfg = PipelineConfig::default();
    cfg.optim.steps = steps;
    // Short clips keep the sweep quick.
    let entries = (0..scenes as u64)
        .map(|seed| {
            Ok(SuiteEntry {
                id: format!("default-{seed:03}"),
                spec: preset_with("default", seed, Some(40), None)?,
                schedule: AnnotationSchedule::Interval { n: 10 },
                noise_sigma: 0.0,
            })
        })
        .collect::<tto::Result<Vec<_>>>()?;
    let manifest = SuiteManifest {
        format_version: 1,
        scenes: entries,
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = ablate(&manifest, mode, &cfg, jobs, |cond, i| eprintln!("{cond}: scene {}", i + 1))?;
    println!("{}", report.to_table());
    Ok(())
}
