//! Track a scene with the query-point embedding and with the averaged
//! initialization, without any optimization.
//!
//! cargo run --release --example track_frozen -- [seed]

use tto::pipeline::{prepare_scene, PipelineConfig};
use tto::synth::{preset, AnnotationSchedule, SuiteEntry};
use tto::tracker::track_video;
use tto::ttopt::init_embedding;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let cfg = PipelineConfig::default();
    let entry = SuiteEntry {
        id: format!("default-{seed:03}"),
        spec: preset("default", seed)?,
        schedule: AnnotationSchedule::Interval { n: 10 },
        noise_sigma: 0.0,
    };
    let scene = prepare_scene(&entry, &cfg.features)?;

    let (tracks, frozen) = scene.frozen(&cfg.tracker)?;
    let init = init_embedding(&scene.features, &scene.ann)?;
    let averaged = scene.score(&track_video(&scene.features, &scene.ann, &init, &cfg.tracker)?)?;

    println!("query patch only   δ_avg {:6.2}", frozen.delta.avg);
    println!("averaged init      δ_avg {:6.2}", averaged.delta.avg);
    let k = 0;
    println!("\nkeypoint {k}, every 10th frame (predicted vs ground truth):");
    for t in (0..tracks.num_frames()).step_by(10) {
        let (p, g) = (tracks.get(k, t), scene.gt.get(k, t));
        println!("  t={t:<3} ({:6.1}, {:6.1})  ({:6.1}, {:6.1})  visible={}", p.x, p.y, g.x, g.y, p.visible);
    }
    Ok(())
}
