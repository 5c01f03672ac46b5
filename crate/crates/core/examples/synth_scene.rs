//! Render a preset scene and write it to disk.
//!
//! cargo run --example synth_scene -- [preset] [seed] [out_dir]

use std::path::PathBuf;

use tto::io;
use tto::synth::{generate_scene, preset, schedule_annotations, AnnotationSchedule};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map(String::as_str).unwrap_or("default");
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tto-scene"));

    let spec = preset(name, seed)?;
    let (clip, gt) = generate_scene(&spec)?;
    let ann = schedule_annotations(&gt, AnnotationSchedule::Interval { n: 10 }, 0.0, seed, clip.width(), clip.height())?;
    let paths = io::save_scene(&out, &clip, &gt, &ann)?;

    println!("{} frames of {}x{}, {} keypoints", clip.num_frames(), clip.width(), clip.height(), gt.num_keypoints());
    println!("{} labels on frames {:?}", ann.labels.len(), ann.annotated_frames());
    println!("video       {}", paths.video.display());
    println!("tracks      {}", paths.ground_truth.display());
    println!("annotations {}", paths.annotations.display());
    Ok(())
}
