//! Write and read back every on-disk format: video frames, annotations,
//! tracks (CSV and JSON) and embeddings.
//!
//! cargo run --example file_formats

use tto::features::FeatureConfig;
use tto::io;
use tto::synth::{generate_scene, preset_with, schedule_annotations, AnnotationSchedule};
use tto::tracker::AppearanceEmbedding;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let spec = preset_with("default", 1, Some(12), None)?;
    let (clip, gt) = generate_scene(&spec)?;
    let ann = schedule_annotations(&gt, AnnotationSchedule::S2, 0.0, 1, clip.width(), clip.height())?;

    let video = dir.path().join("video");
    io::save_video(&clip, &video)?;
    let back = io::load_video(&video)?;
    println!("video: {} frames, first frame file {}", back.num_frames(), io::frame_file_name(0));

    let ann_path = dir.path().join("annotations.json");
    io::save_annotations(&ann, &ann_path)?;
    assert_eq!(io::load_annotations(&ann_path)?, ann);
    println!("annotations: {} keypoints, {} labels", ann.num_keypoints(), ann.labels.len());

    for name in ["tracks.csv", "tracks.json"] {
        let path = dir.path().join(name);
        io::save_tracks(&gt, &path)?;
        let back = io::load_tracks(&path)?;
        let worst = gt
            .points()
            .iter()
            .zip(back.points())
            .map(|(a, b)| a.position().distance(b.position()))
            .fold(0.0, f64::max);
        println!("{name}: {} bytes, worst round-trip error {worst:.1e}", std::fs::metadata(&path)?.len());
    }
    let csv = std::fs::read_to_string(dir.path().join("tracks.csv"))?;
    println!("csv head:\n{}", csv.lines().take(4).collect::<Vec<_>>().join("\n"));

    let fcfg = FeatureConfig::default();
    let emb = AppearanceEmbedding::new(fcfg.patch_len(), vec![0.25; 3 * fcfg.patch_len()])?;
    let path = dir.path().join("embedding.bin");
    io::save_embedding(&emb, &fcfg, &path)?;
    assert_eq!(io::load_embedding(&path, &fcfg)?, emb);
    println!("embedding: {} keypoints x {} values", emb.num_keypoints(), emb.patch_len());
    Ok(())
}
