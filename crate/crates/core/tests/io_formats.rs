use std::fs;

use proptest::prelude::*;
use tempfile::tempdir;
use tto::features::FeatureConfig;
use tto::io::*;
use tto::model::{AnnotationSet, Frame, KeypointDef, Label, Point2, TrackPoint, TrackSet, VideoClip};
use tto::tracker::AppearanceEmbedding;
use tto::Error;

fn gray_clip(t: usize, w: usize, h: usize) -> VideoClip {
    let frames = (0..t)
        .map(|i| {
            let bytes: Vec<u8> = (0..w * h).map(|p| ((p * 7 + i * 31) % 256) as u8).collect();
            Frame::from_u8(w, h, 1, &bytes).unwrap()
        })
        .collect();
    VideoClip::new("clip", 24.0, frames).unwrap()
}

fn sample_annotations() -> AnnotationSet {
    AnnotationSet {
        video_id: "clip".into(),
        keypoints: vec![KeypointDef { id: 0, name: "head".into() }, KeypointDef { id: 1, name: "tail".into() }],
        query: vec![Point2::new(10.25, 3.5), Point2::new(40.0, 50.125)],
        labels: vec![
            Label { frame: 2, keypoint_id: 0, x: 11.0, y: 4.0, visible: true },
            Label { frame: 2, keypoint_id: 1, x: 41.5, y: 49.0, visible: false },
        ],
    }
}

#[test]
fn video_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    let clip = gray_clip(3, 64, 64);
    save_video(&clip, dir.path()).unwrap();
    let back = load_video(dir.path()).unwrap();
    assert_eq!(back.num_frames(), 3);
    assert_eq!(back.channels(), 1);
    assert_eq!(back, clip);
}

#[test]
fn rgb_video_round_trip() {
    let dir = tempdir().unwrap();
    let bytes: Vec<u8> = (0..8 * 6 * 3).map(|i| (i * 5 % 256) as u8).collect();
    let f = Frame::from_u8(8, 6, 3, &bytes).unwrap();
    let clip = VideoClip::new("rgb", 30.0, vec![f.clone(), f]).unwrap();
    save_video(&clip, dir.path()).unwrap();
    assert_eq!(load_video(dir.path()).unwrap(), clip);
}

#[test]
fn full_intensity_byte_maps_to_one() {
    let f = Frame::from_u8(1, 1, 1, &[255]).unwrap();
    let png = encode_png(&f).unwrap();
    assert_eq!(decode_png(&png, "x").unwrap().data()[0], 1.0);
}

#[test]
fn missing_manifest_is_not_found() {
    let dir = tempdir().unwrap();
    assert!(matches!(load_video(dir.path()), Err(Error::NotFound(_))));
}

#[test]
fn missing_middle_frame_reports_gap() {
    let dir = tempdir().unwrap();
    save_video(&gray_clip(3, 16, 16), dir.path()).unwrap();
    fs::remove_file(dir.path().join("frame_00001.png")).unwrap();
    let err = load_video(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert!(err.to_string().contains("gap at index 1"), "{err}");
}

#[test]
fn missing_last_frame_reports_gap() {
    let dir = tempdir().unwrap();
    save_video(&gray_clip(3, 16, 16), dir.path()).unwrap();
    fs::remove_file(dir.path().join("frame_00002.png")).unwrap();
    assert!(load_video(dir.path()).unwrap_err().to_string().contains("gap at index 2"));
}

#[test]
fn geometry_mismatch_names_frame() {
    let dir = tempdir().unwrap();
    save_video(&gray_clip(3, 16, 16), dir.path()).unwrap();
    let small = Frame::from_u8(8, 8, 1, &[0; 64]).unwrap();
    fs::write(dir.path().join("frame_00002.png"), encode_png(&small).unwrap()).unwrap();
    let err = load_video(dir.path()).unwrap_err().to_string();
    assert!(err.contains("frame_00002.png") && err.contains("geometry"), "{err}");
}

#[test]
fn corrupt_png_is_format_error() {
    let dir = tempdir().unwrap();
    save_video(&gray_clip(2, 16, 16), dir.path()).unwrap();
    fs::write(dir.path().join("frame_00001.png"), b"not a png").unwrap();
    let err = load_video(dir.path()).unwrap_err().to_string();
    assert!(err.contains("frame_00001.png"), "{err}");
}

#[test]
fn annotations_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("a.json");
    let ann = sample_annotations();
    save_annotations(&ann, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"format_version\": 1"));
    assert_eq!(load_annotations(&path).unwrap(), ann);
}

#[test]
fn label_at_frame_zero_rejected_on_load() {
    let doc = br#"{"video_id":"v","keypoints":[{"id":0,"name":"a"}],
        "query":[{"keypoint_id":0,"x":1,"y":1}],
        "labels":[{"frame":0,"keypoint_id":0,"x":1,"y":1,"visible":true}]}"#;
    let err = annotations_from_json(doc, "a.json").unwrap_err().to_string();
    assert!(err.contains("$.labels[0]") && err.contains("frame 0"), "{err}");
}

#[test]
fn visible_defaults_to_true() {
    let doc = br#"{"video_id":"v","keypoints":[{"id":0,"name":"a"}],
        "query":[{"keypoint_id":0,"x":1,"y":1}],
        "labels":[{"frame":3,"keypoint_id":0,"x":1,"y":1}]}"#;
    assert!(annotations_from_json(doc, "a.json").unwrap().labels[0].visible);
}

#[test]
fn missing_query_is_reported() {
    let doc = br#"{"video_id":"v","keypoints":[{"id":0,"name":"a"},{"id":1,"name":"b"}],
        "query":[{"keypoint_id":0,"x":1,"y":1}]}"#;
    let err = annotations_from_json(doc, "a.json").unwrap_err().to_string();
    assert!(err.contains("$.query") && err.contains("keypoint 1"), "{err}");
}

#[test]
fn wrong_type_reports_json_path() {
    let doc = br#"{"video_id":"v","keypoints":[{"id":0,"name":"a"}],"query":[{"keypoint_id":0,"x":"left","y":1}]}"#;
    let err = annotations_from_json(doc, "a.json").unwrap_err().to_string();
    assert!(err.contains("$.query[0].x"), "{err}");
}

fn tracks(n: usize, t: usize) -> TrackSet {
    let pts = (0..n * t)
        .map(|i| TrackPoint::new(Point2::new(i as f64 * 1.1234567, 200.0 - i as f64 / 3.0), i % 3 != 0, (i % 10) as f64 / 10.0))
        .collect();
    TrackSet::new("clip", n, t, pts).unwrap()
}

#[test]
fn track_csv_has_one_row_per_sample() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("t.csv");
    save_tracks(&tracks(2, 3), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 6);
}

#[test]
fn track_csv_round_trip_to_six_decimals() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let orig = tracks(3, 5);
    save_tracks(&orig, &path).unwrap();
    let back = load_tracks(&path).unwrap();
    assert_eq!(back.video_id, orig.video_id);
    for (a, b) in back.points().iter().zip(orig.points()) {
        assert!((a.x - b.x).abs() <= 5e-7 && (a.y - b.y).abs() <= 5e-7);
        assert!((a.confidence - b.confidence).abs() <= 5e-7);
        assert_eq!(a.visible, b.visible);
    }
}

#[test]
fn shuffled_rows_are_resorted() {
    let orig = tracks(2, 3);
    let csv = tracks_to_csv(&orig);
    let mut lines: Vec<&str> = csv.lines().collect();
    let (head, body) = lines.split_at_mut(3);
    body.reverse();
    let shuffled = [head.join("\n"), body.join("\n")].join("\n");
    let back = tracks_from_csv(&shuffled, "t.csv").unwrap();
    assert_eq!(tracks_to_csv(&back), csv);
}

#[test]
fn wrong_row_count_rejected() {
    let csv = tracks_to_csv(&tracks(2, 3));
    let truncated: Vec<&str> = csv.lines().take(csv.lines().count() - 1).collect();
    let err = tracks_from_csv(&truncated.join("\n"), "t.csv").unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}

#[test]
fn missing_version_line_rejected() {
    let csv = tracks_to_csv(&tracks(1, 2));
    assert!(tracks_from_csv(csv.strip_prefix("# v1\n").unwrap(), "t.csv").is_err());
}

#[test]
fn track_json_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("t.json");
    let orig = tracks(3, 4);
    save_tracks(&orig, &path).unwrap();
    assert_eq!(load_tracks(&path).unwrap(), orig);
}

#[test]
fn embedding_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("e.bin");
    let cfg = FeatureConfig::default();
    let values: Vec<f64> = (0..2 * cfg.patch_len()).map(|i| (i as f64).sin() * 1e3).collect();
    let emb = AppearanceEmbedding::new(cfg.patch_len(), values).unwrap();
    save_embedding(&emb, &cfg, &path).unwrap();
    assert_eq!(load_embedding(&path, &cfg).unwrap(), emb);
}

#[test]
fn embedding_from_other_config_rejected() {
    let cfg = FeatureConfig::default();
    let emb = AppearanceEmbedding::new(cfg.patch_len(), vec![0.5; cfg.patch_len()]).unwrap();
    let bytes = embedding_to_bytes(&emb, &cfg).unwrap();
    let other = FeatureConfig { k: 2, ..cfg };
    assert!(embedding_from_bytes(&bytes, &other, "e").is_err());
    assert!(embedding_from_bytes(&bytes[..bytes.len() - 8], &cfg, "e").is_err());
    assert!(embedding_from_bytes(b"garbage", &cfg, "e").is_err());
}

proptest! {
    #[test]
    fn annotation_json_round_trips_any_finite_values(
        qs in prop::collection::vec((0.0..1e4f64, 0.0..1e4f64), 1..5),
        ls in prop::collection::vec((1usize..50, 0.0..1e4f64, 0.0..1e4f64, any::<bool>()), 0..10),
    ) {
        let n = qs.len();
        let mut seen = std::collections::HashSet::new();
        let labels = ls
            .into_iter()
            .enumerate()
            .map(|(i, (f, x, y, v))| Label { frame: f, keypoint_id: i % n, x, y, visible: v })
            .filter(|l| seen.insert((l.frame, l.keypoint_id)))
            .collect();
        let ann = AnnotationSet {
            video_id: "p".into(),
            keypoints: (0..n).map(|id| KeypointDef { id, name: format!("k{id}") }).collect(),
            query: qs.into_iter().map(|(x, y)| Point2::new(x, y)).collect(),
            labels,
        };
        let text = serde_json::to_vec(&annotations_to_json(&ann)).unwrap();
        prop_assert_eq!(annotations_from_json(&text, "p").unwrap(), ann);
    }

    #[test]
    fn track_csv_round_trip_within_precision(
        vals in prop::collection::vec((-1e4..1e4f64, -1e4..1e4f64, any::<bool>(), 0.0..=1.0f64), 1..30),
    ) {
        let t = vals.len();
        let pts = vals.iter().map(|&(x, y, v, c)| TrackPoint::new(Point2::new(x, y), v, c)).collect();
        let orig = TrackSet::new("p", 1, t, pts).unwrap();
        let back = tracks_from_csv(&tracks_to_csv(&orig), "p").unwrap();
        for (a, b) in back.points().iter().zip(orig.points()) {
            prop_assert!((a.x - b.x).abs() <= 5e-7 && (a.y - b.y).abs() <= 5e-7);
            prop_assert_eq!(a.visible, b.visible);
        }
    }
}
