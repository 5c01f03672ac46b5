mod common;

use std::io::Read;

use common::{small_scene, start, start_in};
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tto::io;
use tto::pipeline::{optimize_clip, track_clip, PipelineConfig};
use tto_service::ServiceConfig;

fn small_optim(steps: usize) -> Value {
    json!({ "optim": { "steps": steps } })
}

#[tokio::test]
async fn health_answers() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let (status, body) = srv.get("/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn multipart_upload_creates_session_and_serves_frames() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let scene = small_scene(1);
    let id = srv.upload(&scene.clip).await;

    let (status, summary) = srv.get(&format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["manifest"]["frame_count"], 10);
    assert_eq!(summary["manifest"]["width"], 80);
    assert_eq!(summary["has_annotations"], false);

    let resp = srv.client.get(srv.url(&format!("/sessions/{id}/frames/3"))).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let png = resp.bytes().await.unwrap();
    let frame = io::decode_png(&png, "frame").unwrap();
    assert_eq!(frame.to_u8(), scene.clip.frames()[3].to_u8());

    let (status, _) = srv.get(&format!("/sessions/{id}/frames/10")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, list) = srv.get("/sessions").await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn json_path_upload_reads_a_video_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(2);
    let video = dir.path().join("video");
    io::save_video(&scene.clip, &video).unwrap();
    let srv = start_in(&dir.path().join("data")).await;
    let (status, body) = srv.post_json("/sessions", &json!({ "path": video })).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["manifest"]["frame_count"], 10);

    let (status, body) = srv.post_json("/sessions", &json!({ "path": dir.path().join("nope") })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("nope"));
}

#[tokio::test]
async fn bad_uploads_name_the_offending_frame() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let scene = small_scene(3);
    let png = |i: usize| io::encode_png(&scene.clip.frames()[i]).unwrap();

    let form = Form::new()
        .part("a", Part::bytes(png(0)).file_name("frame_00000.png"))
        .part("b", Part::bytes(b"not a png".to_vec()).file_name("frame_00001.png"));
    let resp = srv.client.post(srv.url("/sessions")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = resp.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("frame_00001.png"), "{body}");

    let form = Form::new()
        .part("a", Part::bytes(png(0)).file_name("frame_00000.png"))
        .part("b", Part::bytes(png(2)).file_name("frame_00002.png"));
    let resp = srv.client.post(srv.url("/sessions")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = resp.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("gap at index 1"), "{body}");

    let form = Form::new().text("fps", "30");
    let resp = srv.client.post(srv.url("/sessions")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let (_, list) = srv.get("/sessions").await;
    assert!(list.as_array().unwrap().is_empty());
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(ServiceConfig {
        max_upload_bytes: 4096,
        ..ServiceConfig::new(dir.path())
    })
    .await;
    let scene = small_scene(4);
    let resp = srv
        .client
        .post(srv.url("/sessions"))
        .multipart(common::frame_form(&scene.clip))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn annotation_round_trip_and_violation_lists() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let scene = small_scene(5);
    let id = srv.upload(&scene.clip).await;
    let path = format!("/sessions/{id}/annotations");

    let (status, _) = srv.get(&path).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let good = io::annotations_to_json(&scene.ann);
    let (status, _) = srv.put_json(&path, &good).await;
    assert_eq!(status, StatusCode::OK);
    let (status, back) = srv.get(&path).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(back, good);

    // Two independent problems: both must be reported.
    let mut bad = good.clone();
    bad["query"][0]["x"] = json!(500.0);
    bad["labels"][0]["frame"] = json!(99);
    let (status, body) = srv.put_json(&path, &bad).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let violations = body["violations"].as_array().unwrap();
    assert!(violations.len() >= 2, "{body}");
    assert!(violations.iter().all(|v| v["location"].is_string() && v["message"].is_string()));

    let (status, body) = srv.put_json(&path, &json!({ "keypoints": "nope" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["violations"].as_array().unwrap().len(), 1);

    // The rejected writes left the stored set alone.
    let (_, back) = srv.get(&path).await;
    assert_eq!(back, good);

    let (status, _) = srv.put_json("/sessions/missing/annotations", &good).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn job_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let scene = small_scene(6);
    let id = srv.upload(&scene.clip).await;
    let jobs = format!("/sessions/{id}/jobs");

    let (status, _) = srv.post_json(&jobs, &json!({ "kind": "track" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = srv.get(&format!("/sessions/{id}/export")).await;
    assert_eq!(status, StatusCode::CONFLICT);

    srv.put_json(&format!("/sessions/{id}/annotations"), &io::annotations_to_json(&scene.ann))
        .await;
    let (status, body) = srv
        .post_json(&jobs, &json!({ "kind": "track", "config": { "tracker": { "bogus": 1 } } }))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["violations"][0]["location"], "$.config.tracker.bogus");

    let (status, _) = srv
        .post_json(&jobs, &json!({ "kind": "track", "config": { "optim": { "steps": 0 } } }))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = srv.post_json(&jobs, &json!({ "kind": "dance" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = srv.post_json("/sessions/nope/jobs", &json!({ "kind": "track" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = srv.get("/jobs/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn track_job_produces_frozen_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let scene = small_scene(7);
    let id = srv.session_with(&scene).await;

    let job = srv.submit(&id, "track", Value::Null).await;
    assert_eq!(job["status"], "QUEUED");
    let job = srv.wait(job["id"].as_str().unwrap()).await;
    assert_eq!(job["status"], "DONE", "{job}");
    assert_eq!(job["method"], "frozen");
    assert_eq!(job["progress"], 1.0);

    let (status, tracks) = srv.get(&format!("/sessions/{id}/tracks?method=frozen")).await;
    assert_eq!(status, StatusCode::OK);
    let served = serde_json::from_value::<io::TrackFile>(tracks).unwrap().into_tracks("t").unwrap();
    let (_, direct) = track_clip(&scene.clip, &scene.ann, None, &PipelineConfig::default()).unwrap();
    assert_eq!(served, direct);

    let (status, _) = srv.get(&format!("/sessions/{id}/tracks?method=optimized")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = srv.get(&format!("/sessions/{id}/tracks?method=magic")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, jobs) = srv.get(&format!("/sessions/{id}/jobs")).await;
    assert_eq!(jobs.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn optimize_job_reports_monotone_progress_and_blocks_edits() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let scene = small_scene(8);
    let id = srv.session_with(&scene).await;
    let job = srv.submit(&id, "optimize", small_optim(400)).await;
    let job_id = job["id"].as_str().unwrap().to_string();
    assert_eq!(job["total_steps"], 400);

    // While the job is active, conflicting requests are refused.
    let (status, _) = srv.post_json(&format!("/sessions/{id}/jobs"), &json!({ "kind": "track" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = srv
        .put_json(&format!("/sessions/{id}/annotations"), &io::annotations_to_json(&scene.ann))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let resp = srv.client.delete(srv.url(&format!("/sessions/{id}"))).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::CONFLICT);

    let mut seen = Vec::new();
    loop {
        let (_, j) = srv.get(&format!("/jobs/{job_id}")).await;
        seen.push(j["progress"].as_f64().unwrap());
        if j["status"] == "DONE" || j["status"] == "FAILED" {
            assert_eq!(j["status"], "DONE", "{j}");
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    assert!(seen.windows(2).all(|w| w[1] >= w[0]), "{seen:?}");
    assert!(seen.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(*seen.last().unwrap(), 1.0);

    let (status, trace) = srv.get(&format!("/jobs/{job_id}/trace")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace["steps"].as_array().unwrap().len(), 400);

    // Same config through the library gives the same tracks.
    let cfg = tto_service::resolve_config(Some(&small_optim(400))).unwrap();
    let direct = optimize_clip(&scene.clip, &scene.ann, &cfg, |_| {}).unwrap();
    let (_, tracks) = srv.get(&format!("/sessions/{id}/tracks?method=optimized")).await;
    let served = serde_json::from_value::<io::TrackFile>(tracks).unwrap().into_tracks("t").unwrap();
    assert_eq!(served, direct.tracks);

    // A later track job reuses the optimized embedding.
    let job = srv.submit(&id, "track", Value::Null).await;
    let job = srv.wait(job["id"].as_str().unwrap()).await;
    assert_eq!(job["method"], "optimized");
}

#[tokio::test]
async fn export_bundles_annotations_tracks_and_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start_in(dir.path()).await;
    let scene = small_scene(9);
    let id = srv.session_with(&scene).await;
    let job = srv.submit(&id, "optimize", small_optim(20)).await;
    srv.wait(job["id"].as_str().unwrap()).await;

    let resp = srv.client.get(srv.url(&format!("/sessions/{id}/export"))).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "application/zip");
    let bytes = resp.bytes().await.unwrap();
    let mut zip = zip::ZipArchive::new(std::io::Cursor::new(bytes.to_vec())).unwrap();
    let mut names: Vec<String> = zip.file_names().map(|n| n.unwrap().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["annotations.json", "embedding.bin", "tracks.csv"]);

    let mut read = |name: &str| {
        let mut buf = Vec::new();
        zip.by_name(name).unwrap().read_to_end(&mut buf).unwrap();
        buf
    };
    let ann = io::annotations_from_json(&read("annotations.json"), "zip").unwrap();
    assert_eq!(ann, scene.ann);
    let tracks = io::tracks_from_csv(std::str::from_utf8(&read("tracks.csv")).unwrap(), "zip").unwrap();
    assert_eq!(tracks.num_keypoints(), 3);
    let cfg = PipelineConfig::default();
    let emb = io::embedding_from_bytes(&read("embedding.bin"), &cfg.features, "zip").unwrap();
    assert_eq!(emb.num_keypoints(), 3);

    let resp = srv.client.delete(srv.url(&format!("/sessions/{id}"))).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::NO_CONTENT);
    let (status, _) = srv.get(&format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cors_headers_follow_the_configured_origin() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(ServiceConfig {
        cors_origin: Some("http://labeler.test".into()),
        ..ServiceConfig::new(dir.path())
    })
    .await;
    let resp = srv
        .client
        .get(srv.url("/health"))
        .header("origin", "http://labeler.test")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://labeler.test");
}

#[tokio::test]
async fn static_dir_serves_unrouted_paths() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>labeler</html>").unwrap();
    let srv = start(ServiceConfig {
        static_dir: Some(ui),
        ..ServiceConfig::new(dir.path().join("data"))
    })
    .await;
    let resp = srv.client.get(srv.url("/index.html")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.text().await.unwrap(), "<html>labeler</html>");
}
