#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use reqwest::multipart::{Form, Part};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio::task::JoinHandle;
use tto::io;
use tto::model::{AnnotationSet, TrackSet, VideoClip};
use tto::synth::{generate_scene, schedule_annotations, AnnotationSchedule, MotionSpec, SceneSpec};
use tto_service::ServiceConfig;

pub struct Server {
    pub base: String,
    pub client: Client,
    handle: JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

pub async fn start(cfg: ServiceConfig) -> Server {
    let app = tto_service::app(cfg).expect("service starts");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Server {
        base: format!("http://{addr}"),
        client: Client::new(),
        handle,
    }
}

pub async fn start_in(dir: &Path) -> Server {
    start(ServiceConfig::new(dir)).await
}

pub struct Scene {
    pub clip: VideoClip,
    pub gt: TrackSet,
    pub ann: AnnotationSet,
}

/// A small scene that tracks and optimizes in well under a second.
pub fn small_scene(seed: u64) -> Scene {
    let spec = SceneSpec {
        seed,
        frames: 10,
        width: 80,
        height: 80,
        num_keypoints: 3,
        limb_length: [8.0, 10.0],
        motion: MotionSpec {
            path_amplitude: 5.0,
            ..MotionSpec::default()
        },
        limb_half_width: 2.0,
        joint_radius: 3.0,
        distractors: 1,
        ..SceneSpec::default()
    };
    let (clip, gt) = generate_scene(&spec).unwrap();
    let ann = schedule_annotations(&gt, AnnotationSchedule::Interval { n: 3 }, 0.0, seed, 80, 80).unwrap();
    Scene { clip, gt, ann }
}

pub fn frame_form(clip: &VideoClip) -> Form {
    let mut form = Form::new().text("fps", clip.fps().to_string()).text("video_id", clip.id().to_string());
    for (i, frame) in clip.frames().iter().enumerate() {
        let name = io::frame_file_name(i);
        let part = Part::bytes(io::encode_png(frame).unwrap()).file_name(name.clone());
        form = form.part(name, part);
    }
    form
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.client.get(self.url(path)).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn post_json(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let resp = self.client.post(self.url(path)).json(body).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn put_json(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let resp = self.client.put(self.url(path)).json(body).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn upload(&self, clip: &VideoClip) -> String {
        let resp = self
            .client
            .post(self.url("/sessions"))
            .multipart(frame_form(clip))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::CREATED);
        let body: Value = resp.json().await.unwrap();
        body["id"].as_str().unwrap().to_string()
    }

    /// Uploads the scene and stores its annotations.
    pub async fn session_with(&self, scene: &Scene) -> String {
        let id = self.upload(&scene.clip).await;
        let (status, body) = self
            .put_json(&format!("/sessions/{id}/annotations"), &io::annotations_to_json(&scene.ann))
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        id
    }

    pub async fn submit(&self, session: &str, kind: &str, config: Value) -> Value {
        let (status, job) = self
            .post_json(&format!("/sessions/{session}/jobs"), &json!({"kind": kind, "config": config}))
            .await;
        assert_eq!(status, StatusCode::ACCEPTED, "{job}");
        job
    }

    /// Polls until the job leaves QUEUED/RUNNING.
    pub async fn wait(&self, job_id: &str) -> Value {
        for _ in 0..6000 {
            let (status, job) = self.get(&format!("/jobs/{job_id}")).await;
            assert_eq!(status, StatusCode::OK);
            if job["status"] == "DONE" || job["status"] == "FAILED" {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("job {job_id} did not finish");
    }
}
