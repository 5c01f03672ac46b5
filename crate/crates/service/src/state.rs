//! Sessions, jobs, and their on-disk layout.
//!
//! ```text
//! <data_dir>/sessions/<id>/
//!     session.json          id, manifest, jobs
//!     video/                manifest.json + frame_XXXXX.png
//!     annotations.json
//!     results/<method>/     tracks.json, embedding.bin, features.json
//!     traces/<job>.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tto::features::FeatureConfig;
use tto::io::{self, Manifest};
use tto::model::{AnnotationSet, TrackSet, VideoClip};
use tto::pipeline::PipelineConfig;
use tto::tracker::AppearanceEmbedding;

use crate::ServiceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Track,
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_active(self) -> bool {
        matches!(self, JobStatus::Queued | JobStatus::Running)
    }
}

/// Which embedding produced a set of tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackMethod {
    /// The averaged initialization from the annotations.
    Frozen,
    /// The test-time optimized embedding.
    Optimized,
}

impl TrackMethod {
    pub const ALL: [TrackMethod; 2] = [TrackMethod::Frozen, TrackMethod::Optimized];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "frozen" => Some(TrackMethod::Frozen),
            "optimized" => Some(TrackMethod::Optimized),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrackMethod::Frozen => "frozen",
            TrackMethod::Optimized => "optimized",
        }
    }
}

impl fmt::Display for TrackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Fraction in [0, 1]; never decreases.
    pub progress: f64,
    pub step: usize,
    pub total_steps: usize,
    pub loss: Option<f64>,
    /// Tracks written by this job, once done.
    pub method: Option<TrackMethod>,
    pub error: Option<String>,
    pub config: PipelineConfig,
}

impl Job {
    pub fn advance(&mut self, progress: f64) {
        if progress > self.progress {
            self.progress = progress.min(1.0);
        }
    }
}

/// Output of a finished job, kept per method.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub tracks: TrackSet,
    pub embedding: AppearanceEmbedding,
    pub features: FeatureConfig,
}

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    format_version: u32,
    id: String,
    manifest: Manifest,
    jobs: Vec<Job>,
}

pub struct Session {
    pub id: String,
    pub manifest: Manifest,
    pub clip: Arc<VideoClip>,
    pub annotations: Option<AnnotationSet>,
    pub results: BTreeMap<TrackMethod, MethodResult>,
    pub jobs: Vec<Job>,
    dir: PathBuf,
}

impl Session {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn video_dir(&self) -> PathBuf {
        self.dir.join("video")
    }

    fn annotations_path(&self) -> PathBuf {
        self.dir.join("annotations.json")
    }

    fn result_dir(&self, method: TrackMethod) -> PathBuf {
        self.dir.join("results").join(method.as_str())
    }

    pub fn trace_path(&self, job_id: &str) -> PathBuf {
        self.dir.join("traces").join(format!("{job_id}.json"))
    }

    pub fn active_job(&self) -> Option<&Job> {
        self.jobs.iter().find(|j| j.status.is_active())
    }

    pub fn job_mut(&mut self, job_id: &str) -> Option<&mut Job> {
        self.jobs.iter_mut().find(|j| j.id == job_id)
    }

    /// Creates the session directory and writes the video into it.
    pub fn create(root: &Path, id: String, clip: VideoClip) -> anyhow::Result<Self> {
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let session = Self {
            manifest: Manifest::for_clip(&clip),
            clip: Arc::new(clip),
            annotations: None,
            results: BTreeMap::new(),
            jobs: Vec::new(),
            dir,
            id,
        };
        io::save_video(&session.clip, &session.video_dir())?;
        session.save_record()?;
        Ok(session)
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let record: SessionRecord = io::read_json(&dir.join("session.json"))?;
        let clip = io::load_video(&dir.join("video"))?;
        let mut session = Self {
            id: record.id,
            manifest: record.manifest,
            clip: Arc::new(clip),
            annotations: None,
            results: BTreeMap::new(),
            jobs: record.jobs,
            dir: dir.to_path_buf(),
        };
        let ann_path = session.annotations_path();
        if ann_path.exists() {
            session.annotations = Some(io::load_annotations(&ann_path)?);
        }
        for method in TrackMethod::ALL {
            let rdir = session.result_dir(method);
            if !rdir.exists() {
                continue;
            }
            let features: FeatureConfig = io::read_json(&rdir.join("features.json"))?;
            let result = MethodResult {
                tracks: io::load_tracks(&rdir.join("tracks.json"))?,
                embedding: io::load_embedding(&rdir.join("embedding.bin"), &features)?,
                features,
            };
            session.results.insert(method, result);
        }
        Ok(session)
    }

    pub fn save_record(&self) -> anyhow::Result<()> {
        let record = SessionRecord {
            format_version: io::FORMAT_VERSION,
            id: self.id.clone(),
            manifest: self.manifest.clone(),
            jobs: self.jobs.clone(),
        };
        io::write_json(&self.dir.join("session.json"), &record)?;
        Ok(())
    }

    pub fn set_annotations(&mut self, ann: AnnotationSet) -> anyhow::Result<()> {
        io::save_annotations(&ann, &self.annotations_path())?;
        self.annotations = Some(ann);
        Ok(())
    }

    pub fn set_result(&mut self, method: TrackMethod, result: MethodResult) -> anyhow::Result<()> {
        let rdir = self.result_dir(method);
        std::fs::create_dir_all(&rdir)?;
        io::write_json(&rdir.join("features.json"), &result.features)?;
        io::save_embedding(&result.embedding, &result.features, &rdir.join("embedding.bin"))?;
        io::save_tracks(&result.tracks, &rdir.join("tracks.json"))?;
        self.results.insert(method, result);
        Ok(())
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

pub struct Inner {
    pub config: ServiceConfig,
    pub sessions: RwLock<HashMap<String, SessionHandle>>,
    pub workers: Arc<Semaphore>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

pub fn lock(session: &SessionHandle) -> MutexGuard<'_, Session> {
    session.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl AppState {
    /// Opens `config.data_dir`, loading every session found there. Jobs that
    /// were running when the previous process stopped are marked failed;
    /// the returned list holds queued jobs that should be started again.
    pub fn open(config: ServiceConfig) -> anyhow::Result<(Self, Vec<(SessionHandle, String)>)> {
        let root = sessions_root(&config.data_dir);
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        let mut sessions = HashMap::new();
        let mut pending = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(&root)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        entries.sort();
        for dir in entries.into_iter().filter(|p| p.is_dir()) {
            let mut session = match Session::load(&dir) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("skipping {}: {e:#}", dir.display());
                    continue;
                }
            };
            let mut changed = false;
            let mut requeue = Vec::new();
            for job in &mut session.jobs {
                match job.status {
                    JobStatus::Running => {
                        job.status = JobStatus::Failed;
                        job.error = Some("interrupted by a restart".into());
                        changed = true;
                    }
                    JobStatus::Queued => requeue.push(job.id.clone()),
                    _ => {}
                }
            }
            if changed {
                session.save_record()?;
            }
            let id = session.id.clone();
            let handle = Arc::new(Mutex::new(session));
            pending.extend(requeue.into_iter().map(|job| (handle.clone(), job)));
            sessions.insert(id, handle);
        }
        let workers = Arc::new(Semaphore::new(config.workers.max(1)));
        let state = AppState(Arc::new(Inner {
            config,
            sessions: RwLock::new(sessions),
            workers,
        }));
        Ok((state, pending))
    }

    pub fn root(&self) -> PathBuf {
        sessions_root(&self.0.config.data_dir)
    }

    pub fn session(&self, id: &str) -> Option<SessionHandle> {
        self.0.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn insert(&self, session: Session) -> SessionHandle {
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.0
            .sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, handle.clone());
        handle
    }

    pub fn remove(&self, id: &str) -> Option<SessionHandle> {
        self.0.sessions.write().unwrap_or_else(|p| p.into_inner()).remove(id)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .0
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Finds the session owning `job_id`.
    pub fn find_job(&self, job_id: &str) -> Option<(SessionHandle, Job)> {
        let sessions = self.0.sessions.read().unwrap_or_else(|p| p.into_inner());
        sessions.values().find_map(|h| {
            let job = lock(h).jobs.iter().find(|j| j.id == job_id).cloned();
            job.map(|j| (h.clone(), j))
        })
    }
}

fn sessions_root(data_dir: &Path) -> PathBuf {
    data_dir.join("sessions")
}
