//! Background execution of track and optimize jobs.

use std::sync::Arc;

use tto::model::{AnnotationSet, VideoClip};
use tto::pipeline::{optimize_clip, track_clip, PipelineConfig};
use tto::tracker::AppearanceEmbedding;
use tto::ttopt::OptimTrace;

use crate::state::{lock, AppState, JobKind, JobStatus, MethodResult, SessionHandle, TrackMethod};

struct Inputs {
    kind: JobKind,
    clip: Arc<VideoClip>,
    ann: AnnotationSet,
    config: PipelineConfig,
    embedding: Option<AppearanceEmbedding>,
}

struct Outcome {
    method: TrackMethod,
    result: MethodResult,
    trace: Option<OptimTrace>,
}

/// Queues `job_id` behind the worker semaphore and runs it off the async
/// threads. The job must already be recorded on the session as queued.
pub fn spawn(state: AppState, session: SessionHandle, job_id: String) {
    tokio::spawn(async move {
        let permit = state.0.workers.clone().acquire_owned().await;
        let Ok(_permit) = permit else { return };
        let Some(inputs) = start(&session, &job_id) else { return };
        let sess = session.clone();
        let jid = job_id.clone();
        let outcome = tokio::task::spawn_blocking(move || execute(inputs, &sess, &jid)).await;
        let outcome = match outcome {
            Ok(r) => r,
            Err(e) => Err(format!("job aborted: {e}")),
        };
        finish(&session, &job_id, outcome);
    });
}

/// Marks the job running and snapshots what it needs.
fn start(session: &SessionHandle, job_id: &str) -> Option<Inputs> {
    let mut s = lock(session);
    let clip = s.clip.clone();
    let ann = s.annotations.clone();
    let embedding = s.results.get(&TrackMethod::Optimized).map(|r| r.embedding.clone());
    let job = s.job_mut(job_id)?;
    if job.status != JobStatus::Queued {
        return None;
    }
    let Some(ann) = ann else {
        job.status = JobStatus::Failed;
        job.error = Some("session has no annotations".into());
        persist(&s);
        return None;
    };
    job.status = JobStatus::Running;
    let inputs = Inputs {
        kind: job.kind,
        clip,
        ann,
        config: job.config,
        embedding: if job.kind == JobKind::Track { embedding } else { None },
    };
    log::info!("job {job_id} running ({:?})", inputs.kind);
    persist(&s);
    Some(inputs)
}

fn execute(inputs: Inputs, session: &SessionHandle, job_id: &str) -> Result<Outcome, String> {
    let cfg = inputs.config;
    match inputs.kind {
        JobKind::Track => {
            let (embedding, tracks) =
                track_clip(&inputs.clip, &inputs.ann, inputs.embedding.as_ref(), &cfg).map_err(|e| e.to_string())?;
            let method = if inputs.embedding.is_some() {
                TrackMethod::Optimized
            } else {
                TrackMethod::Frozen
            };
            Ok(Outcome {
                method,
                result: MethodResult {
                    tracks,
                    embedding,
                    features: cfg.features,
                },
                trace: None,
            })
        }
        JobKind::Optimize => {
            let total = cfg.optim.steps.max(1) as f64;
            let out = optimize_clip(&inputs.clip, &inputs.ann, &cfg, |rec| {
                let mut s = lock(session);
                if let Some(job) = s.job_mut(job_id) {
                    job.step = rec.step + 1;
                    job.loss = Some(rec.total);
                    // The final tracking pass holds back the last slice.
                    job.advance(0.95 * job.step as f64 / total);
                }
            })
            .map_err(|e| e.to_string())?;
            Ok(Outcome {
                method: TrackMethod::Optimized,
                result: MethodResult {
                    tracks: out.tracks,
                    embedding: out.embedding,
                    features: cfg.features,
                },
                trace: Some(out.trace),
            })
        }
    }
}

fn finish(session: &SessionHandle, job_id: &str, outcome: Result<Outcome, String>) {
    let mut s = lock(session);
    let outcome = outcome.and_then(|o| {
        if let Some(trace) = &o.trace {
            let path = s.trace_path(job_id);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
            }
            tto::io::save_versioned(trace, &path).map_err(|e| e.to_string())?;
        }
        s.set_result(o.method, o.result).map_err(|e| format!("{e:#}"))?;
        Ok(o.method)
    });
    let Some(job) = s.job_mut(job_id) else { return };
    match outcome {
        Ok(method) => {
            job.status = JobStatus::Done;
            job.method = Some(method);
            job.advance(1.0);
            log::info!("job {job_id} done ({method})");
        }
        Err(msg) => {
            log::warn!("job {job_id} failed: {msg}");
            job.status = JobStatus::Failed;
            job.error = Some(msg);
        }
    }
    persist(&s);
}

fn persist(s: &crate::state::Session) {
    if let Err(e) = s.save_record() {
        log::error!("saving session {}: {e:#}", s.id);
    }
}

/// Starts every job left queued by a previous process.
pub fn resume(state: &AppState, pending: Vec<(SessionHandle, String)>) {
    for (session, job_id) in pending {
        log::info!("requeueing job {job_id}");
        spawn(state.clone(), session, job_id);
    }
}
