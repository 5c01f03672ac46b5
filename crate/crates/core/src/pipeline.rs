//! End-to-end runs over synthetic scenes: frozen tracking, optimization,
//! evaluation, and the ablation sweeps built from them.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, VideoFeatures};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{split_frames, validate_annotations, AnnotationSet, TrackSet, VideoClip};
use crate::smooth::KalmanConfig;
use crate::synth::{generate_scene, schedule_annotations, AnnotationSchedule, SuiteEntry, SuiteManifest};
use crate::tracker::{track_video, AppearanceEmbedding, TrackerConfig};
use crate::ttopt::{init_embedding, optimize_with_progress, query_embedding, OptimConfig, OptimTrace, StepRecord};

/// Every tunable of the pipeline; doubles as the CLI/service config file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub tracker: TrackerConfig,
    pub optim: OptimConfig,
    pub kalman: KalmanConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.tracker.validate()?;
        self.optim.validate()?;
        self.kalman.validate()
    }
}

/// Tracks with the unmodified frame-0 appearance.
pub fn frozen_tracks(features: &VideoFeatures, ann: &AnnotationSet, tcfg: &TrackerConfig) -> Result<TrackSet> {
    let emb = query_embedding(features, ann)?;
    track_video(features, ann, &emb, tcfg)
}

/// Frames scored for a schedule: the held-out split for `Interval(n)` with
/// `n >= 2`, otherwise every frame that is neither the query nor labeled.
pub fn eval_frames(sched: AnnotationSchedule, ann: &AnnotationSet, num_frames: usize) -> Result<Vec<usize>> {
    if let AnnotationSchedule::Interval { n } = sched {
        if n >= 2 {
            return Ok(split_frames(num_frames, n)?.1);
        }
        return Ok((1..num_frames).collect());
    }
    let labeled = ann.annotated_frames();
    Ok((1..num_frames).filter(|f| !labeled.contains(f)).collect())
}

/// Rejects annotations that violate any invariant against the clip.
pub fn check_annotations(clip: &VideoClip, ann: &AnnotationSet) -> Result<()> {
    let violations = validate_annotations(clip, ann);
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
    Err(Error::invalid(format!("invalid annotations: {}", list.join("; "))))
}

/// Tracks a clip with `emb`, or with the averaged initialization built
/// from the annotations when `emb` is `None`. Returns the embedding used.
pub fn track_clip(
    clip: &VideoClip,
    ann: &AnnotationSet,
    emb: Option<&AppearanceEmbedding>,
    cfg: &PipelineConfig,
) -> Result<(AppearanceEmbedding, TrackSet)> {
    cfg.validate()?;
    check_annotations(clip, ann)?;
    let features = VideoFeatures::extract(clip, &cfg.features)?;
    let emb = match emb {
        Some(e) if e.patch_len() != cfg.features.patch_len() => {
            return Err(Error::shape(format!(
                "embedding patch length {} does not match feature config ({})",
                e.patch_len(),
                cfg.features.patch_len()
            )))
        }
        Some(e) => e.clone(),
        None => init_embedding(&features, ann)?,
    };
    let tracks = track_video(&features, ann, &emb, &cfg.tracker)?;
    Ok((emb, tracks))
}

pub struct OptimizedClip {
    pub embedding: AppearanceEmbedding,
    pub tracks: TrackSet,
    pub trace: OptimTrace,
}

/// Optimizes the embedding on a clip, then tracks with it.
pub fn optimize_clip(
    clip: &VideoClip,
    ann: &AnnotationSet,
    cfg: &PipelineConfig,
    on_step: impl FnMut(&StepRecord),
) -> Result<OptimizedClip> {
    cfg.validate()?;
    check_annotations(clip, ann)?;
    let features = VideoFeatures::extract(clip, &cfg.features)?;
    let (embedding, trace) = optimize_with_progress(&features, ann, &cfg.tracker, &cfg.optim, on_step)?;
    let tracks = track_video(&features, ann, &embedding, &cfg.tracker)?;
    Ok(OptimizedClip {
        embedding,
        tracks,
        trace,
    })
}

/// One rendered and annotated benchmark scene.
pub struct PreparedScene {
    pub id: String,
    pub clip: VideoClip,
    pub gt: TrackSet,
    pub ann: AnnotationSet,
    pub features: VideoFeatures,
    pub eval_frames: Vec<usize>,
}

pub fn prepare_scene(entry: &SuiteEntry, fcfg: &FeatureConfig) -> Result<PreparedScene> {
    let (clip, gt) = generate_scene(&entry.spec)?;
    let ann = schedule_annotations(&gt, entry.schedule, entry.noise_sigma, entry.spec.seed, clip.width(), clip.height())?;
    let features = VideoFeatures::extract(&clip, fcfg)?;
    let eval_frames = eval_frames(entry.schedule, &ann, clip.num_frames())?;
    Ok(PreparedScene {
        id: entry.id.clone(),
        clip,
        gt,
        ann,
        features,
        eval_frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub id: String,
    pub frozen: MetricReport,
    pub optimized: MetricReport,
    pub trace: OptimTrace,
}

pub struct OptimizedScene {
    pub embedding: AppearanceEmbedding,
    pub tracks: TrackSet,
    pub report: MetricReport,
    pub trace: OptimTrace,
}

impl PreparedScene {
    pub fn score(&self, tracks: &TrackSet) -> Result<MetricReport> {
        evaluate(tracks, &self.gt, self.clip.width(), self.clip.height(), &self.eval_frames)
    }

    pub fn frozen(&self, tcfg: &TrackerConfig) -> Result<(TrackSet, MetricReport)> {
        let tracks = frozen_tracks(&self.features, &self.ann, tcfg)?;
        let report = self.score(&tracks)?;
        Ok((tracks, report))
    }

    pub fn optimized(&self, cfg: &PipelineConfig, on_step: impl FnMut(&StepRecord)) -> Result<OptimizedScene> {
        let (embedding, trace) = optimize_with_progress(&self.features, &self.ann, &cfg.tracker, &cfg.optim, on_step)?;
        let tracks = track_video(&self.features, &self.ann, &embedding, &cfg.tracker)?;
        let report = self.score(&tracks)?;
        Ok(OptimizedScene {
            embedding,
            tracks,
            report,
            trace,
        })
    }
}

/// Frozen versus optimized on one suite entry.
pub fn run_scene(entry: &SuiteEntry, cfg: &PipelineConfig) -> Result<SceneOutcome> {
    let scene = prepare_scene(entry, &cfg.features)?;
    let (_, frozen) = scene.frozen(&cfg.tracker)?;
    let opt = scene.optimized(cfg, |_| {})?;
    Ok(SceneOutcome {
        id: scene.id,
        frozen,
        optimized: opt.report,
        trace: opt.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Intervals,
    Strategies,
    Pseudo,
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intervals" => Ok(Self::Intervals),
            "strategies" => Ok(Self::Strategies),
            "pseudo" => Ok(Self::Pseudo),
            other => Err(Error::invalid(format!("unknown ablation mode '{other}'"))),
        }
    }
}

pub const ABLATION_INTERVALS: [usize; 6] = [1, 2, 5, 10, 15, 20];
pub const PSEUDO_LABEL_SIGMA: f64 = 4.0;

/// One ablation condition applied to every suite scene.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCondition {
    pub name: String,
    pub schedule: Option<AnnotationSchedule>,
    pub noise_sigma: Option<f64>,
}

pub fn ablation_conditions(mode: AblationMode) -> Vec<AblationCondition> {
    match mode {
        AblationMode::Intervals => ABLATION_INTERVALS
            .iter()
            .map(|&n| AblationCondition {
                name: format!("interval-{n}"),
                schedule: Some(AnnotationSchedule::Interval { n }),
                noise_sigma: None,
            })
            .collect(),
        AblationMode::Strategies => [AnnotationSchedule::S1, AnnotationSchedule::S2, AnnotationSchedule::S3]
            .into_iter()
            .map(|s| AblationCondition {
                name: s.label(),
                schedule: Some(s),
                noise_sigma: None,
            })
            .collect(),
        AblationMode::Pseudo => vec![
            AblationCondition {
                name: "exact".into(),
                schedule: None,
                noise_sigma: Some(0.0),
            },
            AblationCondition {
                name: "noisy".into(),
                schedule: None,
                noise_sigma: Some(PSEUDO_LABEL_SIGMA),
            },
        ],
    }
}

impl AblationCondition {
    pub fn apply(&self, entry: &SuiteEntry) -> SuiteEntry {
        SuiteEntry {
            schedule: self.schedule.unwrap_or(entry.schedule),
            noise_sigma: self.noise_sigma.unwrap_or(entry.noise_sigma),
            ..entry.clone()
        }
    }
}

/// Mean metrics of the optimized tracker under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub condition: String,
    pub scenes: usize,
    pub delta_avg: f64,
    #[serde(rename = "J")]
    pub jitter: f64,
    #[serde(rename = "J_masked")]
    pub jitter_masked: f64,
    pub per_scene_delta_avg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: AblationMode,
    pub rows: Vec<AblationRow>,
}

/// Runs every condition of `mode` over the suite, spreading the
/// (condition, scene) runs over `jobs` threads. Results do not depend on
/// `jobs`. `on_scene(condition, scene_index)` is called before each run.
pub fn ablate(
    suite: &SuiteManifest,
    mode: AblationMode,
    cfg: &PipelineConfig,
    jobs: usize,
    on_scene: impl Fn(&str, usize) + Sync,
) -> Result<AblationReport> {
    let rows = run_conditions(suite, &ablation_conditions(mode), cfg, jobs, on_scene)?;
    Ok(AblationReport { mode, rows })
}

/// Optimizes every suite scene under each condition; one row per condition.
pub fn run_conditions(
    suite: &SuiteManifest,
    conditions: &[AblationCondition],
    cfg: &PipelineConfig,
    jobs: usize,
    on_scene: impl Fn(&str, usize) + Sync,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if suite.scenes.is_empty() {
        return Err(Error::invalid("suite has no scenes"));
    }
    if jobs == 0 {
        return Err(Error::invalid("jobs must be >= 1"));
    }
    let per = suite.scenes.len();
    let total = conditions.len() * per;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<MetricReport>>>> = Mutex::new((0..total).map(|_| None).collect());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= total {
            break;
        }
        let (cond, entry) = (&conditions[i / per], &suite.scenes[i % per]);
        on_scene(&cond.name, i % per);
        let out = prepare_scene(&cond.apply(entry), &cfg.features).and_then(|scene| Ok(scene.optimized(cfg, |_| {})?.report));
        results.lock().expect("result slots")[i] = Some(out);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.min(total) {
            s.spawn(work);
        }
        work();
    });
    let mut results = results.into_inner().expect("result slots").into_iter();
    let mut rows = Vec::with_capacity(conditions.len());
    for cond in conditions {
        let reports = results
            .by_ref()
            .take(per)
            .map(|r| r.expect("every slot is filled"))
            .collect::<Result<Vec<_>>>()?;
        let n = per as f64;
        rows.push(AblationRow {
            condition: cond.name.clone(),
            scenes: per,
            delta_avg: reports.iter().map(|r| r.delta.avg).sum::<f64>() / n,
            jitter: reports.iter().map(|r| r.jitter).sum::<f64>() / n,
            jitter_masked: reports.iter().map(|r| r.jitter_masked).sum::<f64>() / n,
            per_scene_delta_avg: reports.iter().map(|r| r.delta.avg).collect(),
        });
    }
    Ok(rows)
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14} {:>6} {:>8} {:>8} {:>9}\n", "condition", "scenes", "d_avg", "J", "J_masked");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>6} {:>8.2} {:>8.3} {:>9.3}\n",
                r.condition, r.scenes, r.delta_avg, r.jitter, r.jitter_masked
            ));
        }
        out
    }
}
