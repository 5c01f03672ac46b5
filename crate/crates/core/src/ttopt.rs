//! Test-time optimization of the appearance embedding.
//!
//! Only the per-keypoint embedding is trained; the feature pyramid and the
//! tracker are frozen. The objective is
//!
//! ```text
//! L = Σ_m γ^(M-m) · mean_(t,k) huber(P*_m(t,k) − P(t,k))  +  λ · (1/N) Σ_k ‖φ0_k − φ̂_k‖₁
//! ```
//!
//! where `P*_m` is the estimate after refinement iteration `m` and `φ0_k` is
//! the frame-0 patch at the query point.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::{linear_lr, Adam};
use crate::error::{Error, Result};
use crate::features::{extract_patch, FeatureConfig, VideoFeatures};
use crate::model::{AnnotationSet, Point2};
use crate::tracker::{AppearanceEmbedding, Refiner, TrackerConfig};

/// What the L1 regularizer pulls the embedding toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegAnchor {
    /// The frame-0 patch at the query point.
    #[default]
    QueryPatch,
    /// The averaged initialization over all annotated frames.
    Initialization,
}

/// Where each supervised refinement starts during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainInit {
    /// The keypoint's most recent supervised position before the labeled
    /// frame (the query point for its first label).
    #[default]
    PreviousAnnotation,
    /// The labeled position itself.
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Discount on earlier refinement iterations.
    pub gamma: f64,
    pub huber_delta: f64,
    pub lambda: f64,
    /// Recorded in the trace; the optimization itself draws no random numbers.
    pub seed: u64,
    pub anchor: RegAnchor,
    pub train_init: TrainInit,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr_start: 1e-3,
            lr_end: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gamma: 0.8,
            huber_delta: 6.0,
            lambda: 0.01,
            seed: 0,
            anchor: RegAnchor::QueryPatch,
            train_init: TrainInit::PreviousAnnotation,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::invalid("learning rates must satisfy lr_start >= lr_end > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::invalid("huber delta must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("adam parameters out of range"));
        }
        Ok(())
    }

    /// Learning rate at `step`, linear from `lr_start` to `lr_end`.
    pub fn lr(&self, step: usize) -> f64 {
        linear_lr(self.lr_start, self.lr_end, step, self.steps)
    }
}

/// Loss breakdown at one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub track: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub track: f64,
    pub reg: f64,
    pub lr: f64,
}

/// Per-step record of one optimization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimTrace {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Loss of the returned embedding (after the last update).
    pub final_loss: Option<LossParts>,
    pub duration_secs: f64,
}

/// One supervised refinement: start at `init` on `frame`, land on `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub keypoint: usize,
    pub frame: usize,
    pub init: Point2,
    pub target: Point2,
}

pub fn training_samples(ann: &AnnotationSet, mode: TrainInit) -> Vec<TrainingSample> {
    let mut out = Vec::new();
    for k in 0..ann.num_keypoints() {
        let mut prev = ann.query[k];
        for l in ann.labels_for(k) {
            let init = match mode {
                TrainInit::PreviousAnnotation => prev,
                TrainInit::Label => l.position(),
            };
            out.push(TrainingSample {
                keypoint: k,
                frame: l.frame,
                init,
                target: l.position(),
            });
            prev = l.position();
        }
    }
    out
}

/// Huber loss of a 2D residual, applied to its Euclidean norm.
pub fn huber(residual: [f64; 2], delta: f64) -> f64 {
    let r = residual[0].hypot(residual[1]);
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Gradient of [`huber`] with respect to the residual.
pub fn huber_grad(residual: [f64; 2], delta: f64) -> [f64; 2] {
    let r = residual[0].hypot(residual[1]);
    if r <= delta {
        residual
    } else {
        [delta * residual[0] / r, delta * residual[1] / r]
    }
}

/// Discounted tracking loss. `estimates[m][i]` is sample `i`'s position after
/// refinement iteration `m`; each iteration contributes the mean Huber loss
/// over samples weighted by `γ^(M-1-m)`.
pub fn tracking_loss(estimates: &[Vec<Point2>], targets: &[Point2], gamma: f64, delta: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::invalid("need estimates for at least one refinement iteration"));
    }
    if estimates.iter().any(|e| e.len() != targets.len()) {
        return Err(Error::invalid("every iteration needs an estimate for every annotated point"));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let m_total = estimates.len();
    let mut loss = 0.0;
    for (m, est) in estimates.iter().enumerate() {
        let w = gamma.powi((m_total - 1 - m) as i32);
        let mean = est
            .iter()
            .zip(targets)
            .map(|(p, t)| huber([p.x - t.x, p.y - t.y], delta))
            .sum::<f64>()
            / targets.len() as f64;
        loss += w * mean;
    }
    Ok(loss)
}

/// Mean over keypoints of the L1 distance between embedding and anchor.
pub fn reg_loss(emb: &AppearanceEmbedding, anchor: &AppearanceEmbedding) -> Result<f64> {
    if emb.values().len() != anchor.values().len() || emb.patch_len() != anchor.patch_len() {
        return Err(Error::shape("embedding and anchor shapes differ"));
    }
    let l1: f64 = emb.values().iter().zip(anchor.values()).map(|(a, b)| (a - b).abs()).sum();
    Ok(l1 / emb.num_keypoints() as f64)
}

fn check_keypoints(features: &VideoFeatures, ann: &AnnotationSet) -> Result<()> {
    if ann.query.len() != ann.num_keypoints() {
        return Err(Error::invalid("annotation set needs one query point per keypoint"));
    }
    if let Some(l) = ann.labels.iter().find(|l| l.frame >= features.num_frames() || l.keypoint_id >= ann.num_keypoints()) {
        return Err(Error::invalid(format!(
            "label at frame {} for keypoint {} is out of range",
            l.frame, l.keypoint_id
        )));
    }
    Ok(())
}

/// Frame-0 scale-1 patches at the query points.
pub fn query_embedding(features: &VideoFeatures, ann: &AnnotationSet) -> Result<AppearanceEmbedding> {
    check_keypoints(features, ann)?;
    let cfg = features.config();
    let patches = ann
        .query
        .iter()
        .map(|&q| extract_patch(features.frame(0), 1, q, cfg).map(|p| p.values))
        .collect::<Result<Vec<_>>>()?;
    AppearanceEmbedding::from_patches(patches)
}

/// Averages the scale-1 patch at the query point with the patches at every
/// labeled position of the same keypoint.
pub fn init_embedding(features: &VideoFeatures, ann: &AnnotationSet) -> Result<AppearanceEmbedding> {
    check_keypoints(features, ann)?;
    let cfg = features.config();
    let mut emb = query_embedding(features, ann)?;
    for k in 0..ann.num_keypoints() {
        let labels = ann.labels_for(k);
        if labels.is_empty() {
            continue;
        }
        let mut acc = emb.keypoint(k).to_vec();
        for l in &labels {
            let p = extract_patch(features.frame(l.frame), 1, l.position(), cfg)?;
            for (a, v) in acc.iter_mut().zip(&p.values) {
                *a += v;
            }
        }
        let n = (labels.len() + 1) as f64;
        for (dst, a) in emb.keypoint_mut(k).iter_mut().zip(&acc) {
            *dst = a / n;
        }
    }
    Ok(emb)
}

/// Differentiable objective over a fixed set of training samples.
pub struct Objective<'a> {
    features: &'a VideoFeatures,
    samples: Vec<TrainingSample>,
    anchor: AppearanceEmbedding,
    tcfg: TrackerConfig,
    ocfg: OptimConfig,
}

impl<'a> Objective<'a> {
    pub fn new(
        features: &'a VideoFeatures,
        samples: Vec<TrainingSample>,
        anchor: AppearanceEmbedding,
        tcfg: &TrackerConfig,
        ocfg: &OptimConfig,
    ) -> Result<Self> {
        tcfg.validate()?;
        if anchor.patch_len() != features.config().patch_len() {
            return Err(Error::shape("anchor does not match the feature config"));
        }
        if let Some(s) = samples.iter().find(|s| s.keypoint >= anchor.num_keypoints() || s.frame >= features.num_frames()) {
            return Err(Error::invalid(format!("sample for keypoint {} frame {} out of range", s.keypoint, s.frame)));
        }
        Ok(Self {
            features,
            samples,
            anchor,
            tcfg: *tcfg,
            ocfg: *ocfg,
        })
    }

    pub fn samples(&self) -> &[TrainingSample] {
        &self.samples
    }

    fn feature_config(&self) -> &FeatureConfig {
        self.features.config()
    }

    /// Loss without gradient, evaluated through the same refinement path.
    pub fn loss(&self, emb: &AppearanceEmbedding) -> Result<LossParts> {
        let m = self.tcfg.iterations;
        let mut estimates = vec![Vec::with_capacity(self.samples.len()); m];
        let refiners = self.refiners(emb)?;
        for s in &self.samples {
            let r = refiners[s.keypoint].refine(self.features.frame(s.frame), s.init);
            for (slot, p) in estimates.iter_mut().zip(&r.iterates) {
                slot.push(*p);
            }
        }
        let targets: Vec<Point2> = self.samples.iter().map(|s| s.target).collect();
        let track = tracking_loss(&estimates, &targets, self.ocfg.gamma, self.ocfg.huber_delta)?;
        let reg = reg_loss(emb, &self.anchor)?;
        Ok(LossParts {
            total: track + self.ocfg.lambda * reg,
            track,
            reg,
        })
    }

    fn refiners(&self, emb: &AppearanceEmbedding) -> Result<Vec<Refiner>> {
        if emb.num_keypoints() != self.anchor.num_keypoints() || emb.patch_len() != self.anchor.patch_len() {
            return Err(Error::shape("embedding does not match the objective's keypoints"));
        }
        (0..emb.num_keypoints())
            .map(|k| Refiner::new(emb.keypoint(k), self.feature_config(), &self.tcfg))
            .collect()
    }

    /// Loss and its gradient with respect to every embedding entry.
    pub fn loss_and_grad(&self, emb: &AppearanceEmbedding) -> Result<(LossParts, Vec<f64>)> {
        let m = self.tcfg.iterations;
        let refiners = self.refiners(emb)?;
        let plen = emb.patch_len();
        let mut grad = vec![0.0; emb.values().len()];
        let n_samples = self.samples.len().max(1) as f64;
        let (gamma, delta) = (self.ocfg.gamma, self.ocfg.huber_delta);
        let mut track = 0.0;
        for s in &self.samples {
            let refiner = &refiners[s.keypoint];
            let (r, tape) = refiner.refine_taped(self.features.frame(s.frame), s.init);
            let mut iterate_grads = vec![[0.0; 2]; m];
            for (i, p) in r.iterates.iter().enumerate() {
                let w = gamma.powi((m - 1 - i) as i32) / n_samples;
                let res = [p.x - s.target.x, p.y - s.target.y];
                track += w * huber(res, delta);
                let g = huber_grad(res, delta);
                iterate_grads[i] = [w * g[0], w * g[1]];
            }
            refiner.backward(&tape, &iterate_grads, &mut grad[s.keypoint * plen..(s.keypoint + 1) * plen]);
        }
        let n_kp = emb.num_keypoints() as f64;
        let lambda = self.ocfg.lambda;
        let mut reg = 0.0;
        for ((g, &e), &a) in grad.iter_mut().zip(emb.values()).zip(self.anchor.values()) {
            let d = e - a;
            reg += d.abs();
            if d != 0.0 {
                *g += lambda * d.signum() / n_kp;
            }
        }
        reg /= n_kp;
        Ok((
            LossParts {
                total: track + lambda * reg,
                track,
                reg,
            },
            grad,
        ))
    }
}

/// Optimizes the embedding against the annotation set. With no labeled
/// frames the initialization is returned unchanged with an empty trace.
pub fn optimize(
    features: &VideoFeatures,
    ann: &AnnotationSet,
    tcfg: &TrackerConfig,
    ocfg: &OptimConfig,
) -> Result<(AppearanceEmbedding, OptimTrace)> {
    optimize_with_progress(features, ann, tcfg, ocfg, |_| {})
}

/// [`optimize`] with a callback invoked after every step.
pub fn optimize_with_progress(
    features: &VideoFeatures,
    ann: &AnnotationSet,
    tcfg: &TrackerConfig,
    ocfg: &OptimConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(AppearanceEmbedding, OptimTrace)> {
    ocfg.validate()?;
    tcfg.validate()?;
    let started = Instant::now();
    let mut emb = init_embedding(features, ann)?;
    let mut trace = OptimTrace {
        seed: ocfg.seed,
        ..Default::default()
    };
    if ann.labels.is_empty() {
        log::warn!("no labeled frames; returning the initial embedding");
        return Ok((emb, trace));
    }
    let anchor = match ocfg.anchor {
        RegAnchor::QueryPatch => query_embedding(features, ann)?,
        RegAnchor::Initialization => emb.clone(),
    };
    let objective = Objective::new(features, training_samples(ann, ocfg.train_init), anchor, tcfg, ocfg)?;
    let mut adam = Adam::new(emb.values().len(), ocfg.beta1, ocfg.beta2, ocfg.eps);
    for step in 0..ocfg.steps {
        let (loss, grad) = objective.loss_and_grad(&emb)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical { step });
        }
        let lr = ocfg.lr(step);
        let rec = StepRecord {
            step,
            total: loss.total,
            track: loss.track,
            reg: loss.reg,
            lr,
        };
        trace.steps.push(rec);
        on_step(&rec);
        adam.step(emb.values_mut(), &grad, lr);
    }
    let last = objective.loss(&emb)?;
    if !last.total.is_finite() {
        return Err(Error::Numerical { step: ocfg.steps });
    }
    trace.final_loss = Some(last);
    trace.duration_secs = started.elapsed().as_secs_f64();
    Ok((emb, trace))
}
