//! Position accuracy and jitter metrics, computed in a 256×256 evaluation
//! space.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Point2, TrackSet};

pub const EVAL_SIZE: f64 = 256.0;
pub const THRESHOLDS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
/// Eval-space distance at or beyond which a jitter sample is weighted up.
pub const MASK_DISTANCE: f64 = 4.0;
pub const MASK_WEIGHT: f64 = 10.0;

/// Maps a pixel position to 256×256 evaluation coordinates.
pub fn to_eval_space(p: Point2, width: usize, height: usize) -> Result<Point2> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("video geometry must be non-empty"));
    }
    Ok(Point2::new(p.x * EVAL_SIZE / width as f64, p.y * EVAL_SIZE / height as f64))
}

fn eval_distance(a: Point2, b: Point2, width: usize, height: usize) -> f64 {
    let sx = EVAL_SIZE / width as f64;
    let sy = EVAL_SIZE / height as f64;
    ((a.x - b.x) * sx).hypot((a.y - b.y) * sy)
}

/// Accuracy (percent) at each threshold plus their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaScores {
    #[serde(rename = "1")]
    pub t1: f64,
    #[serde(rename = "2")]
    pub t2: f64,
    #[serde(rename = "4")]
    pub t4: f64,
    #[serde(rename = "8")]
    pub t8: f64,
    #[serde(rename = "16")]
    pub t16: f64,
    pub avg: f64,
}

impl DeltaScores {
    pub fn per_threshold(&self) -> [f64; 5] {
        [self.t1, self.t2, self.t4, self.t8, self.t16]
    }

    fn from_counts(correct: [usize; 5], total: usize) -> Self {
        let pct = correct.map(|c| 100.0 * c as f64 / total as f64);
        Self {
            t1: pct[0],
            t2: pct[1],
            t4: pct[2],
            t8: pct[3],
            t16: pct[4],
            avg: pct.iter().sum::<f64>() / 5.0,
        }
    }
}

fn check_pair(pred: &TrackSet, gt: &TrackSet) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::invalid(format!(
            "prediction is {}x{} (keypoints x frames) but ground truth is {}x{}",
            pred.num_keypoints(),
            pred.num_frames(),
            gt.num_keypoints(),
            gt.num_frames()
        )));
    }
    Ok(())
}

fn check_frames(frames: &[usize], t: usize) -> Result<()> {
    match frames.iter().find(|&&f| f >= t) {
        Some(f) => Err(Error::invalid(format!("evaluation frame {f} out of range for {t} frames"))),
        None => Ok(()),
    }
}

fn delta_counts(pred: &TrackSet, gt: &TrackSet, k: usize, frames: &[usize], w: usize, h: usize) -> ([usize; 5], usize) {
    let mut correct = [0usize; 5];
    let mut total = 0;
    for &f in frames {
        let g = gt.get(k, f);
        if !g.visible {
            continue;
        }
        total += 1;
        let d = eval_distance(pred.get(k, f).position(), g.position(), w, h);
        for (c, th) in correct.iter_mut().zip(THRESHOLDS) {
            if d < th {
                *c += 1;
            }
        }
    }
    (correct, total)
}

/// Accuracy over `eval_frames` × keypoints with visible ground truth.
pub fn delta_scores(pred: &TrackSet, gt: &TrackSet, width: usize, height: usize, eval_frames: &[usize]) -> Result<DeltaScores> {
    check_pair(pred, gt)?;
    check_frames(eval_frames, gt.num_frames())?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("video geometry must be non-empty"));
    }
    let mut correct = [0usize; 5];
    let mut total = 0;
    for k in 0..gt.num_keypoints() {
        let (c, t) = delta_counts(pred, gt, k, eval_frames, width, height);
        for (a, b) in correct.iter_mut().zip(c) {
            *a += b;
        }
        total += t;
    }
    if total == 0 {
        return Err(Error::invalid("no visible ground-truth samples in the evaluation frames"));
    }
    Ok(DeltaScores::from_counts(correct, total))
}

fn jitter_frames(frames: Option<&[usize]>, t: usize) -> Result<Vec<usize>> {
    let frames: Vec<usize> = match frames {
        Some(f) => {
            check_frames(f, t)?;
            let mut f = f.to_vec();
            f.sort_unstable();
            f.dedup();
            f
        }
        None => (0..t).collect(),
    };
    if frames.len() < 2 {
        return Err(Error::invalid("jitter needs at least two frames"));
    }
    Ok(frames)
}

fn keypoint_jitter(pred: &TrackSet, gt: Option<&TrackSet>, k: usize, frames: &[usize], w: usize, h: usize) -> f64 {
    let mut sum = 0.0;
    for pair in frames.windows(2) {
        let (a, b) = (pred.get(k, pair[0]).position(), pred.get(k, pair[1]).position());
        let speed = eval_distance(a, b, w, h);
        let weight = match gt {
            Some(gt) => {
                let g = gt.get(k, pair[1]);
                if g.visible && eval_distance(b, g.position(), w, h) >= MASK_DISTANCE {
                    MASK_WEIGHT
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        sum += weight * speed;
    }
    sum / (frames.len() - 1) as f64
}

/// Mean per-frame displacement magnitude, averaged over keypoints. `frames`
/// restricts the measurement to consecutive members of a frame set.
pub fn jitter(pred: &TrackSet, width: usize, height: usize, frames: Option<&[usize]>) -> Result<f64> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("video geometry must be non-empty"));
    }
    let frames = jitter_frames(frames, pred.num_frames())?;
    if pred.num_keypoints() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..pred.num_keypoints())
        .map(|k| keypoint_jitter(pred, None, k, &frames, width, height))
        .sum();
    Ok(total / pred.num_keypoints() as f64)
}

/// Jitter with each displacement weighted 10 when its destination frame's
/// prediction is at least 4 eval pixels from visible ground truth.
pub fn jitter_masked(pred: &TrackSet, gt: &TrackSet, width: usize, height: usize, frames: Option<&[usize]>) -> Result<f64> {
    check_pair(pred, gt)?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("video geometry must be non-empty"));
    }
    let frames = jitter_frames(frames, pred.num_frames())?;
    if pred.num_keypoints() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..pred.num_keypoints())
        .map(|k| keypoint_jitter(pred, Some(gt), k, &frames, width, height))
        .sum();
    Ok(total / pred.num_keypoints() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointMetrics {
    pub keypoint_id: usize,
    /// Absent when the keypoint has no visible ground truth in the evaluation frames.
    pub delta: Option<DeltaScores>,
    #[serde(rename = "J")]
    pub jitter: f64,
    #[serde(rename = "J_masked")]
    pub jitter_masked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub delta: DeltaScores,
    #[serde(rename = "J")]
    pub jitter: f64,
    #[serde(rename = "J_masked")]
    pub jitter_masked: f64,
    pub per_keypoint: Vec<KeypointMetrics>,
}

/// Full report: accuracy over `eval_frames`, jitter over all frames.
pub fn evaluate(pred: &TrackSet, gt: &TrackSet, width: usize, height: usize, eval_frames: &[usize]) -> Result<MetricReport> {
    let delta = delta_scores(pred, gt, width, height, eval_frames)?;
    let j = jitter(pred, width, height, None)?;
    let jm = jitter_masked(pred, gt, width, height, None)?;
    let frames: Vec<usize> = (0..pred.num_frames()).collect();
    let per_keypoint = (0..gt.num_keypoints())
        .map(|k| {
            let (c, t) = delta_counts(pred, gt, k, eval_frames, width, height);
            KeypointMetrics {
                keypoint_id: k,
                delta: (t > 0).then(|| DeltaScores::from_counts(c, t)),
                jitter: keypoint_jitter(pred, None, k, &frames, width, height),
                jitter_masked: keypoint_jitter(pred, Some(gt), k, &frames, width, height),
            }
        })
        .collect();
    Ok(MetricReport {
        delta,
        jitter: j,
        jitter_masked: jm,
        per_keypoint,
    })
}

impl MetricReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>9}",
            "keypoint", "d<1", "d<2", "d<4", "d<8", "d<16", "d_avg", "J", "J_masked"
        );
        let row = |out: &mut String, name: &str, d: Option<&DeltaScores>, j: f64, jm: f64| {
            let cells = match d {
                Some(d) => {
                    let mut s = String::new();
                    for v in d.per_threshold().iter().chain(std::iter::once(&d.avg)) {
                        let _ = write!(s, " {v:>7.2}");
                    }
                    s
                }
                None => format!("{:>48}", "-"),
            };
            let _ = writeln!(out, "{name:<10}{cells} {j:>8.3} {jm:>9.3}");
        };
        for k in &self.per_keypoint {
            row(&mut out, &k.keypoint_id.to_string(), k.delta.as_ref(), k.jitter, k.jitter_masked);
        }
        row(&mut out, "all", Some(&self.delta), self.jitter, self.jitter_masked);
        out
    }
}
