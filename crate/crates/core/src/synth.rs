//! Procedural articulated scenes with exact ground truth, and annotation
//! schedules over them.
//!
//! A scene is a tree of textured limbs over a textured background. Every
//! time-dependent quantity is a closed-form function of the base time
//! `t · speed_factor`, so a scene rendered at speed factor `F` is exactly the
//! every-`F`-th-frame subsampling of the same scene at speed factor 1.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationSet, Frame, KeypointDef, Label, Point2, TrackPoint, TrackSet, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionSpec {
    /// Constant drift of the whole body, px per base frame.
    pub translation: [f64; 2],
    /// Amplitude (px) of the closed Lissajous path followed by the root joint.
    pub path_amplitude: f64,
    /// Period of the path in base frames.
    pub path_period: f64,
    /// Amplitude (rad) of each joint's sinusoidal angle.
    pub joint_amplitude: f64,
    /// Joint periods are drawn uniformly from this range (base frames).
    pub joint_period: [f64; 2],
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            translation: [0.0, 0.0],
            path_amplitude: 30.0,
            path_period: 240.0,
            joint_amplitude: 0.5,
            joint_period: [60.0, 120.0],
        }
    }
}

impl MotionSpec {
    pub fn still() -> Self {
        Self {
            translation: [0.0, 0.0],
            path_amplitude: 0.0,
            joint_amplitude: 0.0,
            ..Default::default()
        }
    }
}

/// Hides one keypoint while the base time lies in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub keypoint: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub fps: f64,
    /// Joints of the skeleton; the tree has one limb fewer.
    pub num_keypoints: usize,
    pub limb_length: [f64; 2],
    pub limb_half_width: f64,
    pub joint_radius: f64,
    pub motion: MotionSpec,
    /// Static patches that reuse the skeleton's textures.
    pub distractors: usize,
    pub occluders: Vec<Occluder>,
    /// Temporal subsampling multiplier: frame `t` shows base time `t · speed_factor`.
    pub speed_factor: f64,
    /// Relative amplitude of slow per-part brightness changes.
    pub appearance_drift: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 60,
            width: 256,
            height: 256,
            channels: 3,
            fps: 30.0,
            num_keypoints: 8,
            limb_length: [28.0, 40.0],
            limb_half_width: 3.5,
            joint_radius: 6.0,
            motion: MotionSpec::default(),
            distractors: 6,
            occluders: Vec::new(),
            speed_factor: 1.0,
            appearance_drift: 0.15,
        }
    }
}

pub const PRESETS: [&str; 6] = ["default", "distractor-heavy", "long-600", "fast-10x", "static", "jittered"];

/// Position noise added to ground truth by the `jittered` preset.
pub const JITTER_SIGMA: f64 = 2.0;

/// The track jitter a preset asks for, if any.
pub fn preset_jitter(name: &str) -> Option<f64> {
    (name == "jittered").then_some(JITTER_SIGMA)
}

/// A named scene configuration. Occluders are placed from `seed`.
pub fn preset(name: &str, seed: u64) -> Result<SceneSpec> {
    preset_with(name, seed, None, None)
}

/// Like `preset`, with the clip length and speed factor overridden before
/// occluders are placed.
pub fn preset_with(name: &str, seed: u64, frames: Option<usize>, speed_factor: Option<f64>) -> Result<SceneSpec> {
    let base = SceneSpec {
        seed,
        ..Default::default()
    };
    let (mut spec, occluders) = match name {
        "default" | "jittered" => (base, 2),
        "distractor-heavy" => (
            SceneSpec {
                distractors: 16,
                ..base
            },
            2,
        ),
        "long-600" => (SceneSpec { frames: 600, ..base }, 6),
        "fast-10x" => (
            SceneSpec {
                speed_factor: 10.0,
                ..base
            },
            2,
        ),
        "static" => (
            SceneSpec {
                motion: MotionSpec::still(),
                appearance_drift: 0.0,
                distractors: 0,
                ..base
            },
            0,
        ),
        other => {
            return Err(Error::invalid(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(f) = frames {
        spec.frames = f;
    }
    if let Some(v) = speed_factor {
        spec.speed_factor = v;
    }
    spec.validate()?;
    Ok(with_occluders(spec, occluders))
}

fn with_occluders(mut spec: SceneSpec, count: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6f63_636c);
    let span = spec.frames as f64 * spec.speed_factor;
    spec.occluders = (0..count)
        .map(|_| {
            let len = rng.gen_range(0.05..0.12) * span;
            let start = rng.gen_range(0.1 * span..(0.9 * span - len).max(0.1 * span + 1.0));
            Occluder {
                keypoint: rng.gen_range(0..spec.num_keypoints),
                start,
                end: start + len,
            }
        })
        .collect();
    spec
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("a scene needs at least 2 frames"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::invalid("scene geometry must be at least 16x16"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid("channels must be 1 or 3"));
        }
        if self.num_keypoints == 0 {
            return Err(Error::invalid("a scene needs at least one keypoint"));
        }
        if !(self.speed_factor >= 1.0 && self.speed_factor.is_finite()) {
            return Err(Error::invalid("speed_factor must be >= 1"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        let [lo, hi] = self.limb_length;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("limb_length must be a positive range"));
        }
        let [plo, phi] = self.motion.joint_period;
        if !(plo > 0.0 && phi >= plo && self.motion.path_period > 0.0) {
            return Err(Error::invalid("motion periods must be positive"));
        }
        if !(self.limb_half_width > 0.0 && self.joint_radius > 0.0) {
            return Err(Error::invalid("limb width and joint radius must be positive"));
        }
        if let Some(o) = self.occluders.iter().find(|o| o.keypoint >= self.num_keypoints || !(o.end >= o.start)) {
            return Err(Error::invalid(format!("bad occluder for keypoint {}", o.keypoint)));
        }
        Ok(())
    }

    /// Base time shown by frame `t`.
    pub fn base_time(&self, t: usize) -> f64 {
        t as f64 * self.speed_factor
    }
}

type Rgb = [f64; 3];

#[derive(Debug, Clone)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    color: Rgb,
}

#[derive(Debug, Clone)]
struct PartLook {
    colors: [Rgb; 2],
    /// Stripe period along a limb; unused for joint markers.
    period: f64,
    drift_period: f64,
    drift_phase: f64,
}

#[derive(Debug, Clone)]
struct Joint {
    parent: Option<usize>,
    length: f64,
    base_angle: f64,
    period: f64,
    phase: f64,
    look: PartLook,
    limb_look: PartLook,
}

#[derive(Debug, Clone)]
enum DistractorShape {
    Marker { angle: f64 },
    Limb { angle: f64, length: f64 },
}

#[derive(Debug, Clone)]
struct Distractor {
    center: Point2,
    shape: DistractorShape,
    look: PartLook,
}

/// Random but seed-fixed scene layout.
#[derive(Debug, Clone)]
struct Layout {
    bg_base: Rgb,
    waves: Vec<Wave>,
    joints: Vec<Joint>,
    path_phase: [f64; 2],
    distractors: Vec<Distractor>,
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

fn random_look(rng: &mut ChaCha8Rng, period: f64) -> PartLook {
    let a = random_color(rng);
    let mut b = random_color(rng);
    // keep the two tones distinguishable
    while (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>() < 0.6 {
        b = random_color(rng);
    }
    PartLook {
        colors: [a, b],
        period,
        drift_period: rng.gen_range(50.0..120.0),
        drift_phase: rng.gen_range(0.0..TAU),
    }
}

const MAX_DEPTH: usize = 2;

fn layout(spec: &SceneSpec) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg_base = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
    let waves = (0..8)
        .map(|_| {
            let period = rng.gen_range(16.0..80.0);
            let dir = rng.gen_range(0.0..TAU);
            let amp = rng.gen_range(0.02..0.06);
            Wave {
                kx: TAU / period * f64::cos(dir),
                ky: TAU / period * f64::sin(dir),
                phase: rng.gen_range(0.0..TAU),
                color: [amp * rng.gen_range(-1.0..1.0), amp * rng.gen_range(-1.0..1.0), amp * rng.gen_range(-1.0..1.0)],
            }
        })
        .collect();
    let mut joints: Vec<Joint> = Vec::with_capacity(spec.num_keypoints);
    let mut depth = Vec::with_capacity(spec.num_keypoints);
    let mut child_dirs: Vec<Vec<f64>> = Vec::with_capacity(spec.num_keypoints);
    for j in 0..spec.num_keypoints {
        let parent = if j == 0 {
            None
        } else {
            let candidates: Vec<usize> = (0..j).filter(|&p| depth[p] < MAX_DEPTH).collect();
            Some(*candidates.choose(&mut rng).expect("root always qualifies"))
        };
        depth.push(parent.map_or(0, |p| depth[p] + 1));
        child_dirs.push(Vec::new());
        // spread siblings apart so joints do not pile up
        let base_angle = match parent {
            None => rng.gen_range(0.0..TAU),
            Some(p) => {
                let spread = if p == 0 { PI } else { 0.9 };
                let mut best = 0.0;
                let mut best_gap = -1.0;
                for _ in 0..12 {
                    let a: f64 = rng.gen_range(-spread..spread);
                    let gap = child_dirs[p]
                        .iter()
                        .map(|&b: &f64| {
                            let d = (a - b).rem_euclid(TAU);
                            d.min(TAU - d)
                        })
                        .fold(f64::INFINITY, f64::min);
                    if gap > best_gap {
                        best_gap = gap;
                        best = a;
                    }
                }
                child_dirs[p].push(best);
                best
            }
        };
        let [plo, phi] = spec.motion.joint_period;
        joints.push(Joint {
            parent,
            length: rng.gen_range(spec.limb_length[0]..=spec.limb_length[1]),
            base_angle,
            period: rng.gen_range(plo..=phi),
            phase: rng.gen_range(0.0..TAU),
            look: random_look(&mut rng, 0.0),
            limb_look: {
                let period = rng.gen_range(6.0..11.0);
                random_look(&mut rng, period)
            },
        });
    }
    let path_phase = [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)];
    let margin = 12.0;
    let distractors = (0..spec.distractors)
        .map(|_| {
            let src = &joints[rng.gen_range(0..joints.len())];
            let center = Point2::new(
                rng.gen_range(margin..spec.width as f64 - margin),
                rng.gen_range(margin..spec.height as f64 - margin),
            );
            let angle = rng.gen_range(0.0..TAU);
            if rng.gen_bool(0.6) {
                Distractor {
                    center,
                    shape: DistractorShape::Marker { angle },
                    look: src.look.clone(),
                }
            } else {
                Distractor {
                    center,
                    shape: DistractorShape::Limb {
                        angle,
                        length: src.length,
                    },
                    look: src.limb_look.clone(),
                }
            }
        })
        .collect();
    Layout {
        bg_base,
        waves,
        joints,
        path_phase,
        distractors,
    }
}

/// Joint positions and absolute limb angles at base time `tau`.
fn pose(spec: &SceneSpec, lay: &Layout, tau: f64) -> (Vec<Point2>, Vec<f64>) {
    let m = &spec.motion;
    let root = Point2::new(
        spec.width as f64 / 2.0
            + m.translation[0] * tau
            + m.path_amplitude * (TAU * tau / m.path_period + lay.path_phase[0]).sin(),
        spec.height as f64 / 2.0
            + m.translation[1] * tau
            + m.path_amplitude * (TAU * tau / (1.37 * m.path_period) + lay.path_phase[1]).sin(),
    );
    let mut pos = Vec::with_capacity(lay.joints.len());
    let mut ang = Vec::with_capacity(lay.joints.len());
    for j in &lay.joints {
        let wiggle = m.joint_amplitude * (TAU * tau / j.period + j.phase).sin();
        match j.parent {
            None => {
                pos.push(root);
                ang.push(j.base_angle + 0.5 * wiggle);
            }
            Some(p) => {
                let a = ang[p] + j.base_angle + wiggle;
                pos.push(Point2::new(pos[p].x + j.length * a.cos(), pos[p].y + j.length * a.sin()));
                ang.push(a);
            }
        }
    }
    (pos, ang)
}

fn occluded(spec: &SceneSpec, k: usize, tau: f64) -> bool {
    spec.occluders.iter().any(|o| o.keypoint == k && tau >= o.start && tau < o.end)
}

fn in_frame(p: Point2, w: usize, h: usize) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64
}

/// Ground-truth joint positions and visibility for a spec.
pub fn ground_truth(spec: &SceneSpec) -> Result<TrackSet> {
    spec.validate()?;
    let lay = layout(spec);
    gt_from_layout(spec, &lay)
}

fn gt_from_layout(spec: &SceneSpec, lay: &Layout) -> Result<TrackSet> {
    let n = spec.num_keypoints;
    let t_len = spec.frames;
    let mut points = vec![TrackPoint::new(Point2::new(0.0, 0.0), false, 1.0); n * t_len];
    for t in 0..t_len {
        let tau = spec.base_time(t);
        let (pos, _) = pose(spec, lay, tau);
        for (k, p) in pos.iter().enumerate() {
            let visible = in_frame(*p, spec.width, spec.height) && !occluded(spec, k, tau);
            points[k * t_len + t] = TrackPoint::new(*p, visible, 1.0);
        }
    }
    TrackSet::new(scene_id(spec), n, t_len, points)
}

pub fn scene_id(spec: &SceneSpec) -> String {
    format!("synth-{}", spec.seed)
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<Rgb>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, c: Rgb, alpha: f64) {
        let px = &mut self.rgb[y * self.w + x];
        for i in 0..3 {
            px[i] += alpha * (c[i] - px[i]);
        }
    }

    /// Pixels whose centers lie within `radius` of `center`, clipped to the canvas.
    fn bbox(&self, center: Point2, radius: f64) -> Option<(usize, usize, usize, usize)> {
        let x0 = (center.x - radius - 1.0).floor().max(0.0);
        let y0 = (center.y - radius - 1.0).floor().max(0.0);
        let x1 = (center.x + radius + 1.0).ceil().min(self.w as f64 - 1.0);
        let y1 = (center.y + radius + 1.0).ceil().min(self.h as f64 - 1.0);
        if x1 < x0 || y1 < y0 || x1 < 0.0 || y1 < 0.0 {
            return None;
        }
        Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

/// Fraction of a pixel covered by a shape at signed distance `d` outside its edge.
fn coverage(d: f64) -> f64 {
    (0.5 - d).clamp(0.0, 1.0)
}

fn drifted(look: &PartLook, color: Rgb, drift: f64, tau: f64) -> Rgb {
    let g = 1.0 + drift * (TAU * tau / look.drift_period + look.drift_phase).sin();
    color.map(|c| (c * g).clamp(0.0, 1.0))
}

fn mix(a: Rgb, b: Rgb, s: f64) -> Rgb {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
}

fn draw_marker(cv: &mut Canvas, c: Point2, radius: f64, angle: f64, look: &PartLook, drift: f64, tau: f64) {
    let Some((x0, y0, x1, y1)) = cv.bbox(c, radius) else { return };
    let ca = drifted(look, look.colors[0], drift, tau);
    let cb = drifted(look, look.colors[1], drift, tau);
    let (nx, ny) = (-angle.sin(), angle.cos());
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - c.x, y as f64 - c.y);
            let a = coverage(dx.hypot(dy) - radius);
            if a <= 0.0 {
                continue;
            }
            // two-tone split along the limb direction, soft over one pixel
            let side = (dx * nx + dy * ny).clamp(-0.5, 0.5) + 0.5;
            cv.blend(x, y, mix(ca, cb, side), a);
        }
    }
}

fn draw_limb(cv: &mut Canvas, a: Point2, b: Point2, half_width: f64, look: &PartLook, drift: f64, tau: f64) {
    let mid = Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
    let len = a.distance(b);
    let Some((x0, y0, x1, y1)) = cv.bbox(mid, 0.5 * len + half_width) else { return };
    let (ux, uy) = if len > 0.0 { ((b.x - a.x) / len, (b.y - a.y) / len) } else { (1.0, 0.0) };
    let ca = drifted(look, look.colors[0], drift, tau);
    let cb = drifted(look, look.colors[1], drift, tau);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - a.x, y as f64 - a.y);
            let u = (px * ux + py * uy).clamp(0.0, len);
            let dist = (px - u * ux).hypot(py - u * uy);
            let cov = coverage(dist - half_width);
            if cov <= 0.0 {
                continue;
            }
            let s = 0.5 + 0.5 * (TAU * u / look.period).sin();
            cv.blend(x, y, mix(ca, cb, s), cov);
        }
    }
}

fn render_frame(spec: &SceneSpec, lay: &Layout, tau: f64) -> Result<Frame> {
    let (w, h) = (spec.width, spec.height);
    let mut cv = Canvas {
        w,
        h,
        rgb: vec![[0.0; 3]; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let mut c = lay.bg_base;
            for wv in &lay.waves {
                let s = (wv.kx * x as f64 + wv.ky * y as f64 + wv.phase).sin();
                for (ch, wc) in c.iter_mut().zip(wv.color) {
                    *ch += wc * s;
                }
            }
            cv.rgb[y * w + x] = c;
        }
    }
    let drift = spec.appearance_drift;
    for d in &lay.distractors {
        match d.shape {
            DistractorShape::Marker { angle } => draw_marker(&mut cv, d.center, spec.joint_radius, angle, &d.look, drift, tau),
            DistractorShape::Limb { angle, length } => {
                let half = Point2::new(0.5 * length * angle.cos(), 0.5 * length * angle.sin());
                let a = Point2::new(d.center.x - half.x, d.center.y - half.y);
                let b = Point2::new(d.center.x + half.x, d.center.y + half.y);
                draw_limb(&mut cv, a, b, spec.limb_half_width, &d.look, drift, tau);
            }
        }
    }
    let (pos, ang) = pose(spec, lay, tau);
    for (j, joint) in lay.joints.iter().enumerate() {
        if let Some(p) = joint.parent {
            draw_limb(&mut cv, pos[p], pos[j], spec.limb_half_width, &joint.limb_look, drift, tau);
        }
    }
    for (j, joint) in lay.joints.iter().enumerate() {
        draw_marker(&mut cv, pos[j], spec.joint_radius, ang[j], &joint.look, drift, tau);
    }
    for (k, p) in pos.iter().enumerate() {
        if occluded(spec, k, tau) {
            let r = 1.8 * spec.joint_radius;
            if let Some((x0, y0, x1, y1)) = cv.bbox(*p, r) {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let a = coverage((x as f64 - p.x).hypot(y as f64 - p.y) - r);
                        if a > 0.0 {
                            cv.blend(x, y, lay.bg_base, a);
                        }
                    }
                }
            }
        }
    }
    // quantize to 8 bits so that saved frames reload bit-identically
    let bytes: Vec<u8> = if spec.channels == 3 {
        cv.rgb.iter().flat_map(|c| c.map(to_byte)).collect()
    } else {
        cv.rgb.iter().map(|c| to_byte(0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])).collect()
    };
    Frame::from_u8(w, h, spec.channels, &bytes)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders the scene and its exact ground truth.
pub fn generate_scene(spec: &SceneSpec) -> Result<(VideoClip, TrackSet)> {
    spec.validate()?;
    let lay = layout(spec);
    let frames = (0..spec.frames)
        .map(|t| render_frame(spec, &lay, spec.base_time(t)))
        .collect::<Result<Vec<_>>>()?;
    let clip = VideoClip::new(scene_id(spec), spec.fps, frames)?;
    let gt = gt_from_layout(spec, &lay)?;
    Ok((clip, gt))
}

/// Where labels are placed beyond the query frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationSchedule {
    /// Every keypoint at frames n, 2n, ...
    Interval { n: usize },
    /// Every keypoint once, at the last frame.
    S1,
    /// One label per keypoint, spread evenly over the clip.
    S2,
    /// One label per keypoint at a uniformly random frame.
    S3,
}

impl AnnotationSchedule {
    pub fn label(&self) -> String {
        match self {
            Self::Interval { n } => format!("interval-{n}"),
            Self::S1 => "S1".into(),
            Self::S2 => "S2".into(),
            Self::S3 => "S3".into(),
        }
    }
}

impl std::str::FromStr for AnnotationSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Self::S1),
            "s2" => Ok(Self::S2),
            "s3" => Ok(Self::S3),
            other => {
                let n = other
                    .strip_prefix("interval-")
                    .or_else(|| other.strip_prefix("interval:"))
                    .unwrap_or(other);
                n.parse::<usize>()
                    .map(|n| Self::Interval { n })
                    .map_err(|_| Error::invalid(format!("unknown schedule '{s}' (use interval-N, S1, S2 or S3)")))
            }
        }
    }
}

/// Frames at which each keypoint is labeled.
pub fn schedule_frames(sched: AnnotationSchedule, num_frames: usize, num_keypoints: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if num_frames < 2 {
        return Err(Error::invalid("schedules need at least 2 frames"));
    }
    let last = num_frames - 1;
    let frames = match sched {
        AnnotationSchedule::Interval { n } => {
            if n == 0 || n > last {
                return Err(Error::invalid(format!("interval {n} is incompatible with {num_frames} frames")));
            }
            let f: Vec<usize> = (1..=last / n).map(|i| i * n).collect();
            vec![f; num_keypoints]
        }
        AnnotationSchedule::S1 => vec![vec![last]; num_keypoints],
        AnnotationSchedule::S2 => (0..num_keypoints)
            .map(|k| vec![1 + ((2 * k + 1) * last) / (2 * num_keypoints)])
            .map(|mut f| {
                f[0] = f[0].min(last);
                f
            })
            .collect(),
        AnnotationSchedule::S3 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5333);
            (0..num_keypoints).map(|_| vec![rng.gen_range(1..=last)]).collect()
        }
    };
    Ok(frames)
}

/// Builds annotations from ground truth: queries at frame 0 and labels per
/// the schedule. `noise_sigma > 0` perturbs label positions with Gaussian
/// noise (clamped into the frame). Labels falling outside the frame are skipped.
pub fn schedule_annotations(
    gt: &TrackSet,
    sched: AnnotationSchedule,
    noise_sigma: f64,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<AnnotationSet> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be >= 0"));
    }
    let n = gt.num_keypoints();
    let frames = schedule_frames(sched, gt.num_frames(), n, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut labels = Vec::new();
    for f in 0..gt.num_frames() {
        for (k, kf) in frames.iter().enumerate() {
            if !kf.contains(&f) {
                continue;
            }
            let g = gt.get(k, f);
            if !in_frame(g.position(), width, height) {
                continue;
            }
            let (mut x, mut y) = (g.x, g.y);
            if noise_sigma > 0.0 {
                x = (x + noise.sample(&mut rng)).clamp(0.0, width as f64 - 1e-6);
                y = (y + noise.sample(&mut rng)).clamp(0.0, height as f64 - 1e-6);
            }
            labels.push(Label {
                frame: f,
                keypoint_id: k,
                x,
                y,
                visible: g.visible,
            });
        }
    }
    Ok(AnnotationSet {
        video_id: gt.video_id.clone(),
        keypoints: (0..n)
            .map(|id| KeypointDef {
                id,
                name: format!("joint{id}"),
            })
            .collect(),
        query: (0..n).map(|k| gt.get(k, 0).position()).collect(),
        labels,
    })
}

/// Adds i.i.d. Gaussian noise to every position.
pub fn jitter_tracks(tracks: &TrackSet, sigma: f64, seed: u64) -> Result<TrackSet> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("bad sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a69_7474);
    let mut out = tracks.clone();
    for k in 0..tracks.num_keypoints() {
        for t in 0..tracks.num_frames() {
            let p = tracks.get(k, t).position();
            out.set_position(k, t, Point2::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng)));
        }
    }
    Ok(out)
}

/// One benchmark scene: how to render it and how to annotate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub id: String,
    pub spec: SceneSpec,
    pub schedule: AnnotationSchedule,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub format_version: u32,
    pub scenes: Vec<SuiteEntry>,
}

/// `count` scenes of a preset with seeds `first_seed..`.
pub fn suite(preset_name: &str, count: usize, first_seed: u64, schedule: AnnotationSchedule, noise_sigma: f64) -> Result<SuiteManifest> {
    let scenes = (0..count as u64)
        .map(|i| {
            let spec = preset(preset_name, first_seed + i)?;
            Ok(SuiteEntry {
                id: format!("{preset_name}-{:03}", first_seed + i),
                spec,
                schedule,
                noise_sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteManifest {
        format_version: 1,
        scenes,
    })
}
