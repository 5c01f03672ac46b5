//! Domain types shared by every stage: video clips, annotation sets and
//! track sets.
//!
//! Pixel coordinates use `x` rightward and `y` downward with the origin at
//! the center of the top-left pixel. Sub-pixel positions are allowed
//! everywhere.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D position in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// One decoded frame. Intensities are normalized to `[0, 1]` and stored
/// row-major as `height × width × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("frame must have 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "frame data has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a frame from 8-bit samples, dividing by 255.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Quantizes back to 8-bit samples (round to nearest).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// An ordered sequence of frames sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    id: String,
    width: usize,
    height: usize,
    fps: f64,
    frames: Vec<Frame>,
}

impl VideoClip {
    pub fn new(id: impl Into<String>, fps: f64, frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "a clip needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        let (width, height) = (frames[0].width, frames[0].height);
        for (t, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(Error::shape(format!(
                    "frame {t} is {}x{}, expected {width}x{height}",
                    f.width, f.height
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            fps,
            frames,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointDef {
    pub id: usize,
    pub name: String,
}

/// A labeled keypoint position at a frame after the query frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub frame: usize,
    pub keypoint_id: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_visible")]
    pub visible: bool,
}

fn default_visible() -> bool {
    true
}

impl Label {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Query points at frame 0 plus sparse labels at later frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub video_id: String,
    pub keypoints: Vec<KeypointDef>,
    /// Query position per keypoint, indexed by keypoint id.
    pub query: Vec<Point2>,
    pub labels: Vec<Label>,
}

impl AnnotationSet {
    pub fn num_keypoints(&self) -> usize {
        self.keypoints.len()
    }

    /// Distinct labeled frames (never includes frame 0 for a valid set).
    pub fn annotated_frames(&self) -> BTreeSet<usize> {
        self.labels.iter().map(|l| l.frame).collect()
    }

    /// Labels for one keypoint sorted by frame.
    pub fn labels_for(&self, keypoint_id: usize) -> Vec<Label> {
        let mut out: Vec<Label> = self
            .labels
            .iter()
            .filter(|l| l.keypoint_id == keypoint_id)
            .copied()
            .collect();
        out.sort_by_key(|l| l.frame);
        out
    }

    /// Same keypoints and query points with every label removed.
    pub fn query_only(&self) -> AnnotationSet {
        AnnotationSet {
            labels: Vec::new(),
            ..self.clone()
        }
    }
}

/// A single annotation-set invariant violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Where the problem is, e.g. `labels[3]`.
    pub location: String,
    pub message: String,
}

impl Violation {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

fn inside(p: Point2, width: usize, height: usize) -> bool {
    p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64
}

/// Checks an annotation set against a clip's geometry and length. Returns
/// every violation found; an empty list means the set is valid.
pub fn validate_annotations_for(
    width: usize,
    height: usize,
    num_frames: usize,
    ann: &AnnotationSet,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = ann.keypoints.len();

    let mut ids: Vec<usize> = ann.keypoints.iter().map(|k| k.id).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| i != id) {
        out.push(Violation::new("keypoints", "keypoint ids must be 0..N-1 and unique"));
    }
    if ann.query.len() != n {
        out.push(Violation::new(
            "query",
            format!("expected {n} query points, got {}", ann.query.len()),
        ));
    }
    for (i, q) in ann.query.iter().enumerate() {
        if !inside(*q, width, height) {
            out.push(Violation::new(format!("query[{i}]"), "position out of frame"));
        }
    }

    let mut seen = HashSet::new();
    for (i, l) in ann.labels.iter().enumerate() {
        let loc = format!("labels[{i}]");
        if l.frame == 0 {
            out.push(Violation::new(&loc, "frame 0 reserved for query"));
        } else if l.frame >= num_frames {
            out.push(Violation::new(
                &loc,
                format!("frame {} beyond clip length {num_frames}", l.frame),
            ));
        }
        if l.keypoint_id >= n {
            out.push(Violation::new(&loc, format!("unknown keypoint id {}", l.keypoint_id)));
        }
        if !inside(l.position(), width, height) {
            out.push(Violation::new(&loc, "position out of frame"));
        }
        if !seen.insert((l.frame, l.keypoint_id)) {
            out.push(Violation::new(&loc, "duplicate (frame, keypoint) label"));
        }
    }
    out
}

pub fn validate_annotations(video: &VideoClip, ann: &AnnotationSet) -> Vec<Violation> {
    validate_annotations_for(video.width(), video.height(), video.num_frames(), ann)
}

/// Splits `0..num_frames` into train frames `{0, n, 2n, ...}` and test
/// frames `{n/2, n/2 + n, ...}`.
pub fn split_frames(num_frames: usize, interval: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if interval < 2 {
        return Err(Error::invalid(format!("interval must be >= 2, got {interval}")));
    }
    if num_frames < 2 {
        return Err(Error::invalid(format!("need at least 2 frames, got {num_frames}")));
    }
    let train = (0..num_frames).step_by(interval).collect();
    let test = (interval / 2..num_frames).step_by(interval).collect();
    Ok((train, test))
}

/// Per-frame state of one tracked keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
    pub confidence: f64,
}

impl TrackPoint {
    pub fn new(p: Point2, visible: bool, confidence: f64) -> Self {
        Self {
            x: p.x,
            y: p.y,
            visible,
            confidence,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Positions, visibility and confidence for `N` keypoints over `T` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub video_id: String,
    num_keypoints: usize,
    num_frames: usize,
    // keypoint-major: index = keypoint * num_frames + frame
    points: Vec<TrackPoint>,
}

impl TrackSet {
    /// Builds a track set from keypoint-major points.
    pub fn new(
        video_id: impl Into<String>,
        num_keypoints: usize,
        num_frames: usize,
        points: Vec<TrackPoint>,
    ) -> Result<Self> {
        if points.len() != num_keypoints * num_frames {
            return Err(Error::shape(format!(
                "track set needs {} points ({num_keypoints} keypoints x {num_frames} frames), got {}",
                num_keypoints * num_frames,
                points.len()
            )));
        }
        for p in &points {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::invalid("track positions must be finite"));
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(Error::invalid(format!("confidence {} outside [0, 1]", p.confidence)));
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            num_keypoints,
            num_frames,
            points,
        })
    }

    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    #[inline]
    pub fn get(&self, keypoint: usize, frame: usize) -> &TrackPoint {
        &self.points[keypoint * self.num_frames + frame]
    }

    pub fn set_position(&mut self, keypoint: usize, frame: usize, p: Point2) {
        assert!(p.is_finite(), "track positions must be finite");
        let tp = &mut self.points[keypoint * self.num_frames + frame];
        tp.x = p.x;
        tp.y = p.y;
    }

    /// All frames of one keypoint.
    pub fn track(&self, keypoint: usize) -> &[TrackPoint] {
        &self.points[keypoint * self.num_frames..(keypoint + 1) * self.num_frames]
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn same_shape(&self, other: &TrackSet) -> bool {
        self.num_keypoints == other.num_keypoints && self.num_frames == other.num_frames
    }

    /// Keeps only the given frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> Result<TrackSet> {
        if let Some(&f) = frames.iter().find(|&&f| f >= self.num_frames) {
            return Err(Error::invalid(format!("frame {f} out of range")));
        }
        let mut points = Vec::with_capacity(self.num_keypoints * frames.len());
        for k in 0..self.num_keypoints {
            points.extend(frames.iter().map(|&f| *self.get(k, f)));
        }
        TrackSet::new(self.video_id.clone(), self.num_keypoints, frames.len(), points)
    }
}
