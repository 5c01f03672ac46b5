//! Deterministic multi-scale feature pyramids and differentiable bilinear
//! sampling.
//!
//! Level `s` (1-based) has stride `k·2^(s-1)` pixels: cell `(i, j)` describes
//! the image around pixel `(j·stride, i·stride)`, so a pixel position maps to
//! level coordinates by plain division by the stride.
//!
//! The hand-crafted backend computes, on each level's box-downsampled image,
//! this fixed channel layout:
//!
//! | channel | content                                         |
//! |---------|-------------------------------------------------|
//! | 0..3    | mean intensity per color channel (gray is replicated) |
//! | 3       | horizontal central difference of luminance      |
//! | 4       | vertical central difference of luminance        |
//! | 5       | gradient magnitude                              |
//! | 6       | luminance standard deviation over a 3×3 window   |
//! | 7       | diagonal difference along +x,+y (45°)           |
//! | 8       | diagonal difference along -x,+y (135°)          |
//!
//! Every channel is then normalized to zero mean and unit variance across
//! the level. A config with fewer than 9 channels keeps the first `d`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Frame, Point2, VideoClip};

pub const HANDCRAFTED_CHANNELS: usize = 9;
const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Base downsample factor.
    pub k: usize,
    /// Number of pyramid levels.
    pub scales: usize,
    /// Patch half-width in level cells.
    pub delta: usize,
    /// Channels per cell.
    pub channels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k: 4,
            scales: 4,
            delta: 3,
            channels: HANDCRAFTED_CHANNELS,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.scales == 0 || self.channels == 0 {
            return Err(Error::invalid("feature config needs k, scales, channels >= 1"));
        }
        if self.channels > HANDCRAFTED_CHANNELS {
            return Err(Error::invalid(format!(
                "at most {HANDCRAFTED_CHANNELS} channels are available, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Stride in pixels of level `s` (1-based).
    pub fn stride(&self, s: usize) -> usize {
        self.k << (s - 1)
    }

    /// Side length of a patch in cells, `2Δ+1`.
    pub fn patch_side(&self) -> usize {
        2 * self.delta + 1
    }

    /// Number of values in one patch, `(2Δ+1)²·d`.
    pub fn patch_len(&self) -> usize {
        self.patch_side() * self.patch_side() * self.channels
    }

    /// Stable 64-bit digest of the config, stored alongside embeddings.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"handcrafted-v1");
        for v in [self.k, self.scales, self.delta, self.channels] {
            h.update((v as u64).to_le_bytes());
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// One pyramid level: a `height × width` grid of `channels`-dim vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    width: usize,
    height: usize,
    channels: usize,
    stride: usize,
    data: Vec<f64>,
}

impl FeatureLevel {
    pub fn from_data(
        width: usize,
        height: usize,
        channels: usize,
        stride: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(Error::shape("feature level data does not match its dimensions"));
        }
        Ok(Self {
            width,
            height,
            channels,
            stride,
            data,
        })
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

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Bilinear sample at level coordinates `(x, y)` written into `value`,
    /// with the positional derivatives written into `dx` and `dy`.
    /// Coordinates are clamped to the grid; the derivative across a clamped
    /// axis is zero.
    #[inline]
    pub fn sample_into(&self, x: f64, y: f64, value: &mut [f64], dx: &mut [f64], dy: &mut [f64]) {
        let (x0, x1, fx, clamped_x) = axis(x, self.width);
        let (y0, y1, fy, clamped_y) = axis(y, self.height);
        let a = self.cell(x0, y0);
        let b = self.cell(x1, y0);
        let c = self.cell(x0, y1);
        let d = self.cell(x1, y1);
        let (wa, wb, wc, wd) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy);
        for ch in 0..self.channels {
            value[ch] = wa * a[ch] + wb * b[ch] + wc * c[ch] + wd * d[ch];
            dx[ch] = if clamped_x {
                0.0
            } else {
                (1.0 - fy) * (b[ch] - a[ch]) + fy * (d[ch] - c[ch])
            };
            dy[ch] = if clamped_y {
                0.0
            } else {
                (1.0 - fx) * (c[ch] - a[ch]) + fx * (d[ch] - b[ch])
            };
        }
    }
}

/// Returns (lower index, upper index, fraction, clamped) along one axis.
#[inline]
fn axis(v: f64, len: usize) -> (usize, usize, f64, bool) {
    let max = (len - 1) as f64;
    let clamped = !(v >= 0.0 && v <= max);
    let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, max) };
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, c - i0 as f64, clamped)
}

/// Result of [`sample_bilinear`].
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSample {
    pub value: Vec<f64>,
    pub d_dx: Vec<f64>,
    pub d_dy: Vec<f64>,
}

pub fn sample_bilinear(level: &FeatureLevel, pos: Point2) -> BilinearSample {
    let d = level.channels;
    let mut s = BilinearSample {
        value: vec![0.0; d],
        d_dx: vec![0.0; d],
        d_dy: vec![0.0; d],
    };
    level.sample_into(pos.x, pos.y, &mut s.value, &mut s.d_dx, &mut s.d_dy);
    s
}

/// All levels of one frame, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureLevel>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureLevel>) -> Self {
        Self { levels }
    }

    /// Level `s` (1-based).
    pub fn level(&self, s: usize) -> &FeatureLevel {
        &self.levels[s - 1]
    }

    pub fn levels(&self) -> &[FeatureLevel] {
        &self.levels
    }
}

/// Produces per-frame pyramids. The hand-crafted backend is the default; a
/// learned backbone can implement this trait instead.
pub trait FeatureBackend {
    fn extract(&self, frame: &Frame, cfg: &FeatureConfig) -> Result<FeaturePyramid>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HandCrafted;

impl FeatureBackend for HandCrafted {
    fn extract(&self, frame: &Frame, cfg: &FeatureConfig) -> Result<FeaturePyramid> {
        extract_pyramid(frame, cfg)
    }
}

/// Feature pyramids for every frame of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    cfg: FeatureConfig,
    frames: Vec<FeaturePyramid>,
}

impl VideoFeatures {
    pub fn extract(video: &VideoClip, cfg: &FeatureConfig) -> Result<Self> {
        Self::extract_with(&HandCrafted, video, cfg)
    }

    pub fn extract_with(
        backend: &dyn FeatureBackend,
        video: &VideoClip,
        cfg: &FeatureConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let frames = video
            .frames()
            .iter()
            .map(|f| backend.extract(f, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg: *cfg, frames })
    }

    pub fn from_pyramids(cfg: FeatureConfig, frames: Vec<FeaturePyramid>) -> Self {
        Self { cfg, frames }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &FeaturePyramid {
        &self.frames[t]
    }
}

/// Extracts one frame's hand-crafted pyramid.
pub fn extract_pyramid(frame: &Frame, cfg: &FeatureConfig) -> Result<FeaturePyramid> {
    cfg.validate()?;
    let levels = (1..=cfg.scales)
        .map(|s| level_features(frame, cfg.stride(s), cfg.channels))
        .collect();
    Ok(FeaturePyramid { levels })
}

/// Box-downsamples the frame with a centered window of `2⌊stride/2⌋+1`
/// pixels per cell, sampled every `stride` pixels. Returns 3 color planes.
fn downsample(frame: &Frame, stride: usize) -> (usize, usize, Vec<[f64; 3]>) {
    let (w, h, c) = (frame.width(), frame.height(), frame.channels());
    let lw = w.div_ceil(stride);
    let lh = h.div_ceil(stride);
    let half = (stride / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    // horizontal pass: h rows × lw cells
    let mut rows = vec![[0.0f64; 3]; h * lw];
    for y in 0..h {
        for j in 0..lw {
            let cx = (j * stride) as isize;
            let mut acc = [0.0f64; 3];
            for x in cx - half..=cx + half {
                let xi = clampi(x, w);
                for (ch, a) in acc.iter_mut().enumerate().take(c) {
                    *a += frame.get(xi, y, ch) as f64;
                }
            }
            rows[y * lw + j] = acc;
        }
    }
    let n = (2 * half + 1) as f64;
    let mut out = vec![[0.0f64; 3]; lh * lw];
    for i in 0..lh {
        let cy = (i * stride) as isize;
        for j in 0..lw {
            let mut acc = [0.0f64; 3];
            for y in cy - half..=cy + half {
                let r = rows[clampi(y, h) * lw + j];
                for ch in 0..c {
                    acc[ch] += r[ch];
                }
            }
            let mut px = [0.0; 3];
            for ch in 0..3 {
                px[ch] = if c == 1 { acc[0] / (n * n) } else { acc[ch] / (n * n) };
            }
            out[i * lw + j] = px;
        }
    }
    (lw, lh, out)
}

fn level_features(frame: &Frame, stride: usize, channels: usize) -> FeatureLevel {
    let (w, h, img) = downsample(frame, stride);
    let lum: Vec<f64> = img.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
    let at = |x: isize, y: isize| -> f64 {
        let xi = x.clamp(0, w as isize - 1) as usize;
        let yi = y.clamp(0, h as isize - 1) as usize;
        lum[yi * w + xi]
    };
    let diag = 2.0 * std::f64::consts::SQRT_2;

    let mut raw = vec![0.0f64; w * h * HANDCRAFTED_CHANNELS];
    for i in 0..h {
        for j in 0..w {
            let (x, y) = (j as isize, i as isize);
            let p = img[i * w + j];
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            let mut window = [0.0f64; 9];
            for (n, (dy, dx)) in (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dy, dx))).enumerate() {
                window[n] = at(x + dx, y + dy);
            }
            let mean = window.iter().sum::<f64>() / 9.0;
            let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
            let cell = &mut raw[(i * w + j) * HANDCRAFTED_CHANNELS..][..HANDCRAFTED_CHANNELS];
            cell[0] = p[0];
            cell[1] = p[1];
            cell[2] = p[2];
            cell[3] = gx;
            cell[4] = gy;
            cell[5] = gx.hypot(gy);
            cell[6] = var.sqrt();
            cell[7] = (at(x + 1, y + 1) - at(x - 1, y - 1)) / diag;
            cell[8] = (at(x - 1, y + 1) - at(x + 1, y - 1)) / diag;
        }
    }

    let cells = w * h;
    let mut data = vec![0.0f64; cells * channels];
    for ch in 0..channels {
        let vals = || (0..cells).map(|n| raw[n * HANDCRAFTED_CHANNELS + ch]);
        let (lo, hi) = vals().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo == hi {
            // constant channel: normalizes to exactly zero
            continue;
        }
        let mean = vals().sum::<f64>() / cells as f64;
        let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cells as f64;
        let denom = var.sqrt() + NORM_EPS;
        for (n, v) in vals().enumerate() {
            data[n * channels + ch] = (v - mean) / denom;
        }
    }
    FeatureLevel {
        width: w,
        height: h,
        channels,
        stride,
        data,
    }
}

/// A `(2Δ+1)×(2Δ+1)` grid of feature vectors sampled around a center.
/// Layout: cell-major (row `dy`, column `dx`), channel-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub scale: usize,
    pub center: Point2,
    pub values: Vec<f64>,
}

/// Samples the `(2Δ+1)²` neighborhood of `center` (pixels) at scale `s`.
pub fn extract_patch(pyr: &FeaturePyramid, s: usize, center: Point2, cfg: &FeatureConfig) -> Result<PatchFeatures> {
    if s == 0 || s > cfg.scales || s > pyr.levels.len() {
        return Err(Error::invalid(format!("scale {s} outside 1..={}", cfg.scales)));
    }
    let level = pyr.level(s);
    let stride = cfg.stride(s) as f64;
    let (cx, cy) = (center.x / stride, center.y / stride);
    let side = cfg.patch_side();
    let d = cfg.channels;
    let mut values = vec![0.0; side * side * d];
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let delta = cfg.delta as f64;
    for row in 0..side {
        for col in 0..side {
            let x = cx + col as f64 - delta;
            let y = cy + row as f64 - delta;
            let out = &mut values[(row * side + col) * d..][..d];
            level.sample_into(x, y, out, &mut gx, &mut gy);
        }
    }
    Ok(PatchFeatures {
        scale: s,
        center,
        values,
    })
}
