//! Constant-velocity Kalman filtering with Rauch–Tung–Striebel smoothing,
//! applied independently to each keypoint axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Point2, TrackSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    /// Number of filter + smoother passes; each pass re-smooths the previous output.
    pub iterations: usize,
    /// Spectral density of the white-noise acceleration (px²/frame³).
    pub process_noise: f64,
    /// Measurement variance (px²).
    pub measurement_noise: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            process_noise: 0.3,
            measurement_noise: 1.0,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("kalman iterations must be >= 1"));
        }
        if !(self.process_noise > 0.0 && self.process_noise.is_finite()) {
            return Err(Error::invalid("process noise must be positive"));
        }
        if !(self.measurement_noise > 0.0 && self.measurement_noise.is_finite()) {
            return Err(Error::invalid("measurement noise must be positive"));
        }
        Ok(())
    }
}

type Vec2 = [f64; 2];
type Mat2 = [[f64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

fn inverse(a: &Mat2) -> Mat2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

fn apply(a: &Mat2, v: &Vec2) -> Vec2 {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

const F: Mat2 = [[1.0, 1.0], [0.0, 1.0]];

/// One forward filter + backward smoother pass over a scalar series.
fn rts_pass(z: &[f64], q: f64, r: f64) -> Vec<f64> {
    let n = z.len();
    let qm: Mat2 = [[q / 3.0, q / 2.0], [q / 2.0, q]];
    // Two-point initialization: exact for linear series.
    let mut x: Vec2 = [z[0], z[1] - z[0]];
    let mut p: Mat2 = [[r, r], [r, 2.0 * r]];
    let mut filt_x = Vec::with_capacity(n);
    let mut filt_p = Vec::with_capacity(n);
    let mut pred_x = Vec::with_capacity(n);
    let mut pred_p = Vec::with_capacity(n);
    for (t, &zt) in z.iter().enumerate() {
        if t > 0 {
            x = apply(&F, &x);
            p = add(&mat_mul(&mat_mul(&F, &p), &transpose(&F)), &qm);
        }
        pred_x.push(x);
        pred_p.push(p);
        let s = p[0][0] + r;
        let k = [p[0][0] / s, p[1][0] / s];
        let innov = zt - x[0];
        x = [x[0] + k[0] * innov, x[1] + k[1] * innov];
        p = [
            [(1.0 - k[0]) * p[0][0], (1.0 - k[0]) * p[0][1]],
            [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
        ];
        filt_x.push(x);
        filt_p.push(p);
    }
    let mut xs = filt_x.clone();
    let mut ps = filt_p.clone();
    for t in (0..n - 1).rev() {
        let c = mat_mul(&mat_mul(&filt_p[t], &transpose(&F)), &inverse(&pred_p[t + 1]));
        let dx = [xs[t + 1][0] - pred_x[t + 1][0], xs[t + 1][1] - pred_x[t + 1][1]];
        let corr = apply(&c, &dx);
        xs[t] = [filt_x[t][0] + corr[0], filt_x[t][1] + corr[1]];
        let dp = sub(&ps[t + 1], &pred_p[t + 1]);
        ps[t] = add(&filt_p[t], &mat_mul(&mat_mul(&c, &dp), &transpose(&c)));
    }
    xs.iter().map(|s| s[0]).collect()
}

/// Smooths a scalar series with `cfg.iterations` filter + smoother passes.
pub fn smooth_series(z: &[f64], cfg: &KalmanConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if z.len() < 2 {
        return Err(Error::invalid("smoothing needs at least two frames"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let mut cur = z.to_vec();
    for _ in 0..cfg.iterations {
        cur = rts_pass(&cur, cfg.process_noise, cfg.measurement_noise);
    }
    Ok(cur)
}

/// Smooths every keypoint track; visibility and confidence pass through.
pub fn kalman_smooth(tracks: &TrackSet, cfg: &KalmanConfig) -> Result<TrackSet> {
    cfg.validate()?;
    if tracks.num_frames() < 2 {
        return Err(Error::invalid("smoothing needs at least two frames"));
    }
    let mut out = tracks.clone();
    for k in 0..tracks.num_keypoints() {
        let tr = tracks.track(k);
        let xs = smooth_series(&tr.iter().map(|p| p.x).collect::<Vec<_>>(), cfg)?;
        let ys = smooth_series(&tr.iter().map(|p| p.y).collect::<Vec<_>>(), cfg)?;
        for (t, (x, y)) in xs.into_iter().zip(ys).enumerate() {
            out.set_position(k, t, Point2::new(x, y));
        }
    }
    Ok(out)
}
