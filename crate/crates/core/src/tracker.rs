//! Frozen correlation tracker.
//!
//! Each keypoint carries an appearance embedding: a `(2Δ+1)²×d` feature
//! patch. Refinement correlates that embedding with candidate patches in a
//! `(2R+1)²` window at every pyramid scale, turns each scale's scores into an
//! expected offset with a temperature softmax, and moves the estimate by a
//! confidence-weighted average of those offsets. Everything downstream of
//! the embedding is differentiable, and [`Refiner::backward`] implements the
//! reverse pass by hand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_patch, FeatureConfig, FeaturePyramid, PatchFeatures, VideoFeatures};
use crate::model::{AnnotationSet, Point2, TrackPoint, TrackSet};

/// One embedding per keypoint, each `(2Δ+1)²·d` values in patch layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceEmbedding {
    patch_len: usize,
    values: Vec<f64>,
}

impl AppearanceEmbedding {
    pub fn new(patch_len: usize, values: Vec<f64>) -> Result<Self> {
        if patch_len == 0 || !values.len().is_multiple_of(patch_len) {
            return Err(Error::shape(format!(
                "embedding of {} values is not a multiple of the patch length {patch_len}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding values must be finite"));
        }
        Ok(Self { patch_len, values })
    }

    pub fn from_patches(patches: Vec<Vec<f64>>) -> Result<Self> {
        let patch_len = patches.first().map_or(0, Vec::len);
        if patches.iter().any(|p| p.len() != patch_len) {
            return Err(Error::shape("embedding patches have different lengths"));
        }
        Self::new(patch_len, patches.concat())
    }

    pub fn num_keypoints(&self) -> usize {
        self.values.len() / self.patch_len
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn keypoint(&self, i: usize) -> &[f64] {
        &self.values[i * self.patch_len..(i + 1) * self.patch_len]
    }

    pub fn keypoint_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.patch_len..(i + 1) * self.patch_len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Refinement iterations per frame.
    pub iterations: usize,
    /// Search-window radius in level cells.
    pub radius: usize,
    /// Softmax temperature applied to correlation scores.
    pub temperature: f64,
    /// A point is visible when its peak softmax mass reaches this value.
    pub visibility_threshold: f64,
    /// Start each frame from the previous frame's estimate instead of the
    /// query point.
    pub chaining: bool,
    /// Scale weights are `peak_mass · stride^(-p)`; `0` weights by peak mass
    /// alone.
    pub scale_weight_power: f64,
    /// When set, each scale's expected offset is taken over the cells within
    /// this L∞ radius of its argmax instead of the whole window.
    pub local_radius: Option<usize>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            radius: 4,
            temperature: 0.1,
            visibility_threshold: 0.4,
            chaining: true,
            scale_weight_power: 6.0,
            local_radius: Some(1),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.radius == 0 {
            return Err(Error::invalid("tracker needs iterations >= 1 and radius >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.visibility_threshold > 0.0 && self.visibility_threshold < 1.0) {
            return Err(Error::invalid("visibility threshold must lie in (0, 1)"));
        }
        if !(self.scale_weight_power >= 0.0 && self.scale_weight_power.is_finite()) {
            return Err(Error::invalid("scale weight power must be >= 0"));
        }
        Ok(())
    }
}

/// Normalized inner product `⟨emb, patch⟩ / len`.
pub fn correlate(emb: &[f64], patch: &PatchFeatures) -> Result<f64> {
    if emb.len() != patch.values.len() {
        return Err(Error::shape(format!(
            "embedding has {} values, patch has {}",
            emb.len(),
            patch.values.len()
        )));
    }
    let dot: f64 = emb.iter().zip(&patch.values).map(|(a, b)| a * b).sum();
    Ok(dot / emb.len() as f64)
}

/// Similarity scores over a `(2R+1)²` window of candidate offsets, row-major
/// with offset `(-R, -R)` first.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub radius: usize,
    pub scores: Vec<f64>,
}

impl CorrelationMap {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn score(&self, ox: isize, oy: isize) -> f64 {
        let r = self.radius as isize;
        self.scores[((oy + r) * (2 * r + 1) + ox + r) as usize]
    }

    /// Offset of the highest score; ties go to the first in row-major order.
    pub fn argmax(&self) -> (isize, isize) {
        let side = self.side();
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        let r = self.radius as isize;
        ((best % side) as isize - r, (best / side) as isize - r)
    }
}

/// Reference correlation map at scale `s` around `center` (pixels), built
/// patch by patch.
pub fn correlation_map(
    emb: &[f64],
    pyr: &FeaturePyramid,
    s: usize,
    center: Point2,
    fcfg: &FeatureConfig,
    tcfg: &TrackerConfig,
) -> Result<CorrelationMap> {
    if !center.is_finite() {
        return Err(Error::invalid("correlation center must be finite"));
    }
    let r = tcfg.radius as isize;
    let stride = fcfg.stride(s.max(1)) as f64;
    let mut scores = Vec::with_capacity((2 * tcfg.radius + 1).pow(2));
    for oy in -r..=r {
        for ox in -r..=r {
            let c = Point2::new(center.x + ox as f64 * stride, center.y + oy as f64 * stride);
            scores.push(correlate(emb, &extract_patch(pyr, s, c, fcfg)?)?);
        }
    }
    Ok(CorrelationMap {
        radius: tcfg.radius,
        scores,
    })
}

/// Output of one refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    /// Position after each iteration; the last entry is the final estimate.
    pub iterates: Vec<Point2>,
    /// Largest per-scale softmax peak mass in the last iteration.
    pub peak: f64,
}

impl Refinement {
    pub fn position(&self) -> Point2 {
        *self.iterates.last().expect("at least one iteration")
    }
}

/// Runs [`Refiner::refine`] for one embedding.
pub fn refine_position(
    emb: &[f64],
    pyr: &FeaturePyramid,
    pos_in: Point2,
    fcfg: &FeatureConfig,
    tcfg: &TrackerConfig,
) -> Result<(Point2, f64)> {
    let r = Refiner::new(emb, fcfg, tcfg)?.refine(pyr, pos_in);
    Ok((r.position(), r.peak))
}

/// Intermediate values of one refinement kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    steps: Vec<IterationTape>,
}

#[derive(Debug, Clone)]
struct IterationTape {
    delta_px: [f64; 2],
    scales: Vec<ScaleTape>,
}

#[derive(Debug, Clone)]
struct ScaleTape {
    probs: Vec<f64>,
    peak_index: usize,
    /// Inclusive cell bounds `[x0, x1, y0, y1]` of the soft-argmax support.
    support: [usize; 4],
    support_mass: f64,
    offset: [f64; 2],
    weight: f64,
    score_dx: Vec<f64>,
    score_dy: Vec<f64>,
    grid: Vec<f64>,
}

/// Scratch buffers reused across scales and iterations.
struct Scratch {
    grid: Vec<f64>,
    grid_dx: Vec<f64>,
    grid_dy: Vec<f64>,
    val: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

/// Refinement engine for one keypoint embedding.
#[derive(Debug, Clone)]
pub struct Refiner {
    fcfg: FeatureConfig,
    tcfg: TrackerConfig,
    /// Embedding in channel-major kernel layout `[ch][ky][kx]`.
    kernel: Vec<f64>,
    norm: f64,
}

impl Refiner {
    pub fn new(emb: &[f64], fcfg: &FeatureConfig, tcfg: &TrackerConfig) -> Result<Self> {
        tcfg.validate()?;
        if emb.len() != fcfg.patch_len() {
            return Err(Error::shape(format!(
                "embedding has {} values, feature config expects {}",
                emb.len(),
                fcfg.patch_len()
            )));
        }
        let k = fcfg.patch_side();
        let d = fcfg.channels;
        let mut kernel = vec![0.0; emb.len()];
        for cell in 0..k * k {
            for ch in 0..d {
                kernel[ch * k * k + cell] = emb[cell * d + ch];
            }
        }
        Ok(Self {
            fcfg: *fcfg,
            tcfg: *tcfg,
            kernel,
            norm: emb.len() as f64,
        })
    }

    fn window(&self) -> usize {
        2 * self.tcfg.radius + 1
    }

    /// Soft-argmax support around a window cell, as inclusive `[x0, x1, y0, y1]`.
    fn support(&self, peak_index: usize) -> [usize; 4] {
        let o = self.window();
        match self.tcfg.local_radius {
            None => [0, o - 1, 0, o - 1],
            Some(r) => {
                let (px, py) = (peak_index % o, peak_index / o);
                [px.saturating_sub(r), (px + r).min(o - 1), py.saturating_sub(r), (py + r).min(o - 1)]
            }
        }
    }

    fn grid_side(&self) -> usize {
        2 * (self.tcfg.radius + self.fcfg.delta) + 1
    }

    fn scratch(&self) -> Scratch {
        let d = self.fcfg.channels;
        let g = self.grid_side();
        Scratch {
            grid: vec![0.0; d * g * g],
            grid_dx: vec![0.0; d * g * g],
            grid_dy: vec![0.0; d * g * g],
            val: vec![0.0; d],
            gx: vec![0.0; d],
            gy: vec![0.0; d],
        }
    }

    /// Samples the `(2(R+Δ)+1)²` grid around level position `(cx, cy)` into
    /// channel-major planes.
    fn sample_grid(&self, pyr: &FeaturePyramid, s: usize, cx: f64, cy: f64, sc: &mut Scratch) {
        let level = pyr.level(s);
        let g = self.grid_side();
        let half = (self.tcfg.radius + self.fcfg.delta) as f64;
        let d = self.fcfg.channels;
        for gy in 0..g {
            for gx in 0..g {
                let x = cx + gx as f64 - half;
                let y = cy + gy as f64 - half;
                level.sample_into(x, y, &mut sc.val, &mut sc.gx, &mut sc.gy);
                let cell = gy * g + gx;
                for ch in 0..d {
                    sc.grid[ch * g * g + cell] = sc.val[ch];
                    sc.grid_dx[ch * g * g + cell] = sc.gx[ch];
                    sc.grid_dy[ch * g * g + cell] = sc.gy[ch];
                }
            }
        }
    }

    /// `out[o] = Σ kernel[ch][k] · plane[ch][o + k] / norm`.
    fn correlate_planes(&self, plane: &[f64], out: &mut [f64]) {
        let o = self.window();
        let k = self.fcfg.patch_side();
        let g = self.grid_side();
        out.iter_mut().for_each(|v| *v = 0.0);
        for ch in 0..self.fcfg.channels {
            let kern = &self.kernel[ch * k * k..(ch + 1) * k * k];
            let pl = &plane[ch * g * g..(ch + 1) * g * g];
            for ky in 0..k {
                for kx in 0..k {
                    let kv = kern[ky * k + kx];
                    for oy in 0..o {
                        let src = &pl[(oy + ky) * g + kx..][..o];
                        let dst = &mut out[oy * o..][..o];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += kv * s;
                        }
                    }
                }
            }
        }
        let inv = 1.0 / self.norm;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    /// Refines `init` against one frame's pyramid.
    pub fn refine(&self, pyr: &FeaturePyramid, init: Point2) -> Refinement {
        self.run(pyr, init, None)
    }

    /// Like [`Refiner::refine`] but also records a tape for the reverse pass.
    pub fn refine_taped(&self, pyr: &FeaturePyramid, init: Point2) -> (Refinement, Tape) {
        let mut tape = Tape { steps: Vec::new() };
        let r = self.run(pyr, init, Some(&mut tape));
        (r, tape)
    }

    fn run(&self, pyr: &FeaturePyramid, init: Point2, mut tape: Option<&mut Tape>) -> Refinement {
        let o = self.window();
        let radius = self.tcfg.radius as f64;
        let inv_tau = 1.0 / self.tcfg.temperature;
        let mut sc = self.scratch();
        let mut scores = vec![0.0; o * o];
        let mut pos = init;
        let mut iterates = Vec::with_capacity(self.tcfg.iterations);
        let mut last_peak = 0.0;

        for _ in 0..self.tcfg.iterations {
            let mut scale_tapes = Vec::new();
            let mut weight_sum = 0.0;
            let mut acc = [0.0f64; 2];
            let mut peak_max: f64 = 0.0;
            for s in 1..=self.fcfg.scales {
                let stride = self.fcfg.stride(s) as f64;
                self.sample_grid(pyr, s, pos.x / stride, pos.y / stride, &mut sc);
                self.correlate_planes(&sc.grid, &mut scores);

                // softmax over the window
                let zmax = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut probs: Vec<f64> = scores.iter().map(|s| ((s - zmax) * inv_tau).exp()).collect();
                let z: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= z);
                // ties resolve to the window center so flat maps stay put
                let mut peak_index = o * o / 2;
                for (i, &p) in probs.iter().enumerate() {
                    if p > probs[peak_index] {
                        peak_index = i;
                    }
                }
                let peak = probs[peak_index];
                let support = self.support(peak_index);
                let mut offset = [0.0f64; 2];
                let mut support_mass = 0.0;
                for y in support[2]..=support[3] {
                    for x in support[0]..=support[1] {
                        let p = probs[y * o + x];
                        support_mass += p;
                        offset[0] += p * (x as f64 - radius);
                        offset[1] += p * (y as f64 - radius);
                    }
                }
                offset[0] /= support_mass;
                offset[1] /= support_mass;
                let weight = peak * stride.powf(-self.tcfg.scale_weight_power);
                weight_sum += weight;
                acc[0] += weight * offset[0] * stride;
                acc[1] += weight * offset[1] * stride;
                peak_max = peak_max.max(peak);

                if tape.is_some() {
                    let mut score_dx = vec![0.0; o * o];
                    let mut score_dy = vec![0.0; o * o];
                    self.correlate_planes(&sc.grid_dx, &mut score_dx);
                    self.correlate_planes(&sc.grid_dy, &mut score_dy);
                    scale_tapes.push(ScaleTape {
                        probs,
                        peak_index,
                        support,
                        support_mass,
                        offset,
                        weight,
                        score_dx,
                        score_dy,
                        grid: sc.grid.clone(),
                    });
                }
            }
            let delta = [acc[0] / weight_sum, acc[1] / weight_sum];
            pos = Point2::new(pos.x + delta[0], pos.y + delta[1]);
            iterates.push(pos);
            last_peak = peak_max;
            if let Some(t) = tape.as_deref_mut() {
                t.steps.push(IterationTape {
                    delta_px: delta,
                    scales: scale_tapes,
                });
            }
        }
        Refinement {
            iterates,
            peak: last_peak,
        }
    }

    /// Reverse pass. `iterate_grads[m]` is `∂L/∂(position after iteration
    /// m)`. Accumulates `∂L/∂embedding` into `emb_grad` (patch layout) and
    /// returns `∂L/∂init`.
    pub fn backward(&self, tape: &Tape, iterate_grads: &[[f64; 2]], emb_grad: &mut [f64]) -> [f64; 2] {
        assert_eq!(iterate_grads.len(), tape.steps.len(), "one gradient per iteration");
        assert_eq!(emb_grad.len(), self.kernel.len(), "gradient buffer has embedding shape");
        let o = self.window();
        let k = self.fcfg.patch_side();
        let g = self.grid_side();
        let d = self.fcfg.channels;
        let radius = self.tcfg.radius as f64;
        let inv_tau = 1.0 / self.tcfg.temperature;
        let mut kernel_grad = vec![0.0; self.kernel.len()];
        let mut b = vec![0.0; o * o];

        let mut grad = [0.0f64; 2];
        for (m, step) in tape.steps.iter().enumerate().rev() {
            grad[0] += iterate_grads[m][0];
            grad[1] += iterate_grads[m][1];
            let weight_sum: f64 = step.scales.iter().map(|s| s.weight).sum();
            let mut grad_in = grad;
            for (si, st) in step.scales.iter().enumerate() {
                let stride = self.fcfg.stride(si + 1) as f64;
                // delta = Σ w_s · stride_s · offset_s / Σ w_s
                let g_off = [grad[0] * st.weight * stride / weight_sum, grad[1] * st.weight * stride / weight_sum];
                let g_weight = (grad[0] * (stride * st.offset[0] - step.delta_px[0])
                    + grad[1] * (stride * st.offset[1] - step.delta_px[1]))
                    / weight_sum;
                let g_peak = g_weight * stride.powf(-self.tcfg.scale_weight_power);

                // peak mass through the full-window softmax
                let p_peak = st.probs[st.peak_index];
                for (i, bi) in b.iter_mut().enumerate() {
                    let a = if i == st.peak_index { g_peak } else { 0.0 };
                    *bi = st.probs[i] * (a - p_peak * g_peak) * inv_tau;
                }
                // offset through the softmax renormalized over the support
                for y in st.support[2]..=st.support[3] {
                    for x in st.support[0]..=st.support[1] {
                        let i = y * o + x;
                        let q = st.probs[i] / st.support_mass;
                        let a = g_off[0] * (x as f64 - radius - st.offset[0]) + g_off[1] * (y as f64 - radius - st.offset[1]);
                        b[i] += q * a * inv_tau;
                    }
                }
                let mut g_cx = 0.0;
                let mut g_cy = 0.0;
                for (i, bi) in b.iter().enumerate() {
                    g_cx += bi * st.score_dx[i];
                    g_cy += bi * st.score_dy[i];
                }
                grad_in[0] += g_cx / stride;
                grad_in[1] += g_cy / stride;

                // ∂score[o]/∂kernel[ch][k] = grid[ch][o + k] / norm
                for ch in 0..d {
                    let pl = &st.grid[ch * g * g..(ch + 1) * g * g];
                    let kg = &mut kernel_grad[ch * k * k..(ch + 1) * k * k];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for oy in 0..o {
                                let src = &pl[(oy + ky) * g + kx..][..o];
                                let bb = &b[oy * o..][..o];
                                for (x, y) in src.iter().zip(bb) {
                                    acc += x * y;
                                }
                            }
                            kg[ky * k + kx] += acc;
                        }
                    }
                }
            }
            grad = grad_in;
        }

        let inv = 1.0 / self.norm;
        for cell in 0..k * k {
            for ch in 0..d {
                emb_grad[cell * d + ch] += kernel_grad[ch * k * k + cell] * inv;
            }
        }
        grad
    }
}

/// Tracks every keypoint through the clip. Frame 0 reproduces the query
/// points exactly.
pub fn track_video(
    features: &VideoFeatures,
    ann: &AnnotationSet,
    emb: &AppearanceEmbedding,
    tcfg: &TrackerConfig,
) -> Result<TrackSet> {
    let n = ann.num_keypoints();
    if emb.num_keypoints() != n || ann.query.len() != n {
        return Err(Error::shape(format!(
            "embedding has {} keypoints, annotations have {n}",
            emb.num_keypoints()
        )));
    }
    let fcfg = features.config();
    let t_len = features.num_frames();
    let mut points = Vec::with_capacity(n * t_len);
    for k in 0..n {
        let refiner = Refiner::new(emb.keypoint(k), fcfg, tcfg)?;
        let query = ann.query[k];
        points.push(TrackPoint::new(query, true, 1.0));
        let mut prev = query;
        for t in 1..t_len {
            let init = if tcfg.chaining { prev } else { query };
            let r = refiner.refine(features.frame(t), init);
            let p = r.position();
            points.push(TrackPoint::new(p, r.peak >= tcfg.visibility_threshold, r.peak.clamp(0.0, 1.0)));
            prev = p;
        }
    }
    TrackSet::new(ann.video_id.clone(), n, t_len, points)
}

/// Tracks one keypoint from `query` through all frames and pulls
/// `upstream[t] = ∂L/∂position(t)` back to the embedding. Returns the
/// positions and `∂L/∂embedding`.
pub fn track_keypoint_vjp(
    features: &VideoFeatures,
    query: Point2,
    emb: &[f64],
    tcfg: &TrackerConfig,
    upstream: &[[f64; 2]],
) -> Result<(Vec<Point2>, Vec<f64>)> {
    let t_len = features.num_frames();
    if upstream.len() != t_len {
        return Err(Error::shape("need one upstream gradient per frame"));
    }
    let refiner = Refiner::new(emb, features.config(), tcfg)?;
    let mut positions = vec![query];
    let mut tapes = Vec::with_capacity(t_len);
    let mut prev = query;
    for t in 1..t_len {
        let init = if tcfg.chaining { prev } else { query };
        let (r, tape) = refiner.refine_taped(features.frame(t), init);
        prev = r.position();
        positions.push(prev);
        tapes.push(tape);
    }
    let mut grad = vec![0.0; emb.len()];
    let m = tcfg.iterations;
    let mut carry = [0.0f64; 2];
    for t in (1..t_len).rev() {
        let mut iterate_grads = vec![[0.0; 2]; m];
        iterate_grads[m - 1] = [upstream[t][0] + carry[0], upstream[t][1] + carry[1]];
        let g_init = refiner.backward(&tapes[t - 1], &iterate_grads, &mut grad);
        // the init depends on the embedding only through chaining
        carry = if tcfg.chaining { g_init } else { [0.0; 2] };
    }
    Ok((positions, grad))
}
