//! Direct transcriptions of the formulas, written without reference to the
//! library code. Tracks are `[keypoint][frame] -> (x, y)`.

pub type Tracks = Vec<Vec<(f64, f64)>>;

fn scaled(p: (f64, f64), w: f64, h: f64) -> (f64, f64) {
    (p.0 * 256.0 / w, p.1 * 256.0 / h)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

pub fn huber(r: (f64, f64), delta: f64) -> f64 {
    let n = (r.0 * r.0 + r.1 * r.1).sqrt();
    if n > delta {
        delta * n - delta * delta / 2.0
    } else {
        n * n / 2.0
    }
}

/// Weight of refinement iteration `m` (0-based) among `total`.
pub fn iteration_weight(gamma: f64, m: usize, total: usize) -> f64 {
    let mut w = 1.0;
    for _ in 0..(total - 1 - m) {
        w *= gamma;
    }
    w
}

pub fn tracking_loss(estimates: &[Vec<(f64, f64)>], targets: &[(f64, f64)], gamma: f64, delta: f64) -> f64 {
    let mut loss = 0.0;
    for (m, est) in estimates.iter().enumerate() {
        let mut s = 0.0;
        for i in 0..targets.len() {
            s += huber((est[i].0 - targets[i].0, est[i].1 - targets[i].1), delta);
        }
        loss += iteration_weight(gamma, m, estimates.len()) * s / targets.len() as f64;
    }
    loss
}

/// `(1/N) Σ_k ‖e_k − a_k‖₁`.
pub fn reg(emb: &[Vec<f64>], anchor: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for k in 0..emb.len() {
        for j in 0..emb[k].len() {
            total += (emb[k][j] - anchor[k][j]).abs();
        }
    }
    total / emb.len() as f64
}

/// Mean of the query patch and every labeled patch.
pub fn averaged(query: &[f64], labeled: &[Vec<f64>]) -> Vec<f64> {
    (0..query.len())
        .map(|j| (query[j] + labeled.iter().map(|p| p[j]).sum::<f64>()) / (1 + labeled.len()) as f64)
        .collect()
}

pub fn split(num_frames: usize, n: usize) -> (Vec<usize>, Vec<usize>) {
    let train = (0..num_frames).filter(|f| f % n == 0).collect();
    let test = (0..num_frames).filter(|f| f % n == n / 2 && *f >= n / 2).collect();
    (train, test)
}

pub fn delta_avg(pred: &Tracks, gt: &Tracks, gt_vis: &[Vec<bool>], w: f64, h: f64, frames: &[usize]) -> f64 {
    let mut pcts = Vec::new();
    for tau in [1.0, 2.0, 4.0, 8.0, 16.0] {
        let mut hit = 0.0;
        let mut all = 0.0;
        for k in 0..gt.len() {
            for &t in frames {
                if gt_vis[k][t] {
                    all += 1.0;
                    if dist(scaled(pred[k][t], w, h), scaled(gt[k][t], w, h)) < tau {
                        hit += 1.0;
                    }
                }
            }
        }
        pcts.push(100.0 * hit / all);
    }
    pcts.iter().sum::<f64>() / 5.0
}

pub fn jitter(pred: &Tracks, w: f64, h: f64) -> f64 {
    let n = pred.len() as f64;
    let mut sum = 0.0;
    for track in pred {
        let t = track.len();
        let mut s = 0.0;
        for i in 1..t {
            s += dist(scaled(track[i], w, h), scaled(track[i - 1], w, h));
        }
        sum += s / (t - 1) as f64;
    }
    sum / n
}

pub fn jitter_masked(pred: &Tracks, gt: &Tracks, gt_vis: &[Vec<bool>], w: f64, h: f64) -> f64 {
    let n = pred.len() as f64;
    let mut sum = 0.0;
    for k in 0..pred.len() {
        let t = pred[k].len();
        let mut s = 0.0;
        for i in 1..t {
            let off = dist(scaled(pred[k][i], w, h), scaled(gt[k][i], w, h));
            let m = if gt_vis[k][i] && off >= 4.0 { 10.0 } else { 1.0 };
            s += m * dist(scaled(pred[k][i], w, h), scaled(pred[k][i - 1], w, h));
        }
        sum += s / (t - 1) as f64;
    }
    sum / n
}
