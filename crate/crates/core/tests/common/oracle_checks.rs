//! Library formulas against the brute-force oracles. Each check returns the
//! worst relative discrepancy over its random cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tto::features::{extract_patch, FeatureConfig, VideoFeatures};
use tto::metrics::{delta_scores, jitter, jitter_masked};
use tto::model::{split_frames, AnnotationSet, KeypointDef, Label, Point2, TrackPoint, TrackSet};
use tto::synth::{generate_scene, SceneSpec};
use tto::tracker::AppearanceEmbedding;
use tto::ttopt::{huber, init_embedding, reg_loss, tracking_loss};

use super::oracles;

pub const CASES: u64 = 50;
pub const TOLERANCE: f64 = 1e-9;

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

struct Pair {
    pred: TrackSet,
    gt: TrackSet,
    pred_xy: oracles::Tracks,
    gt_xy: oracles::Tracks,
    gt_vis: Vec<Vec<bool>>,
    w: usize,
    h: usize,
}

fn random_pair(seed: u64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..5);
    let t = rng.gen_range(2..30);
    let w = rng.gen_range(32..400);
    let h = rng.gen_range(32..400);
    let mut pred_xy = vec![Vec::new(); n];
    let mut gt_xy = vec![Vec::new(); n];
    let mut gt_vis = vec![Vec::new(); n];
    let mut pred_pts = Vec::new();
    let mut gt_pts = Vec::new();
    for k in 0..n {
        for _ in 0..t {
            let g = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
            // Errors spanning every threshold bucket.
            let scale = [0.3, 2.0, 6.0, 30.0][rng.gen_range(0..4)];
            let p = (g.0 + rng.gen_range(-scale..scale), g.1 + rng.gen_range(-scale..scale));
            let vis = rng.gen_bool(0.8);
            pred_xy[k].push(p);
            gt_xy[k].push(g);
            gt_vis[k].push(vis);
            pred_pts.push(TrackPoint::new(Point2::new(p.0, p.1), true, 1.0));
            gt_pts.push(TrackPoint::new(Point2::new(g.0, g.1), vis, 1.0));
        }
    }
    gt_vis[0][0] = true;
    gt_pts[0].visible = true;
    Pair {
        pred: TrackSet::new("p", n, t, pred_pts).unwrap(),
        gt: TrackSet::new("g", n, t, gt_pts).unwrap(),
        pred_xy,
        gt_xy,
        gt_vis,
        w,
        h,
    }
}

pub fn huber_loss() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..CASES)
        .map(|_| {
            let r = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let delta = rng.gen_range(0.1..4.0);
            rel(huber([r.0, r.1], delta), oracles::huber(r, delta))
        })
        .fold(0.0, f64::max)
}

pub fn discounted_loss() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let m = rng.gen_range(1..6);
        let s = rng.gen_range(1..8);
        let gamma = rng.gen_range(0.5..1.0);
        let delta = rng.gen_range(0.5..3.0);
        let targets: Vec<(f64, f64)> = (0..s).map(|_| (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0))).collect();
        let est: Vec<Vec<(f64, f64)>> = (0..m)
            .map(|_| targets.iter().map(|t| (t.0 + rng.gen_range(-6.0..6.0), t.1 + rng.gen_range(-6.0..6.0))).collect())
            .collect();
        let lib = tracking_loss(
            &est.iter().map(|e| e.iter().map(|p| Point2::new(p.0, p.1)).collect()).collect::<Vec<_>>(),
            &targets.iter().map(|p| Point2::new(p.0, p.1)).collect::<Vec<_>>(),
            gamma,
            delta,
        )
        .unwrap();
        worst = worst.max(rel(lib, oracles::tracking_loss(&est, &targets, gamma, delta)));
    }
    worst
}

/// M=4, γ=0.8: each iteration's weight, isolated by a unit-loss sample.
pub fn iteration_weights() -> f64 {
    let want = [0.512, 0.64, 0.8, 1.0];
    let t = [Point2::new(0.0, 0.0)];
    let mut worst = 0.0f64;
    for m in 0..4 {
        worst = worst.max(rel(oracles::iteration_weight(0.8, m, 4), want[m]));
        let mut est = vec![vec![t[0]]; 4];
        est[m] = vec![Point2::new(2.0f64.sqrt(), 0.0)];
        worst = worst.max(rel(tracking_loss(&est, &t, 0.8, 6.0).unwrap(), want[m]));
    }
    worst
}

pub fn reg() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let n = rng.gen_range(1..6);
        let d = rng.gen_range(1..40);
        let mut draw = || (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>()).collect::<Vec<_>>();
        let (e, a) = (draw(), draw());
        let lib = reg_loss(
            &AppearanceEmbedding::from_patches(e.clone()).unwrap(),
            &AppearanceEmbedding::from_patches(a.clone()).unwrap(),
        )
        .unwrap();
        worst = worst.max(rel(lib, oracles::reg(&e, &a)));
    }
    worst
}

/// 1 for any mismatching (T, n), else 0. Also pins 60 frames at interval
/// 10 to six train frames.
pub fn split() -> f64 {
    let six = split_frames(60, 10).unwrap().0.len() == 6;
    let all = (2..60).all(|t| (2..15).all(|n| split_frames(t, n).unwrap() == oracles::split(t, n)));
    if six && all {
        0.0
    } else {
        1.0
    }
}

pub fn delta_avg() -> f64 {
    (0..CASES)
        .map(|seed| {
            let p = random_pair(seed);
            let t = p.gt.num_frames();
            let frames: Vec<usize> = (0..t).filter(|f| !(f + seed as usize).is_multiple_of(3)).chain([0]).collect();
            let lib = delta_scores(&p.pred, &p.gt, p.w, p.h, &frames).unwrap();
            rel(lib.avg, oracles::delta_avg(&p.pred_xy, &p.gt_xy, &p.gt_vis, p.w as f64, p.h as f64, &frames))
        })
        .fold(0.0, f64::max)
}

pub fn jitter_plain() -> f64 {
    (0..CASES)
        .map(|seed| {
            let p = random_pair(100 + seed);
            rel(jitter(&p.pred, p.w, p.h, None).unwrap(), oracles::jitter(&p.pred_xy, p.w as f64, p.h as f64))
        })
        .fold(0.0, f64::max)
}

pub fn jitter_mask() -> f64 {
    (0..CASES)
        .map(|seed| {
            let p = random_pair(200 + seed);
            let lib = jitter_masked(&p.pred, &p.gt, p.w, p.h, None).unwrap();
            rel(lib, oracles::jitter_masked(&p.pred_xy, &p.gt_xy, &p.gt_vis, p.w as f64, p.h as f64))
        })
        .fold(0.0, f64::max)
}

pub fn averaged_init() -> f64 {
    let cfg = FeatureConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let spec = SceneSpec {
            seed,
            frames: 6,
            width: 64,
            height: 64,
            num_keypoints: 2,
            ..SceneSpec::default()
        };
        let (clip, _) = generate_scene(&spec).unwrap();
        let feats = VideoFeatures::extract(&clip, &cfg).unwrap();
        let pos = |rng: &mut ChaCha8Rng| Point2::new(rng.gen_range(0.0..63.0), rng.gen_range(0.0..63.0));
        let query = vec![pos(&mut rng), pos(&mut rng)];
        let mut labels = Vec::new();
        for k in 0..2 {
            for frame in 1..6 {
                if rng.gen_bool(0.5) {
                    let p = pos(&mut rng);
                    labels.push(Label { frame, keypoint_id: k, x: p.x, y: p.y, visible: true });
                }
            }
        }
        let ann = AnnotationSet {
            video_id: clip.id().to_string(),
            keypoints: (0..2).map(|id| KeypointDef { id, name: format!("k{id}") }).collect(),
            query: query.clone(),
            labels: labels.clone(),
        };
        let lib = init_embedding(&feats, &ann).unwrap();
        for (k, &qk) in query.iter().enumerate() {
            let q = extract_patch(feats.frame(0), 1, qk, &cfg).unwrap().values;
            let labeled: Vec<Vec<f64>> = labels
                .iter()
                .filter(|l| l.keypoint_id == k)
                .map(|l| extract_patch(feats.frame(l.frame), 1, l.position(), &cfg).unwrap().values)
                .collect();
            let want = oracles::averaged(&q, &labeled);
            for (a, b) in lib.keypoint(k).iter().zip(&want) {
                worst = worst.max(rel(*a, *b));
            }
        }
    }
    worst
}

/// Every check by name.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("huber", huber_loss()),
        ("tracking loss", discounted_loss()),
        ("weights M=4 γ=0.8", iteration_weights()),
        ("averaged init", averaged_init()),
        ("reg", reg()),
        ("delta_avg", delta_avg()),
        ("J", jitter_plain()),
        ("J_masked", jitter_mask()),
        ("split_frames", split()),
    ]
}
