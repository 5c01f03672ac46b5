//! Randomized finite-difference check of the objective's gradient.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tto::features::{FeatureConfig, VideoFeatures};
use tto::model::{AnnotationSet, KeypointDef, Label, Point2, VideoClip};
use tto::tracker::{AppearanceEmbedding, TrackerConfig};
use tto::ttopt::{init_embedding, query_embedding, training_samples, Objective, OptimConfig, TrainInit};

use super::{blob_texture, rel_err};

pub const H: f64 = 1e-4;
/// Reference step used only to detect stencils that straddle a kink.
const H_FINE: f64 = 1e-6;

pub struct Instance {
    pub features: VideoFeatures,
    pub ann: AnnotationSet,
    pub tcfg: TrackerConfig,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fcfg = FeatureConfig {
        delta: rng.gen_range(1..=2),
        scales: rng.gen_range(1..=4),
        ..Default::default()
    };
    let tcfg = TrackerConfig {
        iterations: rng.gen_range(1..=4),
        radius: rng.gen_range(1..=3),
        local_radius: [None, Some(1), Some(2)][rng.gen_range(0..3)],
        ..Default::default()
    };
    let tex = rng.gen();
    let frames: Vec<_> = (0..3)
        .map(|t| {
            let s = (rng.gen_range(-2.0..2.0) * t as f64, rng.gen_range(-2.0..2.0) * t as f64);
            blob_texture(32, 32, tex, s)
        })
        .collect();
    let clip = VideoClip::new("grad", 30.0, frames).unwrap();
    let features = VideoFeatures::extract(&clip, &fcfg).unwrap();
    let q = Point2::new(rng.gen_range(8.0..24.0), rng.gen_range(8.0..24.0));
    let n_labels = rng.gen_range(1..=2);
    let labels = (1..=n_labels)
        .map(|f| Label {
            frame: f,
            keypoint_id: 0,
            x: (q.x + rng.gen_range(-5.0..5.0)).clamp(0.5, 31.0),
            y: (q.y + rng.gen_range(-5.0..5.0)).clamp(0.5, 31.0),
            visible: true,
        })
        .collect();
    let ann = AnnotationSet {
        video_id: "grad".into(),
        keypoints: vec![KeypointDef { id: 0, name: "kp".into() }],
        query: vec![q],
        labels,
    };
    Instance { features, ann, tcfg }
}

pub fn perturbed(emb: &AppearanceEmbedding, rng: &mut ChaCha8Rng, scale: f64) -> AppearanceEmbedding {
    let vals = emb.values().iter().map(|v| v + rng.gen_range(-scale..scale)).collect();
    AppearanceEmbedding::new(emb.patch_len(), vals).unwrap()
}

pub fn fd_grad(emb: &AppearanceEmbedding, h: f64, f: impl Fn(&AppearanceEmbedding) -> f64) -> Vec<f64> {
    let mut e = emb.clone();
    (0..emb.values().len())
        .map(|i| {
            let v = e.values()[i];
            e.values_mut()[i] = v + h;
            let up = f(&e);
            e.values_mut()[i] = v - h;
            let down = f(&e);
            e.values_mut()[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug)]
pub struct GradReport {
    pub accepted: usize,
    /// Instances whose stencil straddled a kink of the piecewise-linear sampler.
    pub rejected: usize,
    pub worst: f64,
    pub worst_seed: u64,
    pub secs: f64,
}

/// Checks analytic against central-difference gradients until `target`
/// instances are accepted (or the seed budget runs out).
pub fn loss_gradient_suite(target: usize) -> GradReport {
    let started = Instant::now();
    let mut report = GradReport {
        accepted: 0,
        rejected: 0,
        worst: 0.0,
        worst_seed: 0,
        secs: 0.0,
    };
    for seed in 0..(target as u64 * 3 / 2) {
        if report.accepted == target {
            break;
        }
        let inst = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let ocfg = OptimConfig {
            lambda: [0.0, 0.01, 0.5][seed as usize % 3],
            huber_delta: [6.0, 1.0][seed as usize % 2],
            train_init: if seed % 4 == 0 { TrainInit::Label } else { TrainInit::PreviousAnnotation },
            ..Default::default()
        };
        let anchor = query_embedding(&inst.features, &inst.ann).unwrap();
        let mut emb = perturbed(&init_embedding(&inst.features, &inst.ann).unwrap(), &mut rng, 0.3);
        // Keep every entry clear of the L1 kink so central differences are valid.
        for (e, a) in emb.values_mut().iter_mut().zip(anchor.values()) {
            if (*e - *a).abs() < 10.0 * H {
                *e = a + 10.0 * H;
            }
        }
        let samples = training_samples(&inst.ann, ocfg.train_init);
        let obj = Objective::new(&inst.features, samples, anchor, &inst.tcfg, &ocfg).unwrap();
        let (loss, grad) = obj.loss_and_grad(&emb).unwrap();
        let plain = obj.loss(&emb).unwrap();
        assert!((loss.total - plain.total).abs() <= 1e-9 * plain.total.abs().max(1.0));
        let f = |e: &AppearanceEmbedding| obj.loss(e).unwrap().total;
        let fd = fd_grad(&emb, H, f);
        if rel_err(&fd, &fd_grad(&emb, H_FINE, f), 1e-8) > 1e-4 {
            report.rejected += 1;
            continue;
        }
        report.accepted += 1;
        let err = rel_err(&grad, &fd, 1e-8);
        if err > report.worst {
            report.worst = err;
            report.worst_seed = seed;
        }
    }
    report.secs = started.elapsed().as_secs_f64();
    report
}
