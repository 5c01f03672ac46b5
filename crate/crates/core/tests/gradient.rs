mod common;

use common::gradcheck::{fd_grad, loss_gradient_suite, perturbed, random_instance, H};
use common::rel_err;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tto::tracker::{track_keypoint_vjp, AppearanceEmbedding};
use tto::ttopt::query_embedding;

#[test]
fn loss_gradient_matches_finite_differences() {
    let r = loss_gradient_suite(110);
    println!(
        "loss gradient: worst relative error {:.2e} (seed {}) over {} instances ({} straddled a kink) in {:.1}s",
        r.worst, r.worst_seed, r.accepted, r.rejected, r.secs
    );
    assert!(r.accepted >= 100, "{r:?}");
    assert!(r.worst < 1e-3, "{r:?}");
}

#[test]
fn chained_track_gradient_matches_finite_differences() {
    for seed in 0..30u64 {
        let inst = random_instance(1000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = perturbed(&query_embedding(&inst.features, &inst.ann).unwrap(), &mut rng, 0.2);
        let weights: Vec<[f64; 2]> = (0..3).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let scalar = |e: &AppearanceEmbedding| {
            let (pos, _) = track_keypoint_vjp(&inst.features, inst.ann.query[0], e.values(), &inst.tcfg, &[[0.0; 2]; 3]).unwrap();
            pos.iter().zip(&weights).map(|(p, w)| (p.x * w[0] + p.y * w[1]).sin()).sum::<f64>()
        };
        let (pos, _) = track_keypoint_vjp(&inst.features, inst.ann.query[0], emb.values(), &inst.tcfg, &[[0.0; 2]; 3]).unwrap();
        let upstream: Vec<[f64; 2]> = pos
            .iter()
            .zip(&weights)
            .map(|(p, w)| {
                let c = (p.x * w[0] + p.y * w[1]).cos();
                [c * w[0], c * w[1]]
            })
            .collect();
        let (_, grad) = track_keypoint_vjp(&inst.features, inst.ann.query[0], emb.values(), &inst.tcfg, &upstream).unwrap();
        let fd = fd_grad(&emb, H, scalar);
        let err = rel_err(&grad, &fd, 1e-8);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}
