#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle_checks;
pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tto::model::Frame;

/// Smooth random grayscale texture (sum of Gaussian blobs), optionally shifted.
pub fn blob_texture(w: usize, h: usize, seed: u64, shift: (f64, f64)) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..(w * h / 30).max(4))
        .map(|_| {
            (
                rng.gen_range(-6.0..w as f64 + 6.0),
                rng.gen_range(-6.0..h as f64 + 6.0),
                rng.gen_range(2.0..5.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let mut data = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 - shift.0, y as f64 - shift.1);
            let v: f64 = blobs
                .iter()
                .map(|(bx, by, r, a)| a * (-((px - bx).powi(2) + (py - by).powi(2)) / (2.0 * r * r)).exp())
                .sum();
            data[y * w + x] = (0.5 + 0.25 * v).clamp(0.0, 1.0) as f32;
        }
    }
    Frame::new(w, h, 1, data).unwrap()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖, floor)
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
