use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bev::{BevGrid, BevSpec};
use crate::error::Result;
use crate::tensor::FeatureMap;

const MODES_PER_CHANNEL: usize = 4;

/// Smooth seeded stand-in for a camera BEV feature: every channel is a sum
/// of low-frequency 2D cosines with its mean removed.
pub fn gen_camera_bev(spec: &BevSpec, channels: usize, seed: u64) -> Result<BevGrid> {
    let (h, w) = (spec.height(), spec.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = FeatureMap::zeros(channels, h, w);
    for c in 0..channels {
        let modes: Vec<(f64, f64, f64, f64)> = (0..MODES_PER_CHANNEL)
            .map(|_| {
                (
                    rng.gen_range(0.2..1.0),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let plane = map.plane_mut(c);
        for row in 0..h {
            for col in 0..w {
                let (x, y) = (col as f64 / w as f64, row as f64 / h as f64);
                plane[row * w + col] = modes
                    .iter()
                    .map(|&(a, fx, fy, phase)| a * (2.0 * PI * (fx * x + fy * y) + phase).cos())
                    .sum();
            }
        }
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        plane.iter_mut().for_each(|v| *v -= mean);
    }
    BevGrid::new(map, *spec)
}
