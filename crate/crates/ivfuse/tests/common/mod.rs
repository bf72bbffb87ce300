//! Shared fixtures: deterministic synthetic infrared/visible pairs and
//! on-disk dataset layout helpers.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use ivfuse::data_io::{save_pgm, Gray8};
use ivfuse::tensor::Tensor4;
use ivfuse::trainer::TrainPair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One synthetic (infrared, visible) pair: a shared smooth background, a hot
/// blob only the infrared sees, stripes only the visible sees, light noise.
pub fn synthetic_pair(seed: u64, h: usize, w: usize) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = rng.gen_range(0.25..0.75) * w as f64;
    let cy = rng.gen_range(0.25..0.75) * h as f64;
    let radius = h.min(w) as f64 * rng.gen_range(0.12..0.22);
    let phase = rng.gen_range(0.0..std::f64::consts::PI);
    let period = rng.gen_range(4.0..9.0);
    let mut ir = Vec::with_capacity(h * w);
    let mut vis = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let fx = x as f64 / w as f64;
            let fy = y as f64 / h as f64;
            let base = 70.0 + 60.0 * fx + 40.0 * fy * (1.0 - fx);
            let d2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (radius * radius);
            let blob = 140.0 * (-d2).exp();
            let stripes = 45.0
                * (x as f64 / period + phase).sin()
                * (y as f64 / (period * 1.7)).cos();
            let noise = rng.gen_range(-3.0..3.0);
            ir.push((base + blob + noise).round().clamp(0.0, 255.0) as u8);
            vis.push((base + stripes - 0.25 * blob + noise).round().clamp(0.0, 255.0) as u8);
        }
    }
    (ir, vis)
}

/// (1,1,h,w) tensor scaled to [0,1] from raw pixels.
pub fn tensor_from_pixels(h: usize, w: usize, pixels: &[u8]) -> Tensor4 {
    Tensor4::new(
        1,
        1,
        h,
        w,
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
    )
    .unwrap()
}

/// In-memory training pairs, one per seed offset.
pub fn train_pairs(count: usize, seed: u64, h: usize, w: usize) -> Vec<TrainPair> {
    (0..count)
        .map(|i| {
            let (ir, vis) = synthetic_pair(seed + i as u64, h, w);
            TrainPair {
                ir: tensor_from_pixels(h, w, &ir),
                vis: tensor_from_pixels(h, w, &vis),
            }
        })
        .collect()
}

pub fn write_pgm(path: &Path, h: usize, w: usize, pixels: &[u8]) {
    save_pgm(
        path,
        &Gray8 {
            h,
            w,
            pixels: pixels.to_vec(),
        },
    )
    .unwrap();
}

/// Lay out `count` synthetic pairs as `dir/ir/pair_NN.pgm` and
/// `dir/vis/pair_NN.pgm`.
pub fn make_dataset(dir: &Path, count: usize, seed: u64, h: usize, w: usize) {
    fs::create_dir_all(dir.join("ir")).unwrap();
    fs::create_dir_all(dir.join("vis")).unwrap();
    for i in 0..count {
        let (ir, vis) = synthetic_pair(seed + i as u64, h, w);
        let name = format!("pair_{i:02}.pgm");
        write_pgm(&dir.join("ir").join(&name), h, w, &ir);
        write_pgm(&dir.join("vis").join(&name), h, w, &vis);
    }
}
