#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use lenscoder::grid::{RealGrid, C64};
use lenscoder::io::{ingest_mnist, MnistSplits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> RealGrid {
    RealGrid::from_vec(h, w, c, uniform(h * w * c, 0.0, 1.0, seed)).unwrap()
}

pub fn random_complex(n: usize, seed: u64) -> Vec<C64> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// MNIST location: `LENSCODER_MNIST_DIR`, else `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("LENSCODER_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn mnist() -> Option<MnistSplits> {
    let dir = mnist_dir();
    match ingest_mnist(&dir) {
        Ok(s) => Some(s),
        Err(e) => {
            eprintln!("MNIST unavailable at {}: {e}", dir.display());
            None
        }
    }
}
