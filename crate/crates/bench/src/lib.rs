//! Fixtures shared by the pipeline benchmarks.

use std::f64::consts::PI;

use pedilung::autodiff::Rng;
use pedilung::Tensor;

/// Unit sine at `freq` Hz.
pub fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Uniform random values in `[0, 1)`.
pub fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.uniform()).collect()
}

/// Random `[n, h, w, c]` image batch.
pub fn image_batch(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Tensor<f32> {
    let data = uniform(n * h * w * c, seed).into_iter().map(|v| v as f32).collect();
    Tensor::new(vec![n, h, w, c], data).expect("consistent shape")
}
