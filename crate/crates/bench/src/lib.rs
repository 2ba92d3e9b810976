//! Shared fixtures for the criterion benchmarks.

use cmmlp_core::{ModelConfig, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded tensor uniform in `[-1, 1)`.
pub fn noise(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn desk_model(size: usize) -> (ModelConfig, ParamStore<f32>) {
    let cfg = ModelConfig {
        image_size: size,
        ..ModelConfig::default()
    };
    let params = cfg.init_params(0).expect("default config is valid");
    (cfg, params)
}
