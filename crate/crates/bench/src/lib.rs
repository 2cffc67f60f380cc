//! Input fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smcnn_core::hsi::synthetic::{generate, SceneConfig};
use smcnn_core::hsi::{PatchSample, SampleSet};
use smcnn_core::{corrupt, HsiCube, NoiseCase, NoiseSpec, Tensor};

/// Uniform values in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn random_image(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0.0..1.0)).collect()
}

pub fn clean_cube(rows: usize, cols: usize, bands: usize) -> HsiCube {
    generate(&SceneConfig::new(rows, cols, bands, 1)).expect("valid scene")
}

pub fn noisy_pair(rows: usize, cols: usize, bands: usize) -> (HsiCube, HsiCube) {
    let clean = clean_cube(rows, cols, bands);
    let (noisy, _) = corrupt(&clean, &NoiseSpec::new(NoiseCase::Gaussian, 2)).expect("valid spec");
    (noisy, clean)
}

/// `n` training samples drawn from a noisy synthetic cube.
pub fn samples(k: usize, patch: usize, n: usize) -> Vec<PatchSample> {
    let (noisy, clean) = noisy_pair(32, 32, 16);
    let set = SampleSet::new(&noisy, &clean, k, patch, 4).expect("cube fits the patch");
    (0..n).map(|i| set.get(i * 7 % set.len())).collect()
}
