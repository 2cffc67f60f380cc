//! Smooth synthetic scenes built as linear mixtures of random endmembers.
//!
//! Each endmember spectrum is a baseline plus a few Gaussian absorption and
//! reflection features; each abundance map is a sum of Gaussian blobs. The
//! abundances are normalized to sum to one per pixel and the mixed cube is
//! scaled to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{scale_to_unit, HsiCube, HsiError};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// Wavelength range in micrometers assigned linearly across the bands.
    pub wavelength_range: (f64, f64),
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(rows: usize, cols: usize, bands: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            bands,
            endmembers: 4,
            wavelength_range: (0.4, 2.4),
            seed,
        }
    }
}

pub fn generate(cfg: &SceneConfig) -> Result<HsiCube, HsiError> {
    let SceneConfig {
        rows,
        cols,
        bands,
        endmembers,
        ..
    } = *cfg;
    if rows == 0 || cols == 0 || bands == 0 || endmembers == 0 {
        return Err(HsiError::InvalidDims { rows, cols, bands });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let spectra: Vec<Vec<f64>> = (0..endmembers)
        .map(|_| {
            let base = rng.random_range(0.2..0.6);
            let slope = rng.random_range(-0.2..0.2);
            let features: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.08..0.3),
                        rng.random_range(-0.3..0.4),
                    )
                })
                .collect();
            (0..bands)
                .map(|b| {
                    let t = if bands == 1 { 0.5 } else { b as f64 / (bands - 1) as f64 };
                    let bumps: f64 = features
                        .iter()
                        .map(|&(center, width, amp)| {
                            amp * (-(t - center).powi(2) / (2.0 * width * width)).exp()
                        })
                        .sum();
                    base + slope * t + bumps
                })
                .collect()
        })
        .collect();

    let diag = ((rows * rows + cols * cols) as f64).sqrt();
    let abundances: Vec<Vec<f64>> = (0..endmembers)
        .map(|_| {
            let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.0..rows as f64),
                        rng.random_range(0.0..cols as f64),
                        rng.random_range(0.15..0.45) * diag,
                        rng.random_range(0.3..1.0),
                    )
                })
                .collect();
            (0..rows * cols)
                .map(|p| {
                    let (r, c) = ((p / cols) as f64, (p % cols) as f64);
                    0.05 + blobs
                        .iter()
                        .map(|&(br, bc, w, a)| {
                            a * (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * w * w)).exp()
                        })
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();

    let mut data = vec![0.0; rows * cols * bands];
    for p in 0..rows * cols {
        let total: f64 = abundances.iter().map(|a| a[p]).sum();
        for b in 0..bands {
            data[b * rows * cols + p] = abundances
                .iter()
                .zip(&spectra)
                .map(|(a, s)| a[p] / total * s[b])
                .sum();
        }
    }
    let (lo, hi) = cfg.wavelength_range;
    let wavelengths = (0..bands)
        .map(|b| {
            if bands == 1 {
                lo
            } else {
                lo + (hi - lo) * b as f64 / (bands - 1) as f64
            }
        })
        .collect();
    let cube = HsiCube::new(rows, cols, bands, data, None)?;
    scale_to_unit(&cube)?.with_wavelengths(wavelengths)
}
