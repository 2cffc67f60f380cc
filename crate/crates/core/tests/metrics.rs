use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smcnn_core::hsi::synthetic::{generate, SceneConfig};
use smcnn_core::metrics::{psnr, report, sam, spectral_angle, ssim};
use smcnn_core::*;

fn psnr_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]).powi(2);
    }
    -10.0 * (se / a.len() as f64).log10()
}

/// Straight windowed SSIM: a full 2D Gaussian kernel and two-pass local
/// moments at every valid position.
fn ssim_oracle(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
    let mut kernel = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.0001, 0.0009);
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=rows - 11 {
        for c in 0..=cols - 11 {
            let at = |img: &[f64], i: usize, j: usize| img[(r + i) * cols + c + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = kernel[i][j] / norm;
                    ma += w * at(a, i, j);
                    mb += w * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = kernel[i][j] / norm;
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn sam_oracle(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    (dot / (nx * ny)).clamp(-1.0, 1.0).acos()
}

#[test]
fn psnr_and_ssim_match_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let rows = rng.random_range(11..24);
        let cols = rng.random_range(11..24);
        let a: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        // correlated partner so SSIM is not always near zero
        let mix = rng.random_range(0.0..1.0);
        let b: Vec<f64> = a
            .iter()
            .map(|v| mix * v + (1.0 - mix) * rng.random_range(0.0..1.0))
            .collect();
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr_oracle(&a, &b)).abs() <= 1e-10);
        let s = ssim(&a, &b, rows, cols).unwrap();
        assert!((s - ssim_oracle(&a, &b, rows, cols)).abs() <= 1e-8, "{rows}x{cols}");
        assert!((-1.0..=1.0).contains(&s));
    }
}

#[test]
fn sam_matches_arccos_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let n = rng.random_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!((spectral_angle(&x, &y).unwrap() - sam_oracle(&x, &y)).abs() <= 1e-8);
    }
    let right = spectral_angle(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert!((right - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    assert_eq!(spectral_angle(&[0.0, 0.0], &[1.0, 2.0]), None);
}

#[test]
fn inverted_checkerboard_has_low_ssim() {
    let (rows, cols) = (32, 32);
    let a: Vec<f64> = (0..rows * cols)
        .map(|i| if ((i / cols) / 4 + (i % cols) / 4) % 2 == 0 { 0.9 } else { 0.1 })
        .collect();
    let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
    let s = ssim(&a, &b, rows, cols).unwrap();
    assert!(s < 0.5);
    assert!((ssim_oracle(&a, &b, rows, cols) - GOLDEN_INVERTED_CHECKER).abs() < 1e-12);
    assert!((s - GOLDEN_INVERTED_CHECKER).abs() < 1e-12, "{s}");
}

// loop oracle on the 4-pixel 0.1/0.9 checkerboard
const GOLDEN_INVERTED_CHECKER: f64 = -0.9327698493511797;

#[test]
fn noisy_cube_scores_worse_than_clean() {
    let clean = generate(&SceneConfig::new(24, 24, 8, 3)).unwrap();
    let (noisy, _) = corrupt(&clean, &NoiseSpec::new(NoiseCase::Gaussian, 4)).unwrap();
    let ideal = report(&clean, &clean, 1.0).unwrap();
    let r = report(&noisy, &clean, 1.0).unwrap();
    assert_eq!(ideal.mssim, 1.0);
    assert_eq!(ideal.sam_mean, 0.0);
    assert!(ideal.per_band_psnr.iter().all(|v| v.is_infinite()));
    assert!(r.mpsnr.is_finite() && r.mssim < 1.0 && r.sam_mean > 0.0);

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert_eq!(r.mpsnr, mean(&r.per_band_psnr));
    assert_eq!(r.mssim, mean(&r.per_band_ssim));
    assert_eq!(r.sam_mean, mean(&r.sam_map));
    assert!(r.sam_map.iter().all(|a| (0.0..=std::f64::consts::PI).contains(a)));
    assert_eq!(r.band_csv().lines().count(), 9);
    assert!(r.band_csv().lines().nth(1).unwrap().starts_with("0,0.4,"));
}

#[test]
fn sam_rejects_mismatched_cubes() {
    let a = generate(&SceneConfig::new(4, 4, 3, 0)).unwrap();
    let b = generate(&SceneConfig::new(4, 5, 3, 0)).unwrap();
    assert!(sam(&a, &b).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn psnr_and_ssim_are_symmetric(seed in any::<u64>(), rows in 11usize..18, cols in 11usize..18) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert_eq!(ssim(&a, &b, rows, cols).unwrap(), ssim(&b, &a, rows, cols).unwrap());
    }

    #[test]
    fn spectral_angle_is_scale_invariant_and_symmetric(
        x in prop::collection::vec(0.01f64..1.0, 3..30),
        s in 0.01f64..100.0,
        t in 0.01f64..100.0,
        shift in 0usize..30,
    ) {
        let y: Vec<f64> = x.iter().cycle().skip(shift % x.len()).take(x.len()).copied().collect();
        let base = spectral_angle(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        let yt: Vec<f64> = y.iter().map(|v| v * t).collect();
        prop_assert!((spectral_angle(&xs, &yt).unwrap() - base).abs() <= 1e-12);
        prop_assert_eq!(spectral_angle(&y, &x).unwrap(), base);
        prop_assert!(spectral_angle(&x, &xs).unwrap().abs() <= 1e-12);
    }
}
