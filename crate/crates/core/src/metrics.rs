//! Band-wise PSNR and SSIM, pixel-wise spectral angle, and their means.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::hsi::HsiCube;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("SSIM needs at least {min}×{min} pixels, got {rows}×{cols}")]
    TooSmall { rows: usize, cols: usize, min: usize },
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10·log10(peak² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Shape(vec![a.len()], vec![b.len()]));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable Gaussian filter of a `rows×cols` image.
fn filter(img: &[f64], rows: usize, cols: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (or, oc) = (rows - SSIM_WINDOW + 1, cols - SSIM_WINDOW + 1);
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &img[r * cols..(r + 1) * cols];
        for c in 0..oc {
            horiz[r * oc + c] = w.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = w.iter().enumerate().map(|(i, a)| a * horiz[(r + i) * oc + c]).sum();
        }
    }
    out
}

/// Mean SSIM over every valid 11×11 Gaussian-window position, dynamic
/// range 1.
pub fn ssim(a: &[f64], b: &[f64], rows: usize, cols: usize) -> Result<f64, MetricsError> {
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(MetricsError::Shape(vec![a.len()], vec![b.len()]));
    }
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            rows,
            cols,
            min: SSIM_WINDOW,
        });
    }
    let w = gaussian_window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter(a, rows, cols, &w);
    let mu_b = filter(b, rows, cols, &w);
    let aa = filter(&prod(|x, _| x * x), rows, cols, &w);
    let bb = filter(&prod(|_, y| y * y), rows, cols, &w);
    let ab = filter(&prod(|x, y| x * y), rows, cols, &w);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn same_dims(a: &HsiCube, b: &HsiCube) -> Result<(), MetricsError> {
    let d = |c: &HsiCube| vec![c.rows(), c.cols(), c.bands()];
    if d(a) != d(b) {
        return Err(MetricsError::Shape(d(a), d(b)));
    }
    Ok(())
}

/// Angle between two spectra, `arccos(⟨x, y⟩ / (‖x‖‖y‖))`, evaluated as
/// `2·atan2(‖x̂ − ŷ‖, ‖x̂ + ŷ‖)` on the unit vectors so that (nearly)
/// parallel spectra do not lose precision. `None` if either norm is zero.
pub fn spectral_angle(x: &[f64], y: &[f64]) -> Option<f64> {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (u, v) = (a / nx, b / ny);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Spectral angle in radians of every pixel (row-major) and their mean.
/// A pixel where either spectrum has zero norm gets angle 0.
pub fn sam(cube: &HsiCube, reference: &HsiCube) -> Result<(Vec<f64>, f64), MetricsError> {
    same_dims(cube, reference)?;
    let n = cube.band_len();
    let map: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / cube.cols(), p % cube.cols());
            spectral_angle(&cube.spectrum(r, c), &reference.spectrum(r, c))
        })
        .collect();
    let degenerate = map.iter().filter(|a| a.is_none()).count();
    if degenerate > 0 {
        log::warn!("{degenerate} zero-norm pixel(s) given spectral angle 0");
    }
    let map: Vec<f64> = map.into_iter().map(|a| a.unwrap_or(0.0)).collect();
    let mean = map.iter().sum::<f64>() / n as f64;
    Ok((map, mean))
}

/// Mean of the finite PSNR values; infinite ones (identical bands) are
/// dropped with a warning. All-infinite input yields infinity.
pub fn mean_psnr(per_band: &[f64]) -> f64 {
    let finite: Vec<f64> = per_band.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < per_band.len() {
        log::warn!(
            "{} band(s) with infinite PSNR excluded from the mean",
            per_band.len() - finite.len()
        );
    }
    if finite.is_empty() {
        return f64::INFINITY;
    }
    finite.iter().sum::<f64>() / finite.len() as f64
}

pub fn band_psnrs(cube: &HsiCube, reference: &HsiCube, peak: f64) -> Result<Vec<f64>, MetricsError> {
    same_dims(cube, reference)?;
    (0..cube.bands())
        .into_par_iter()
        .map(|b| psnr(cube.band(b), reference.band(b), peak))
        .collect()
}

pub fn mpsnr(cube: &HsiCube, reference: &HsiCube, peak: f64) -> Result<f64, MetricsError> {
    Ok(mean_psnr(&band_psnrs(cube, reference, peak)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_band_psnr: Vec<f64>,
    pub per_band_ssim: Vec<f64>,
    /// Row-major `M×N` spectral angles in radians.
    pub sam_map: Vec<f64>,
    pub mpsnr: f64,
    pub mssim: f64,
    pub sam_mean: f64,
    pub wavelengths: Option<Vec<f64>>,
}

pub fn report(estimate: &HsiCube, clean: &HsiCube, peak: f64) -> Result<MetricReport, MetricsError> {
    let per_band_psnr = band_psnrs(estimate, clean, peak)?;
    let (rows, cols) = (clean.rows(), clean.cols());
    let per_band_ssim = (0..clean.bands())
        .into_par_iter()
        .map(|b| ssim(estimate.band(b), clean.band(b), rows, cols))
        .collect::<Result<Vec<_>, _>>()?;
    let (sam_map, sam_mean) = sam(estimate, clean)?;
    Ok(MetricReport {
        mpsnr: mean_psnr(&per_band_psnr),
        mssim: per_band_ssim.iter().sum::<f64>() / per_band_ssim.len() as f64,
        per_band_psnr,
        per_band_ssim,
        sam_map,
        sam_mean,
        wavelengths: clean.wavelengths().map(<[f64]>::to_vec),
    })
}

impl MetricReport {
    /// `band_index,wavelength_um,psnr_db,ssim`, one row per band. The
    /// wavelength is empty when unknown; infinite PSNR is written `inf`.
    pub fn band_csv(&self) -> String {
        let mut s = String::from("band_index,wavelength_um,psnr_db,ssim\n");
        for (b, (p, q)) in self.per_band_psnr.iter().zip(&self.per_band_ssim).enumerate() {
            let wl = self
                .wavelengths
                .as_ref()
                .map(|w| w[b].to_string())
                .unwrap_or_default();
            let _ = writeln!(s, "{b},{wl},{p},{q}");
        }
        s
    }

    /// `mpsnr_db,mssim,sam_mean_rad` and one value row.
    pub fn summary_csv(&self) -> String {
        format!(
            "mpsnr_db,mssim,sam_mean_rad\n{},{},{}\n",
            self.mpsnr, self.mssim, self.sam_mean
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_uniform_error() {
        let a = vec![0.5; 64];
        let b = vec![0.6; 64];
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b[..3], 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_size_check() {
        let a: Vec<f64> = (0..144).map(|i| (i % 13) as f64 / 13.0).collect();
        assert!((ssim(&a, &a, 12, 12).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(ssim(&a[..100], &a[..100], 10, 10), Err(MetricsError::TooSmall { .. })));
    }

    #[test]
    fn window_sums_to_one() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[10]);
    }

    #[test]
    fn sam_orthogonal_and_zero() {
        let a = HsiCube::new(1, 2, 2, vec![1.0, 0.0, 0.0, 0.0], None).unwrap();
        let b = HsiCube::new(1, 2, 2, vec![0.0, 0.0, 1.0, 0.0], None).unwrap();
        let (map, _) = sam(&a, &b).unwrap();
        assert!((map[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(map[1], 0.0);
    }

    #[test]
    fn mean_psnr_skips_infinite() {
        assert_eq!(mean_psnr(&[f64::INFINITY, 20.0, 30.0]), 25.0);
        assert_eq!(mean_psnr(&[f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn csv_layout() {
        let c = HsiCube::from_fn(11, 11, 2, |r, c, b| (r + c + b) as f64 / 30.0)
            .unwrap()
            .with_wavelengths(vec![0.5, 0.6])
            .unwrap();
        let rep = report(&c, &c, 1.0).unwrap();
        let csv = rep.band_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("band_index,wavelength_um,psnr_db,ssim\n0,0.5,inf,1"));
        assert_eq!(rep.summary_csv(), "mpsnr_db,mssim,sam_mean_rad\ninf,1,0\n");
    }
}
