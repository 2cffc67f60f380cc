//! Band-scanning sample pipeline: spectral flip padding, spectral windows,
//! patch cropping and rotation augmentation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HsiCube, HsiError};
use crate::tensor::Tensor;

/// Affine map of the global minimum to 0 and maximum to 1.
pub fn scale_to_unit(cube: &HsiCube) -> Result<HsiCube, HsiError> {
    let (lo, hi) = cube.min_max();
    if hi <= lo {
        return Err(HsiError::ConstantCube);
    }
    let span = hi - lo;
    Ok(cube.map(|v| (v - lo) / span))
}

fn check_window(k: usize, bands: usize) -> Result<(), HsiError> {
    if k == 0 || !k.is_multiple_of(2) {
        return Err(HsiError::OddWindow(k));
    }
    if k / 2 > bands {
        return Err(HsiError::WindowTooLarge { half: k / 2, bands });
    }
    Ok(())
}

/// Mirrors `K/2` bands at each spectral end: the first `K/2` bands are
/// prepended in reverse order and the last `K/2` appended in reverse order,
/// so `[b1, b2, b3]` with `K = 2` becomes `[b1, b1, b2, b3, b3]`.
///
/// The result carries no wavelength table (the mirrored bands would break
/// its ordering).
pub fn flip_pad_spectral(cube: &HsiCube, k: usize) -> Result<HsiCube, HsiError> {
    let bands = cube.bands();
    check_window(k, bands)?;
    let half = k / 2;
    let order: Vec<usize> = (0..half)
        .rev()
        .chain(0..bands)
        .chain((bands - half..bands).rev())
        .collect();
    cube.select_bands(&order)
}

/// Target band and its `K`-band window for original band `band` of a
/// flip-padded cube: the window is padded bands `[band, band + K)` as an
/// `M×N×K` tensor, the target is padded band `band + K/2` as `M×N`.
pub fn spectral_window(padded: &HsiCube, band: usize, k: usize) -> Result<(Tensor, Tensor), HsiError> {
    let (rows, cols) = (padded.rows(), padded.cols());
    let (target, window) = window_patch(padded, band, k, (0, 0), (rows, cols))?;
    Ok((
        Tensor::new([rows, cols], target).expect("target shape"),
        Tensor::new([rows, cols, k], window).expect("window shape"),
    ))
}

/// Like [`spectral_window`] restricted to the `size` patch at `origin`.
pub fn spectral_patch(
    padded: &HsiCube,
    band: usize,
    k: usize,
    origin: (usize, usize),
    size: (usize, usize),
) -> Result<(Tensor, Tensor), HsiError> {
    let (h, w) = size;
    if origin.0 + h > padded.rows() || origin.1 + w > padded.cols() {
        return Err(HsiError::PatchTooLarge {
            size: h.max(w),
            rows: padded.rows(),
            cols: padded.cols(),
        });
    }
    let (target, window) = window_patch(padded, band, k, origin, size)?;
    Ok((
        Tensor::new([h, w], target).expect("target shape"),
        Tensor::new([h, w, k], window).expect("window shape"),
    ))
}

/// Crops the target band and its spectral window from a flip-padded cube.
fn window_patch(
    padded: &HsiCube,
    band: usize,
    k: usize,
    origin: (usize, usize),
    size: (usize, usize),
) -> Result<(Vec<f64>, Vec<f64>), HsiError> {
    if k == 0 || !k.is_multiple_of(2) {
        return Err(HsiError::OddWindow(k));
    }
    let bands = padded.bands().checked_sub(k).filter(|&b| b > 0).ok_or(
        HsiError::WindowTooLarge {
            half: k / 2,
            bands: padded.bands(),
        },
    )?;
    if band >= bands {
        return Err(HsiError::BandOutOfRange { band, bands });
    }
    let (r0, c0) = origin;
    let (h, w) = size;
    let mut window = vec![0.0; h * w * k];
    for j in 0..k {
        let plane = padded.band(band + j);
        for r in 0..h {
            let row = &plane[(r0 + r) * padded.cols() + c0..][..w];
            for (c, &v) in row.iter().enumerate() {
                window[(r * w + c) * k + j] = v;
            }
        }
    }
    let target = (0..h * w).map(|p| window[p * k + k / 2]).collect();
    Ok((target, window))
}

fn axis_origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|o| o + size <= extent)
        .collect();
    if let Some(&last) = v.last() {
        if last + size < extent {
            v.push(extent - size);
        }
    }
    v
}

/// Raster-scan origins at multiples of `stride`; a last row/column origin is
/// clamped to the image edge so every pixel is covered.
pub fn patch_origins(
    rows: usize,
    cols: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>, HsiError> {
    if stride == 0 {
        return Err(HsiError::ZeroStride);
    }
    if size == 0 || size > rows || size > cols {
        return Err(HsiError::PatchTooLarge { size, rows, cols });
    }
    let ys = axis_origins(rows, size, stride);
    let xs = axis_origins(cols, size, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect())
}

pub fn extract_patches(
    cube: &HsiCube,
    size: usize,
    stride: usize,
) -> Result<Vec<((usize, usize), HsiCube)>, HsiError> {
    patch_origins(cube.rows(), cube.cols(), size, stride)?
        .into_iter()
        .map(|(r, c)| Ok(((r, c), cube.crop(r, c, size, size)?)))
        .collect()
}

/// Counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn quarter_turns(self) -> usize {
        self as usize
    }

    pub fn degrees(self) -> u32 {
        90 * self as u32
    }

    pub fn then(self, other: Rotation) -> Rotation {
        Self::ALL[(self.quarter_turns() + other.quarter_turns()) % 4]
    }
}

/// Rotates the spatial axes of an `n×n` or `n×n×C` tensor.
fn rotate(t: &Tensor, rot: Rotation) -> Tensor {
    let n = t.shape()[0];
    let ch = t.shape().get(2).copied().unwrap_or(1);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = match rot {
                Rotation::R0 => (r, c),
                Rotation::R90 => (c, n - 1 - r),
                Rotation::R180 => (n - 1 - r, n - 1 - c),
                Rotation::R270 => (n - 1 - c, r),
            };
            let (d, s) = ((r * n + c) * ch, (sr * n + sc) * ch);
            out[d..d + ch].copy_from_slice(&src[s..s + ch]);
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("rotation keeps shape")
}

/// One training pair: the noisy target band, its noisy spectral window and
/// the clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// `h×w` noisy target band.
    pub y_s: Tensor,
    /// `h×w×K` noisy spectral window; the target sits at channel `K/2`.
    pub y_lambda: Tensor,
    /// `h×w` clean target band.
    pub x_s: Tensor,
    pub band_index: usize,
    pub patch_origin: (usize, usize),
    pub rotation: Rotation,
    pub wavelength_um: Option<f64>,
}

impl PatchSample {
    pub fn rotated(&self, rot: Rotation) -> Result<Self, HsiError> {
        let s = self.y_s.shape();
        if s[0] != s[1] {
            return Err(HsiError::NonSquare {
                rows: s[0],
                cols: s[1],
            });
        }
        Ok(Self {
            y_s: rotate(&self.y_s, rot),
            y_lambda: rotate(&self.y_lambda, rot),
            x_s: rotate(&self.x_s, rot),
            rotation: self.rotation.then(rot),
            ..self.clone()
        })
    }
}

/// The four rotations (0°, 90°, 180°, 270°) of a sample.
pub fn rotations(sample: &PatchSample) -> Result<[PatchSample; 4], HsiError> {
    Ok([
        sample.rotated(Rotation::R0)?,
        sample.rotated(Rotation::R90)?,
        sample.rotated(Rotation::R180)?,
        sample.rotated(Rotation::R270)?,
    ])
}

/// Indexable stream of every (patch, band, rotation) sample of a cube pair.
///
/// Sample `i` is patch `i / (4B)`, band `(i / 4) % B`, rotation `i % 4`;
/// samples are materialized on demand.
#[derive(Debug, Clone)]
pub struct SampleSet {
    noisy_padded: HsiCube,
    clean: HsiCube,
    k: usize,
    size: usize,
    origins: Vec<(usize, usize)>,
}

impl SampleSet {
    pub fn new(
        noisy: &HsiCube,
        clean: &HsiCube,
        k: usize,
        size: usize,
        stride: usize,
    ) -> Result<Self, HsiError> {
        let dims = |c: &HsiCube| (c.rows(), c.cols(), c.bands());
        if dims(noisy) != dims(clean) {
            return Err(HsiError::DimensionMismatch {
                rows: clean.rows(),
                cols: clean.cols(),
                bands: clean.bands(),
                expected: clean.data().len(),
                found: noisy.data().len(),
            });
        }
        let origins = patch_origins(noisy.rows(), noisy.cols(), size, stride)?;
        Ok(Self {
            noisy_padded: flip_pad_spectral(noisy, k)?,
            clean: clean.clone(),
            k,
            size,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len() * self.clean.bands() * 4
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_count(&self) -> usize {
        self.origins.len()
    }

    pub fn get(&self, index: usize) -> PatchSample {
        assert!(index < self.len(), "sample {index} out of range");
        let bands = self.clean.bands();
        let rotation = Rotation::ALL[index % 4];
        let band = (index / 4) % bands;
        let origin = self.origins[index / (4 * bands)];
        let s = self.size;
        let (target, window) =
            window_patch(&self.noisy_padded, band, self.k, origin, (s, s)).expect("valid window");
        let clean = self.clean.band(band);
        let x_s = (0..s)
            .flat_map(|r| {
                let start = (origin.0 + r) * self.clean.cols() + origin.1;
                clean[start..start + s].iter().copied()
            })
            .collect();
        let sample = PatchSample {
            y_s: Tensor::new([s, s], target).expect("shape"),
            y_lambda: Tensor::new([s, s, self.k], window).expect("shape"),
            x_s: Tensor::new([s, s], x_s).expect("shape"),
            band_index: band,
            patch_origin: origin,
            rotation: Rotation::R0,
            wavelength_um: self.clean.wavelength(band),
        };
        sample.rotated(rotation).expect("square patch")
    }

    /// Every sample index, shuffled deterministically by `seed`.
    pub fn shuffled_indices(&self, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Band `b` holds the constant `b + 1` so band identity is visible.
    fn labelled(rows: usize, cols: usize, bands: usize) -> HsiCube {
        HsiCube::from_fn(rows, cols, bands, |_, _, b| (b + 1) as f64).unwrap()
    }

    fn band_labels(cube: &HsiCube) -> Vec<f64> {
        (0..cube.bands()).map(|b| cube.band(b)[0]).collect()
    }

    #[test]
    fn scaling_maps_extremes_to_unit_interval() {
        let cube = HsiCube::new(1, 3, 1, vec![0.0, 127.5, 255.0], None).unwrap();
        assert_eq!(scale_to_unit(&cube).unwrap().data(), &[0.0, 0.5, 1.0]);
        let unit = HsiCube::new(1, 3, 1, vec![0.0, 0.3, 1.0], None).unwrap();
        assert_eq!(scale_to_unit(&unit).unwrap(), unit);
        let flat = HsiCube::new(1, 2, 1, vec![2.0, 2.0], None).unwrap();
        assert!(matches!(scale_to_unit(&flat), Err(HsiError::ConstantCube)));
    }

    #[test]
    fn flip_padding_orders() {
        let p = flip_pad_spectral(&labelled(2, 2, 3), 2).unwrap();
        assert_eq!(band_labels(&p), vec![1.0, 1.0, 2.0, 3.0, 3.0]);
        let p = flip_pad_spectral(&labelled(2, 2, 5), 4).unwrap();
        assert_eq!(band_labels(&p), vec![2.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 4.0]);
        assert!(matches!(
            flip_pad_spectral(&labelled(2, 2, 1), 4),
            Err(HsiError::WindowTooLarge { .. })
        ));
        assert!(matches!(flip_pad_spectral(&labelled(2, 2, 4), 3), Err(HsiError::OddWindow(3))));
    }

    #[test]
    fn windows_center_the_target_band() {
        let cube = labelled(2, 2, 3);
        let p = flip_pad_spectral(&cube, 2).unwrap();
        let (ys, yl) = spectral_window(&p, 0, 2).unwrap();
        assert_eq!(&yl.data()[..2], &[1.0, 1.0]);
        assert_eq!(ys.data()[0], 1.0);

        let cube = labelled(2, 2, 5);
        let p = flip_pad_spectral(&cube, 4).unwrap();
        let (ys, yl) = spectral_window(&p, 2, 4).unwrap();
        assert_eq!(&yl.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ys.data()[0], 3.0);
        assert!(matches!(spectral_window(&p, 5, 4), Err(HsiError::BandOutOfRange { .. })));
    }

    #[test]
    fn patch_grid_clamps_last_origin() {
        assert_eq!(patch_origins(20, 20, 20, 10).unwrap(), vec![(0, 0)]);
        assert_eq!(
            patch_origins(30, 30, 20, 10).unwrap(),
            vec![(0, 0), (0, 10), (10, 0), (10, 10)]
        );
        assert_eq!(
            patch_origins(25, 20, 20, 10).unwrap(),
            vec![(0, 0), (5, 0)]
        );
        assert!(patch_origins(10, 30, 20, 10).is_err());
        assert_eq!(extract_patches(&labelled(30, 30, 2), 20, 10).unwrap().len(), 4);
    }

    fn sample(n: usize, k: usize) -> PatchSample {
        let cube = HsiCube::from_fn(n, n, 6, |r, c, b| (r * 100 + c * 10 + b) as f64).unwrap();
        let clean = cube.map(|v| v + 0.5);
        SampleSet::new(&cube, &clean, k, n, n).unwrap().get(0)
    }

    #[test]
    fn rotation_group_laws() {
        let s = sample(5, 4);
        let twice = s.rotated(Rotation::R180).unwrap().rotated(Rotation::R180).unwrap();
        assert_eq!(twice.y_lambda, s.y_lambda);
        assert_eq!(twice.rotation, Rotation::R0);
        let mut q = s.clone();
        for _ in 0..4 {
            q = q.rotated(Rotation::R90).unwrap();
        }
        assert_eq!((q.y_s, q.x_s), (s.y_s.clone(), s.x_s.clone()));
        for r in rotations(&s).unwrap() {
            let k = 4;
            let mid: Vec<f64> = r.y_lambda.data().iter().skip(k / 2).step_by(k).copied().collect();
            assert_eq!(mid, r.y_s.data());
        }
    }

    #[test]
    fn ninety_degrees_is_counter_clockwise() {
        let t = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // [[1,2],[3,4]] -> [[2,4],[1,3]]
        assert_eq!(rotate(&t, Rotation::R90).data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn non_square_rotation_fails() {
        let mut s = sample(4, 2);
        s.y_s = Tensor::zeros([2, 8]);
        assert!(matches!(s.rotated(Rotation::R90), Err(HsiError::NonSquare { .. })));
    }

    #[test]
    fn sample_set_size_and_determinism() {
        let cube = HsiCube::from_fn(30, 30, 5, |r, c, b| (r + c * 2 + b * 3) as f64).unwrap();
        let set = SampleSet::new(&cube, &cube, 4, 20, 10).unwrap();
        assert_eq!(set.len(), 4 * 5 * 4);
        assert_eq!(set.shuffled_indices(3), set.shuffled_indices(3));
        assert_ne!(set.shuffled_indices(3), set.shuffled_indices(4));
        let s = set.get(4 * 5 + 4 * 2 + 1);
        assert_eq!((s.patch_origin, s.band_index, s.rotation), ((0, 10), 2, Rotation::R90));
    }
}
