use super::HsiError;
use crate::tensor::Tensor;

/// An `M×N×B` radiance cube stored band-sequentially (band, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<f64>,
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    /// `data` is band-sequential: index `(b·M + r)·N + c`.
    pub fn new(
        rows: usize,
        cols: usize,
        bands: usize,
        data: Vec<f64>,
        wavelengths: Option<Vec<f64>>,
    ) -> Result<Self, HsiError> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(HsiError::InvalidDims { rows, cols, bands });
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(bands))
            .ok_or(HsiError::InvalidDims { rows, cols, bands })?;
        if data.len() != expected {
            return Err(HsiError::DimensionMismatch {
                rows,
                cols,
                bands,
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(HsiError::NonFinite(i));
        }
        if let Some(wl) = &wavelengths {
            check_wavelengths(wl, bands)?;
        }
        Ok(Self {
            rows,
            cols,
            bands,
            data,
            wavelengths,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, HsiError> {
        let mut data = Vec::with_capacity(rows * cols * bands);
        for b in 0..bands {
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f(r, c, b));
                }
            }
        }
        Self::new(rows, cols, bands, data, None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn band_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn wavelength(&self, band: usize) -> Option<f64> {
        self.wavelengths.as_ref().map(|w| w[band])
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self, HsiError> {
        check_wavelengths(&wavelengths, self.bands)?;
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn without_wavelengths(mut self) -> Self {
        self.wavelengths = None;
        self
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[(band * self.rows + row) * self.cols + col]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.band_len();
        &self.data[band * n..(band + 1) * n]
    }

    /// The band as an `M×N` tensor.
    pub fn band_tensor(&self, band: usize) -> Tensor {
        Tensor::new([self.rows, self.cols], self.band(band).to_vec()).expect("band shape")
    }

    /// Spectrum of one pixel, in band order.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(row, col, b)).collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Spatial crop keeping every band and the wavelength metadata.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self, HsiError> {
        if height == 0 || width == 0 || row + height > self.rows || col + width > self.cols {
            return Err(HsiError::PatchTooLarge {
                size: height.max(width),
                rows: self.rows,
                cols: self.cols,
            });
        }
        let mut data = Vec::with_capacity(height * width * self.bands);
        for b in 0..self.bands {
            for r in row..row + height {
                let start = (b * self.rows + r) * self.cols + col;
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(Self {
            rows: height,
            cols: width,
            bands: self.bands,
            data,
            wavelengths: self.wavelengths.clone(),
        })
    }

    /// Cube made of the given bands of `self`, in order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<Self, HsiError> {
        let mut data = Vec::with_capacity(bands.len() * self.band_len());
        for &b in bands {
            if b >= self.bands {
                return Err(HsiError::BandOutOfRange {
                    band: b,
                    bands: self.bands,
                });
            }
            data.extend_from_slice(self.band(b));
        }
        Self::new(self.rows, self.cols, bands.len(), data, None)
    }

    /// Elementwise map; wavelengths are kept. Panics if `f` yields a
    /// non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        Self { data, ..self.clone() }
    }

    pub(crate) fn from_parts_unchecked(
        rows: usize,
        cols: usize,
        bands: usize,
        data: Vec<f64>,
        wavelengths: Option<Vec<f64>>,
    ) -> Self {
        debug_assert_eq!(data.len(), rows * cols * bands);
        Self {
            rows,
            cols,
            bands,
            data,
            wavelengths,
        }
    }
}

fn check_wavelengths(wl: &[f64], bands: usize) -> Result<(), HsiError> {
    if wl.len() != bands {
        return Err(HsiError::WavelengthCount {
            bands,
            found: wl.len(),
        });
    }
    if wl.iter().any(|v| !v.is_finite()) || wl.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HsiError::WavelengthOrder);
    }
    Ok(())
}
