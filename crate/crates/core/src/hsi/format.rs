//! The `.hcube` container.
//!
//! ```text
//! magic      8 bytes  "HCUBE\0v1"
//! rows       u32
//! cols       u32
//! bands      u32
//! dtype      u32      0 = f32, 1 = f64
//! has_wl     u8       1 if a wavelength table follows
//! wl         bands × f64 (micrometers), only if has_wl == 1
//! values     rows·cols·bands values of `dtype`, band-sequential,
//!            row-major within a band
//! ```
//!
//! Every multi-byte field is little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{HsiCube, HsiError};

pub const MAGIC: &[u8; 8] = b"HCUBE\0v1";
const HEADER_LEN: usize = 8 + 4 * 4 + 1;

/// On-disk value type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn write_cube<W: Write>(cube: &HsiCube, dtype: Dtype, mut out: W) -> Result<(), HsiError> {
    let mut buf = Vec::with_capacity(HEADER_LEN + cube.data().len() * dtype.width());
    buf.extend_from_slice(MAGIC);
    for v in [cube.rows(), cube.cols(), cube.bands()] {
        let v = u32::try_from(v).map_err(|_| {
            HsiError::InvalidDims {
                rows: cube.rows(),
                cols: cube.cols(),
                bands: cube.bands(),
            }
        })?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&dtype.code().to_le_bytes());
    match cube.wavelengths() {
        Some(wl) => {
            buf.push(1);
            for w in wl {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
        None => buf.push(0),
    }
    match dtype {
        Dtype::F32 => cube
            .data()
            .iter()
            .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => cube
            .data()
            .iter()
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_cube<R: Read>(mut input: R) -> Result<HsiCube, HsiError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse(&bytes)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>, dtype: Dtype) -> Result<(), HsiError> {
    let mut buf = Vec::new();
    write_cube(cube, dtype, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube, HsiError> {
    parse(&fs::read(path)?)
}

fn parse(bytes: &[u8]) -> Result<HsiCube, HsiError> {
    if bytes.len() < MAGIC.len() {
        return Err(HsiError::TruncatedHeader);
    }
    if &bytes[..8] != MAGIC {
        return Err(HsiError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(HsiError::TruncatedHeader);
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let (rows, cols, bands) = (u32_at(8), u32_at(12), u32_at(16));
    let dtype = match u32_at(20) {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(HsiError::UnsupportedDtype(other)),
    };
    let has_wl = bytes[24];
    let expected = (rows as usize)
        .checked_mul(cols as usize)
        .and_then(|v| v.checked_mul(bands as usize))
        .filter(|v| v.checked_mul(dtype.width()).is_some())
        .ok_or(HsiError::DimensionOverflow(rows, cols, bands))?;

    let mut at = HEADER_LEN;
    let wavelengths = match has_wl {
        0 => None,
        _ => {
            let need = bands as usize * 8;
            if bytes.len() < at + need {
                return Err(HsiError::TruncatedHeader);
            }
            let wl = bytes[at..at + need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            at += need;
            Some(wl)
        }
    };

    let payload = &bytes[at..];
    let width = dtype.width();
    if !payload.len().is_multiple_of(width) {
        return Err(HsiError::TruncatedPayload(payload.len() % width));
    }
    let found = payload.len() / width;
    if found != expected {
        return Err(HsiError::DimensionMismatch {
            rows: rows as usize,
            cols: cols as usize,
            bands: bands as usize,
            expected,
            found,
        });
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    HsiCube::new(rows as usize, cols as usize, bands as usize, data, wavelengths)
}
