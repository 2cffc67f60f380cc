//! Hyperspectral cubes, the `.hcube` container and the band-scanning
//! sample pipeline.

mod cube;
mod format;
mod pipeline;
pub mod synthetic;

pub use cube::HsiCube;
pub use format::{load_cube, read_cube, save_cube, write_cube, Dtype, MAGIC};
pub use pipeline::{
    extract_patches, flip_pad_spectral, patch_origins, rotations, scale_to_unit, spectral_patch, spectral_window,
    PatchSample, Rotation, SampleSet,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("invalid cube dimensions {rows}×{cols}×{bands}")]
    InvalidDims {
        rows: usize,
        cols: usize,
        bands: usize,
    },
    #[error("cube of {rows}×{cols}×{bands} needs {expected} values, found {found}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        bands: usize,
        expected: usize,
        found: usize,
    },
    #[error("cube dimensions {0}×{1}×{2} overflow the addressable size")]
    DimensionOverflow(u32, u32, u32),
    #[error("value at flat index {0} is not finite")]
    NonFinite(usize),
    #[error("{found} wavelengths given for {bands} bands")]
    WavelengthCount { bands: usize, found: usize },
    #[error("wavelengths must be finite and strictly increasing")]
    WavelengthOrder,
    #[error("not an .hcube file (bad magic)")]
    BadMagic,
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload: {0} trailing bytes do not form a whole value")]
    TruncatedPayload(usize),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("cube is constant; scaling to [0, 1] is undefined")]
    ConstantCube,
    #[error("spectral window size K={0} must be even and positive")]
    OddWindow(usize),
    #[error("K/2 = {half} exceeds the band count {bands}")]
    WindowTooLarge { half: usize, bands: usize },
    #[error("band {band} out of range for {bands} bands")]
    BandOutOfRange { band: usize, bands: usize },
    #[error("patch size {size} does not fit a {rows}×{cols} image")]
    PatchTooLarge {
        size: usize,
        rows: usize,
        cols: usize,
    },
    #[error("patch stride must be positive")]
    ZeroStride,
    #[error("rotation needs square patches, got {rows}×{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
