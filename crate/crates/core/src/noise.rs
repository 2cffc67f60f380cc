//! Seeded generators for the degradation `Y = X + S + N`.
//!
//! `N` is dense, band-wise non-i.i.d. Gaussian noise; `S` is sparse: stripes,
//! dead columns and salt-and-pepper impulses on a random subset of bands.
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, noise kind, band)`, so bands can be generated independently and
//! in parallel while the output stays a pure function of the seed.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::hsi::HsiCube;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("{name}: range [{lo}, {hi}] is empty or invalid")]
    Range { name: &'static str, lo: f64, hi: f64 },
    #[error("band fraction {0} is outside (0, 1]")]
    BandFraction(f64),
    #[error("unknown noise case {0:?} (expected 1-5)")]
    UnknownCase(String),
}

/// The five simulated degradation cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseCase {
    /// Non-i.i.d. Gaussian noise on every band.
    Gaussian,
    /// Gaussian plus stripes on a third of the bands.
    Stripes,
    /// Gaussian plus dead columns on a third of the bands.
    Deadlines,
    /// Gaussian plus impulse noise on a third of the bands.
    Impulse,
    /// Gaussian plus a random non-empty mix of stripes, dead columns and
    /// impulses on every band.
    Mixture,
}

impl NoiseCase {
    pub fn number(self) -> u8 {
        match self {
            NoiseCase::Gaussian => 1,
            NoiseCase::Stripes => 2,
            NoiseCase::Deadlines => 3,
            NoiseCase::Impulse => 4,
            NoiseCase::Mixture => 5,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Some(match n {
            1 => NoiseCase::Gaussian,
            2 => NoiseCase::Stripes,
            3 => NoiseCase::Deadlines,
            4 => NoiseCase::Impulse,
            5 => NoiseCase::Mixture,
            _ => return None,
        })
    }
}

impl fmt::Display for NoiseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for NoiseCase {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.strip_prefix("case").unwrap_or(&t).trim();
        t.parse::<u8>()
            .ok()
            .and_then(NoiseCase::from_number)
            .ok_or_else(|| NoiseError::UnknownCase(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub case: NoiseCase,
    pub seed: u64,
    /// Gaussian standard deviation range on the 0–255 scale.
    pub gaussian_sigma_range: (f64, f64),
    /// Fraction of bands receiving sparse noise in cases 2–4.
    pub band_fraction: f64,
    /// Fraction of columns hit by stripes or dead lines.
    pub stripe_col_fraction: (f64, f64),
    /// Magnitude range of the per-column stripe bias (sign is random).
    pub stripe_amplitude: (f64, f64),
    pub impulse_density_range: (f64, f64),
    /// Clip the noisy cube to `[0, 1]`; breaks the exact additive model.
    pub clip_output: bool,
}

impl NoiseSpec {
    pub fn new(case: NoiseCase, seed: u64) -> Self {
        Self {
            case,
            seed,
            gaussian_sigma_range: (10.0, 70.0),
            band_fraction: 1.0 / 3.0,
            stripe_col_fraction: (0.05, 0.15),
            stripe_amplitude: (0.2, 0.8),
            impulse_density_range: (0.10, 0.70),
            clip_output: false,
        }
    }

    /// A spec that leaves the cube untouched.
    pub fn silent(seed: u64) -> Self {
        Self {
            gaussian_sigma_range: (0.0, 0.0),
            ..Self::new(NoiseCase::Gaussian, seed)
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        let check = |name, (lo, hi): (f64, f64), min: f64, max: f64| {
            if lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min && hi <= max {
                Ok(())
            } else {
                Err(NoiseError::Range { name, lo, hi })
            }
        };
        check("gaussian_sigma_range", self.gaussian_sigma_range, 0.0, f64::MAX)?;
        check("stripe_col_fraction", self.stripe_col_fraction, 0.0, 1.0)?;
        if self.stripe_col_fraction.0 <= 0.0 {
            return Err(NoiseError::Range {
                name: "stripe_col_fraction",
                lo: self.stripe_col_fraction.0,
                hi: self.stripe_col_fraction.1,
            });
        }
        check("stripe_amplitude", self.stripe_amplitude, 0.0, f64::MAX)?;
        check("impulse_density_range", self.impulse_density_range, 0.0, 1.0)?;
        if !(self.band_fraction > 0.0 && self.band_fraction <= 1.0) {
            return Err(NoiseError::BandFraction(self.band_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StripeLog {
    pub fraction: f64,
    /// `(column, additive bias)`, sorted by column.
    pub columns: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeadlineLog {
    pub fraction: f64,
    /// Zeroed columns, sorted.
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImpulseLog {
    pub density: f64,
    /// `(row-major pixel index, replacement value)`, sorted by pixel.
    pub pixels: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BandLog {
    pub band: usize,
    /// Gaussian standard deviation on the `[0, 1]` scale.
    pub gaussian_sigma: Option<f64>,
    pub stripes: Option<StripeLog>,
    pub deadlines: Option<DeadlineLog>,
    pub impulse: Option<ImpulseLog>,
}

impl BandLog {
    pub fn types(&self) -> Vec<&'static str> {
        let mut t = Vec::new();
        if self.gaussian_sigma.is_some() {
            t.push("GN");
        }
        if self.stripes.is_some() {
            t.push("SN");
        }
        if self.deadlines.is_some() {
            t.push("DN");
        }
        if self.impulse.is_some() {
            t.push("IN");
        }
        t
    }

    pub fn has_sparse(&self) -> bool {
        self.stripes.is_some() || self.deadlines.is_some() || self.impulse.is_some()
    }
}

/// Everything drawn while corrupting a cube, per band.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLog {
    pub case: NoiseCase,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub bands: Vec<BandLog>,
    pub clipped: bool,
}

impl NoiseLog {
    fn empty(spec: &NoiseSpec, cube: &HsiCube) -> Self {
        Self {
            case: spec.case,
            seed: spec.seed,
            rows: cube.rows(),
            cols: cube.cols(),
            bands: (0..cube.bands())
                .map(|band| BandLog {
                    band,
                    ..BandLog::default()
                })
                .collect(),
            clipped: false,
        }
    }

    /// Human-readable `key=value` text. Impulse pixels are summarized by
    /// count; stripe and dead columns are listed.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "case={}", self.case);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "rows={}", self.rows);
        let _ = writeln!(s, "cols={}", self.cols);
        let _ = writeln!(s, "bands={}", self.bands.len());
        let _ = writeln!(s, "clipped={}", self.clipped);
        for b in &self.bands {
            let i = b.band;
            let _ = writeln!(s, "band.{i}.types={}", b.types().join("+"));
            if let Some(sigma) = b.gaussian_sigma {
                let _ = writeln!(s, "band.{i}.gaussian_sigma={sigma}");
            }
            if let Some(st) = &b.stripes {
                let cols: Vec<String> = st.columns.iter().map(|(c, v)| format!("{c}:{v}")).collect();
                let _ = writeln!(s, "band.{i}.stripe_fraction={}", st.fraction);
                let _ = writeln!(s, "band.{i}.stripe_columns={}", cols.join(","));
            }
            if let Some(dl) = &b.deadlines {
                let cols: Vec<String> = dl.columns.iter().map(|c| c.to_string()).collect();
                let _ = writeln!(s, "band.{i}.dead_fraction={}", dl.fraction);
                let _ = writeln!(s, "band.{i}.dead_columns={}", cols.join(","));
            }
            if let Some(im) = &b.impulse {
                let _ = writeln!(s, "band.{i}.impulse_density={}", im.density);
                let _ = writeln!(s, "band.{i}.impulse_count={}", im.pixels.len());
            }
        }
        s
    }
}

// Stream tags for sub-seed derivation.
const GAUSSIAN: u64 = 1;
const STRIPES: u64 = 2;
const DEADLINES: u64 = 3;
const IMPULSE: u64 = 4;
const SELECTION: u64 = 5;
const MIXTURE: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for one `(stream, band)` pair.
pub fn sub_seed(seed: u64, stream: u64, band: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ band)
}

fn stream(seed: u64, stream: u64, band: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, stream, band as u64))
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Gaussian noise field of one band: draws the band's sigma (0–255 scale,
/// divided by 255) and then `len` zero-mean samples.
pub fn gaussian_band(seed: u64, band: usize, sigma_range: (f64, f64), len: usize) -> (f64, Vec<f64>) {
    let mut rng = stream(seed, GAUSSIAN, band);
    let sigma = uniform(&mut rng, sigma_range) / 255.0;
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    let field = (0..len).map(|_| normal.sample(&mut rng)).collect();
    (sigma, field)
}

/// Number of affected columns for a drawn fraction, kept inside the
/// configured fraction range whenever the column count allows it.
fn column_count(fraction: f64, cols: usize, (lo, hi): (f64, f64)) -> usize {
    let n = cols as f64;
    let min = (lo * n - 1e-9).ceil().max(1.0) as usize;
    let max = (hi * n + 1e-9).floor() as usize;
    let want = (fraction * n).round() as usize;
    if min <= max {
        want.clamp(min, max)
    } else {
        min.min(cols)
    }
}

fn pick_columns<R: Rng>(rng: &mut R, cols: usize, spec: &NoiseSpec) -> (f64, Vec<usize>) {
    let fraction = uniform(rng, spec.stripe_col_fraction);
    let count = column_count(fraction, cols, spec.stripe_col_fraction);
    let mut picked = sample(rng, cols, count).into_vec();
    picked.sort_unstable();
    (fraction, picked)
}

fn apply_gaussian(band: &mut [f64], log: &mut BandLog, spec: &NoiseSpec) {
    let (sigma, field) = gaussian_band(spec.seed, log.band, spec.gaussian_sigma_range, band.len());
    band.iter_mut().zip(&field).for_each(|(v, n)| *v += n);
    log.gaussian_sigma = Some(sigma);
}

fn apply_stripes(band: &mut [f64], cols: usize, log: &mut BandLog, spec: &NoiseSpec) {
    let mut rng = stream(spec.seed, STRIPES, log.band);
    let (fraction, picked) = pick_columns(&mut rng, cols, spec);
    let columns: Vec<(usize, f64)> = picked
        .into_iter()
        .map(|c| {
            let magnitude = uniform(&mut rng, spec.stripe_amplitude);
            let bias = if rng.random_bool(0.5) { magnitude } else { -magnitude };
            (c, bias)
        })
        .collect();
    for row in band.chunks_exact_mut(cols) {
        for &(c, bias) in &columns {
            row[c] += bias;
        }
    }
    log.stripes = Some(StripeLog { fraction, columns });
}

fn apply_deadlines(band: &mut [f64], cols: usize, log: &mut BandLog, spec: &NoiseSpec) {
    let mut rng = stream(spec.seed, DEADLINES, log.band);
    let (fraction, columns) = pick_columns(&mut rng, cols, spec);
    for row in band.chunks_exact_mut(cols) {
        for &c in &columns {
            row[c] = 0.0;
        }
    }
    log.deadlines = Some(DeadlineLog { fraction, columns });
}

fn apply_impulse(band: &mut [f64], log: &mut BandLog, spec: &NoiseSpec) {
    let mut rng = stream(spec.seed, IMPULSE, log.band);
    let density = uniform(&mut rng, spec.impulse_density_range);
    let mut pixels = Vec::new();
    for (p, v) in band.iter_mut().enumerate() {
        if rng.random_bool(density) {
            let value = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            *v = value;
            pixels.push((p, value));
        }
    }
    log.impulse = Some(ImpulseLog { density, pixels });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Plan {
    gaussian: bool,
    stripes: bool,
    deadlines: bool,
    impulse: bool,
}

/// `round(B · fraction)` distinct bands, uniformly without replacement.
fn select_bands(spec: &NoiseSpec, bands: usize, tag: u64) -> Vec<bool> {
    let mut rng = stream(spec.seed, SELECTION + 16 * tag, 0);
    let count = ((bands as f64 * spec.band_fraction).round() as usize).min(bands);
    let mut chosen = vec![false; bands];
    for b in sample(&mut rng, bands, count) {
        chosen[b] = true;
    }
    chosen
}

fn run(cube: &HsiCube, spec: &NoiseSpec, plans: &[Plan]) -> Result<(HsiCube, NoiseLog), NoiseError> {
    spec.validate()?;
    let mut log = NoiseLog::empty(spec, cube);
    let cols = cube.cols();
    let mut data = cube.data().to_vec();
    data.par_chunks_mut(cube.band_len())
        .zip(log.bands.par_iter_mut())
        .zip(plans.par_iter())
        .for_each(|((band, blog), plan)| {
            if plan.gaussian {
                apply_gaussian(band, blog, spec);
            }
            if plan.stripes {
                apply_stripes(band, cols, blog, spec);
            }
            if plan.deadlines {
                apply_deadlines(band, cols, blog, spec);
            }
            if plan.impulse {
                apply_impulse(band, blog, spec);
            }
        });
    if spec.clip_output {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        log.clipped = true;
    }
    let out = HsiCube::from_parts_unchecked(
        cube.rows(),
        cube.cols(),
        cube.bands(),
        data,
        cube.wavelengths().map(<[f64]>::to_vec),
    );
    Ok((out, log))
}

fn sparse_plan(spec: &NoiseSpec, bands: usize, make: impl Fn(bool) -> Plan, tag: u64) -> Vec<Plan> {
    select_bands(spec, bands, tag).into_iter().map(make).collect()
}

/// Non-i.i.d. Gaussian noise on every band.
pub fn add_gaussian_noniid(cube: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseLog), NoiseError> {
    let plan = Plan {
        gaussian: true,
        stripes: false,
        deadlines: false,
        impulse: false,
    };
    run(cube, spec, &vec![plan; cube.bands()])
}

/// Stripes on `round(B/3)` random bands (no Gaussian component).
pub fn add_stripes(cube: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseLog), NoiseError> {
    let plans = sparse_plan(spec, cube.bands(), |on| Plan {
        gaussian: false,
        stripes: on,
        deadlines: false,
        impulse: false,
    }, STRIPES);
    run(cube, spec, &plans)
}

/// Dead (zeroed) columns on `round(B/3)` random bands.
pub fn add_deadlines(cube: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseLog), NoiseError> {
    let plans = sparse_plan(spec, cube.bands(), |on| Plan {
        gaussian: false,
        stripes: false,
        deadlines: on,
        impulse: false,
    }, DEADLINES);
    run(cube, spec, &plans)
}

/// Salt-and-pepper impulses on `round(B/3)` random bands.
pub fn add_impulse(cube: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseLog), NoiseError> {
    let plans = sparse_plan(spec, cube.bands(), |on| Plan {
        gaussian: false,
        stripes: false,
        deadlines: false,
        impulse: on,
    }, IMPULSE);
    run(cube, spec, &plans)
}

/// Applies the case in `spec`: Gaussian noise on every band plus the case's
/// sparse component. Within a band the order is Gaussian, stripes, dead
/// columns, impulses.
pub fn corrupt(cube: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseLog), NoiseError> {
    let bands = cube.bands();
    let plans: Vec<Plan> = match spec.case {
        NoiseCase::Gaussian => vec![
            Plan {
                gaussian: true,
                stripes: false,
                deadlines: false,
                impulse: false
            };
            bands
        ],
        NoiseCase::Stripes | NoiseCase::Deadlines | NoiseCase::Impulse => {
            let case = spec.case;
            let tag = match case {
                NoiseCase::Stripes => STRIPES,
                NoiseCase::Deadlines => DEADLINES,
                _ => IMPULSE,
            };
            sparse_plan(spec, bands, |on| Plan {
                gaussian: true,
                stripes: on && case == NoiseCase::Stripes,
                deadlines: on && case == NoiseCase::Deadlines,
                impulse: on && case == NoiseCase::Impulse,
            }, tag)
        }
        NoiseCase::Mixture => (0..bands)
            .map(|b| {
                // uniform over the 7 non-empty subsets of {SN, DN, IN}
                let mask = stream(spec.seed, MIXTURE, b).random_range(1u8..=7);
                Plan {
                    gaussian: true,
                    stripes: mask & 1 != 0,
                    deadlines: mask & 2 != 0,
                    impulse: mask & 4 != 0,
                }
            })
            .collect(),
    };
    run(cube, spec, &plans)
}
