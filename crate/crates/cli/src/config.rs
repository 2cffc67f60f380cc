//! Flat `key = value` run configuration.
//!
//! Keys are dotted (`model.channels`, `train.lr`, ...). Blank lines and
//! text after `#` are ignored. Values are resolved in layers: the profile
//! defaults, then the config file, then `--set` pairs, then dedicated
//! flags.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use smcnn_core::hsi::Dtype;
use smcnn_core::{ModelConfig, NoiseCase, NoiseSpec, TrainConfig, Variant};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Small model and short schedule for CPU runs.
    Desk,
    /// Full-size model and the published training schedule.
    Paper,
}

impl FromStr for Profile {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(CliError::Config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IoPaths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub clean: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub threads: Option<usize>,
    pub noise: NoiseSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub io: IoPaths,
    pub dtype: Dtype,
    noise_seed: Option<u64>,
    train_seed: Option<u64>,
}

/// One `key = value` assignment and where it came from, for messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Parses config text into entries. Duplicate keys are rejected.
pub fn parse(text: &str, source: &str) -> Result<Vec<Entry>, CliError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let origin = format!("{source}:{}", n + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}: expected key = value, got {line:?}")))?;
        let key = key.trim();
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(CliError::Config(format!(
                "{origin}: duplicate key {key:?} (first set at {})",
                prev.origin
            )));
        }
        entries.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            origin,
        });
    }
    Ok(entries)
}

/// Splits a `--set key=value` argument.
pub fn parse_assignment(arg: &str) -> Result<Entry, CliError> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {arg:?}")))?;
    Ok(Entry {
        key: key.trim().to_string(),
        value: value.trim().to_string(),
        origin: "--set".to_string(),
    })
}

fn value<T: FromStr>(e: &Entry) -> Result<T, CliError> {
    e.value
        .parse()
        .map_err(|_| CliError::Config(format!("{}: invalid value {:?} for {}", e.origin, e.value, e.key)))
}

fn optional<T: FromStr>(e: &Entry) -> Result<Option<T>, CliError> {
    match e.value.as_str() {
        "" | "none" | "auto" => Ok(None),
        _ => value(e).map(Some),
    }
}

fn path(e: &Entry) -> Option<PathBuf> {
    (!e.value.is_empty()).then(|| PathBuf::from(&e.value))
}

fn opt_text<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_else(|| "none".to_string())
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (model, train) = match profile {
            Profile::Desk => (ModelConfig::desk(), TrainConfig::desk()),
            Profile::Paper => (ModelConfig::default(), TrainConfig::default()),
        };
        Self {
            profile,
            seed: 0,
            threads: None,
            noise: NoiseSpec::new(NoiseCase::Gaussian, 0),
            model,
            train,
            io: IoPaths::default(),
            dtype: Dtype::F64,
            noise_seed: None,
            train_seed: None,
        }
    }

    /// Builds the configuration from layered entries. `profile` entries
    /// are honoured in any layer; the last one wins.
    pub fn resolve(layers: &[Entry]) -> Result<Self, CliError> {
        let profile = match layers.iter().rev().find(|e| e.key == "profile") {
            Some(e) => e.value.parse()?,
            None => Profile::Desk,
        };
        let mut cfg = Self::for_profile(profile);
        for e in layers.iter().filter(|e| e.key != "profile") {
            cfg.apply(e)?;
        }
        cfg.noise.seed = cfg.noise_seed.unwrap_or(cfg.seed);
        cfg.train.seed = cfg.train_seed.unwrap_or(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, e: &Entry) -> Result<(), CliError> {
        let (n, m, t) = (&mut self.noise, &mut self.model, &mut self.train);
        match e.key.as_str() {
            "seed" => self.seed = value(e)?,
            "threads" => self.threads = optional(e)?,

            "noise.case" => {
                n.case = e
                    .value
                    .parse()
                    .map_err(|err| CliError::Config(format!("{}: {err}", e.origin)))?
            }
            "noise.seed" => self.noise_seed = optional(e)?,
            "noise.sigma_min" => n.gaussian_sigma_range.0 = value(e)?,
            "noise.sigma_max" => n.gaussian_sigma_range.1 = value(e)?,
            "noise.band_fraction" => n.band_fraction = value(e)?,
            "noise.stripe_fraction_min" => n.stripe_col_fraction.0 = value(e)?,
            "noise.stripe_fraction_max" => n.stripe_col_fraction.1 = value(e)?,
            "noise.stripe_amplitude_min" => n.stripe_amplitude.0 = value(e)?,
            "noise.stripe_amplitude_max" => n.stripe_amplitude.1 = value(e)?,
            "noise.impulse_density_min" => n.impulse_density_range.0 = value(e)?,
            "noise.impulse_density_max" => n.impulse_density_range.1 = value(e)?,
            "noise.clip" => n.clip_output = value(e)?,

            "model.variant" => {
                m.variant = e
                    .value
                    .parse::<Variant>()
                    .map_err(|err| CliError::Config(format!("{}: {err}", e.origin)))?
            }
            "model.k" => m.k = value(e)?,
            "model.channels" => m.channels = value(e)?,
            "model.n_ssmrb" => m.n_ssmrb = value(e)?,
            "model.skip_taps" => m.skip_taps = value(e)?,
            "model.skip_channels" => m.skip_channels = value(e)?,
            "model.branch_channels" => m.branch_channels = value(e)?,
            "model.mod_hidden" => m.mod_hidden = value(e)?,
            "model.patch_size" => m.patch_size = value(e)?,

            "train.lr" => t.lr = value(e)?,
            "train.batch" => t.batch = value(e)?,
            "train.epochs" => t.epochs = value(e)?,
            "train.max_steps" => t.max_steps = optional(e)?,
            "train.seed" => self.train_seed = optional(e)?,
            "train.validation_fraction" => t.validation_fraction = value(e)?,
            "train.stride" => t.stride = optional(e)?,
            "train.beta1" => t.adam.beta1 = value(e)?,
            "train.beta2" => t.adam.beta2 = value(e)?,
            "train.eps" => t.adam.eps = value(e)?,

            "io.input" => self.io.input = path(e),
            "io.output" => self.io.output = path(e),
            "io.clean" => self.io.clean = path(e),
            "io.checkpoint" => self.io.checkpoint = path(e),
            "io.out_dir" => self.io.out_dir = path(e),
            "io.log" => self.io.log = path(e),
            "io.dtype" => {
                self.dtype = match e.value.as_str() {
                    "f32" => Dtype::F32,
                    "f64" => Dtype::F64,
                    other => {
                        return Err(CliError::Config(format!(
                            "{}: io.dtype must be f32 or f64, got {other:?}",
                            e.origin
                        )))
                    }
                }
            }
            other => return Err(CliError::Config(format!("{}: unknown key {other:?}", e.origin))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        self.noise.validate().map_err(|e| CliError::Config(format!("noise: {e}")))?;
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value; parses back to the same config.
    pub fn to_text(&self) -> String {
        let (n, m, t) = (&self.noise, &self.model, &self.train);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("profile", self.profile.name().into());
        kv("seed", self.seed.to_string());
        kv("threads", opt_text(&self.threads));
        kv("noise.case", n.case.to_string());
        kv("noise.seed", n.seed.to_string());
        kv("noise.sigma_min", n.gaussian_sigma_range.0.to_string());
        kv("noise.sigma_max", n.gaussian_sigma_range.1.to_string());
        kv("noise.band_fraction", n.band_fraction.to_string());
        kv("noise.stripe_fraction_min", n.stripe_col_fraction.0.to_string());
        kv("noise.stripe_fraction_max", n.stripe_col_fraction.1.to_string());
        kv("noise.stripe_amplitude_min", n.stripe_amplitude.0.to_string());
        kv("noise.stripe_amplitude_max", n.stripe_amplitude.1.to_string());
        kv("noise.impulse_density_min", n.impulse_density_range.0.to_string());
        kv("noise.impulse_density_max", n.impulse_density_range.1.to_string());
        kv("noise.clip", n.clip_output.to_string());
        kv("model.variant", m.variant.to_string());
        kv("model.k", m.k.to_string());
        kv("model.channels", m.channels.to_string());
        kv("model.n_ssmrb", m.n_ssmrb.to_string());
        kv("model.skip_taps", m.skip_taps.to_string());
        kv("model.skip_channels", m.skip_channels.to_string());
        kv("model.branch_channels", m.branch_channels.to_string());
        kv("model.mod_hidden", m.mod_hidden.to_string());
        kv("model.patch_size", m.patch_size.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.batch", t.batch.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.max_steps", opt_text(&t.max_steps));
        kv("train.seed", t.seed.to_string());
        kv("train.validation_fraction", t.validation_fraction.to_string());
        kv("train.stride", opt_text(&t.stride));
        kv("train.beta1", t.adam.beta1.to_string());
        kv("train.beta2", t.adam.beta2.to_string());
        kv("train.eps", t.adam.eps.to_string());
        kv("io.input", path_text(&self.io.input));
        kv("io.output", path_text(&self.io.output));
        kv("io.clean", path_text(&self.io.clean));
        kv("io.checkpoint", path_text(&self.io.checkpoint));
        kv("io.out_dir", path_text(&self.io.out_dir));
        kv("io.log", path_text(&self.io.log));
        kv(
            "io.dtype",
            match self.dtype {
                Dtype::F32 => "f32",
                Dtype::F64 => "f64",
            }
            .into(),
        );
        s
    }
}
