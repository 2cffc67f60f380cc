use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Spectral self-modulation from the `K` neighboring bands.
    SmCnn,
    /// Modulation from a constant map of the target band's wavelength.
    WmCnn,
    /// One residual block; the modulation generator gets an extra
    /// pointwise path.
    SmCnnLite,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SmCnn, Variant::WmCnn, Variant::SmCnnLite];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SmCnn => "smcnn",
            Variant::WmCnn => "wmcnn",
            Variant::SmCnnLite => "smcnn-lite",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Variant::SmCnn => 0,
            Variant::WmCnn => 1,
            Variant::SmCnnLite => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Variant::SmCnn,
            1 => Variant::WmCnn,
            2 => Variant::SmCnnLite,
            _ => return None,
        })
    }

    /// Published parameter count of the full-size variant.
    pub fn reference_param_count(self) -> usize {
        match self {
            Variant::SmCnn => 2_404_361,
            Variant::WmCnn => 1_852_361,
            Variant::SmCnnLite => 1_867_241,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "smcnn" => Ok(Variant::SmCnn),
            "wmcnn" => Ok(Variant::WmCnn),
            "smcnnlite" | "lite" => Ok(Variant::SmCnnLite),
            _ => Err(ModelError::Config(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Adjacent spectral bands fed to the spectral branch (even).
    pub k: usize,
    /// Width of the deep feature maps.
    pub channels: usize,
    /// Residual modulation blocks in the deep stack (SM-CNN-Lite uses one).
    pub n_ssmrb: usize,
    /// Skip taps routed to the output layer, counted from the deepest one.
    pub skip_taps: usize,
    pub skip_channels: usize,
    /// Output channels of each kernel size in the two input branches.
    pub branch_channels: usize,
    /// Hidden width of the modulation generator.
    pub mod_hidden: usize,
    pub variant: Variant,
    /// Training patch side; inference tiles use the same size.
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 24,
            channels: 60,
            n_ssmrb: 2,
            skip_taps: 4,
            skip_channels: 15,
            branch_channels: 20,
            mod_hidden: 128,
            variant: Variant::SmCnn,
            patch_size: 20,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            k: 8,
            channels: 16,
            n_ssmrb: 2,
            skip_taps: 4,
            skip_channels: 15,
            branch_channels: 4,
            mod_hidden: 48,
            variant: Variant::SmCnn,
            patch_size: 12,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Residual blocks actually built.
    pub fn blocks(&self) -> usize {
        match self.variant {
            Variant::SmCnnLite => 1,
            _ => self.n_ssmrb,
        }
    }

    /// Skip taps actually built: there is one tap after the input branches,
    /// one after the head conv and one per block.
    pub fn taps(&self) -> usize {
        self.skip_taps.min(self.blocks() + 2)
    }

    /// Channels of the modulation input.
    pub fn modulation_channels(&self) -> usize {
        match self.variant {
            Variant::WmCnn => 1,
            _ => self.k,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.k == 0 || !self.k.is_multiple_of(2) {
            return fail(format!("k must be even and positive, got {}", self.k));
        }
        if !(1..=4).contains(&self.skip_taps) {
            return fail(format!("skip_taps must be in 1..=4, got {}", self.skip_taps));
        }
        for (name, v) in [
            ("channels", self.channels),
            ("n_ssmrb", self.n_ssmrb),
            ("skip_channels", self.skip_channels),
            ("branch_channels", self.branch_channels),
            ("mod_hidden", self.mod_hidden),
            ("patch_size", self.patch_size),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.skip_taps > self.n_ssmrb + 2 {
            return fail(format!(
                "skip_taps {} exceeds the {} taps available with n_ssmrb = {}",
                self.skip_taps,
                self.n_ssmrb + 2,
                self.n_ssmrb
            ));
        }
        Ok(())
    }
}
