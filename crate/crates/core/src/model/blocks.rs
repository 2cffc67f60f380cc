//! Graph builders for the layers of the network, usable on any tape.

use crate::tensor::{Padding, Tape, TensorError, Var};

/// A same-padded, stride-1 2D convolution with bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

impl ConvVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let y = tape.conv2d(x, self.weight, 1, Padding::Same)?;
        tape.bias_add(y, self.bias)
    }
}

/// Modulation generator plus normalization parameters of one SSMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsmmVars {
    /// 5×5 conv from the modulation input to the hidden width.
    pub shared: ConvVars,
    /// 1×1 conv summed with `shared` before the ReLU (lite variant only).
    pub pointwise: Option<ConvVars>,
    /// 1×1 head producing `γ − 1`.
    pub gamma: ConvVars,
    /// 1×1 head producing `β`.
    pub beta: ConvVars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsmrbVars {
    pub ssmm1: SsmmVars,
    pub conv1: ConvVars,
    pub ssmm2: SsmmVars,
    pub conv2: ConvVars,
}

/// `(x − μ_c) / σ_c` with per-channel statistics over all pixels.
pub fn normalize_channels(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let (mean, std) = tape.channel_stats(x);
    let centered = tape.sub_channel(x, mean)?;
    tape.div_channel(centered, std)
}

/// Pixel-wise scale and shift maps from the modulation input.
pub fn modulation_maps(tape: &mut Tape, modulation: Var, p: &SsmmVars) -> Result<(Var, Var), TensorError> {
    let mut hidden = p.shared.apply(tape, modulation)?;
    if let Some(pw) = &p.pointwise {
        let side = pw.apply(tape, modulation)?;
        hidden = tape.add(hidden, side)?;
    }
    let hidden = tape.relu(hidden);
    let gamma = p.gamma.apply(tape, hidden)?;
    let gamma = tape.add_scalar(gamma, 1.0);
    let beta = p.beta.apply(tape, hidden)?;
    Ok((gamma, beta))
}

/// Spectral self-modulation: `γ ⊙ normalize(f) + β`.
pub fn ssmm(tape: &mut Tape, features: Var, modulation: Var, p: &SsmmVars) -> Result<Var, TensorError> {
    let normalized = normalize_channels(tape, features)?;
    let (gamma, beta) = modulation_maps(tape, modulation, p)?;
    let scaled = tape.mul(gamma, normalized)?;
    tape.add(scaled, beta)
}

/// `f + conv2(relu(ssmm2(conv1(relu(ssmm1(f))))))`.
pub fn ssmrb(tape: &mut Tape, features: Var, modulation: Var, p: &SsmrbVars) -> Result<Var, TensorError> {
    let x = ssmm(tape, features, modulation, &p.ssmm1)?;
    let x = tape.relu(x);
    let x = p.conv1.apply(tape, x)?;
    let x = ssmm(tape, x, modulation, &p.ssmm2)?;
    let x = tape.relu(x);
    let x = p.conv2.apply(tape, x)?;
    tape.add(features, x)
}
