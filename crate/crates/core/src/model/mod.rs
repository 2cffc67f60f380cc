//! The spectral self-modulating denoiser and its two ablation variants.
//!
//! A [`Model`] is an ordered list of named parameter tensors plus the
//! configuration that fixes its topology. The network predicts a residual
//! for one band from that band (`y_s`, `h×w`) and its spectral neighborhood
//! (`y_lambda`, `h×w×K`); the estimate is `y_s + residual`.

mod blocks;
mod checkpoint;
mod config;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Padding, Tape, Tensor, TensorError, Var};

pub use blocks::{modulation_maps, normalize_channels, ssmm, ssmrb, ConvVars, SsmmVars, SsmrbVars};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, Variant};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{stage}: expected shape {expected:?}, got {found:?}")]
    Shape {
        stage: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: TensorError,
    },
    #[error("the wavelength-modulated variant needs the target band's wavelength")]
    MissingWavelength,
    #[error("no parameter named {0:?}")]
    UnknownParam(String),
    #[error("parameter {name}: expected shape {expected:?}, got {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const KERNELS: [usize; 3] = [3, 5, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvIdx {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SsmmIdx {
    shared: ConvIdx,
    pointwise: Option<ConvIdx>,
    gamma: ConvIdx,
    beta: ConvIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BlockIdx {
    conv: ConvIdx,
    ssmm1: SsmmIdx,
    conv1: ConvIdx,
    ssmm2: SsmmIdx,
    conv2: ConvIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layers {
    branch2d: [ConvIdx; 3],
    branch3d: [ConvIdx; 3],
    depth_pad: [usize; 3],
    fuse: ConvIdx,
    head: ConvIdx,
    deep: Vec<BlockIdx>,
    skips: Vec<ConvIdx>,
    out: ConvIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Xavier,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    /// `kernel` is the full kernel shape (spatial extents, Cin, Cout).
    fn conv(&mut self, name: &str, kernel: Vec<usize>, init: Init) -> ConvIdx {
        let cout = *kernel.last().expect("kernel rank");
        ConvIdx {
            weight: self.push(format!("{name}.weight"), kernel, init),
            bias: self.push(format!("{name}.bias"), vec![cout], Init::Zero),
        }
    }

    fn conv2d(&mut self, name: &str, k: usize, cin: usize, cout: usize) -> ConvIdx {
        self.conv(name, vec![k, k, cin, cout], Init::Xavier)
    }

    fn ssmm(&mut self, name: &str, cfg: &ModelConfig) -> SsmmIdx {
        let (m, hidden, c) = (cfg.modulation_channels(), cfg.mod_hidden, cfg.channels);
        SsmmIdx {
            shared: self.conv2d(&format!("{name}.shared"), 5, m, hidden),
            pointwise: (cfg.variant == Variant::SmCnnLite)
                .then(|| self.conv2d(&format!("{name}.pointwise"), 1, m, hidden)),
            gamma: self.conv(&format!("{name}.gamma"), vec![1, 1, hidden, c], Init::Zero),
            beta: self.conv2d(&format!("{name}.beta"), 1, hidden, c),
        }
    }
}

/// Depth padding for a 3D kernel of side `k` over `depth` bands: none
/// unless the kernel is deeper than the input.
fn depth_padding(k: usize, depth: usize) -> usize {
    if depth >= k {
        0
    } else {
        (k - depth).div_ceil(2)
    }
}

fn layout(cfg: &ModelConfig) -> (Vec<ParamSpec>, Layers) {
    let mut b = LayoutBuilder::default();
    let (bc, c) = (cfg.branch_channels, cfg.channels);
    let branch2d = KERNELS.map(|k| b.conv2d(&format!("branch2d.k{k}"), k, 1, bc));
    let depth_pad = KERNELS.map(|k| depth_padding(k, cfg.k));
    let branch3d = KERNELS.map(|k| b.conv(&format!("branch3d.k{k}"), vec![k, k, k, 1, bc], Init::Xavier));
    let flat: usize = KERNELS
        .iter()
        .zip(depth_pad)
        .map(|(&k, p)| (cfg.k + 2 * p + 1 - k) * bc)
        .sum();
    let fuse = b.conv2d("branch3d.fuse", 1, flat, 3 * bc);
    let head = b.conv2d("head", 3, 6 * bc, c);
    let deep = (0..cfg.blocks())
        .map(|i| BlockIdx {
            conv: b.conv2d(&format!("deep.{i}.conv"), 3, c, c),
            ssmm1: b.ssmm(&format!("deep.{i}.ssmrb.ssmm1"), cfg),
            conv1: b.conv2d(&format!("deep.{i}.ssmrb.conv1"), 3, c, c),
            ssmm2: b.ssmm(&format!("deep.{i}.ssmrb.ssmm2"), cfg),
            conv2: b.conv2d(&format!("deep.{i}.ssmrb.conv2"), 3, c, c),
        })
        .collect();
    // Tap widths in network order; only the deepest `taps()` are kept.
    let mut widths = vec![6 * bc, c];
    widths.extend(std::iter::repeat_n(c, cfg.blocks()));
    let kept = &widths[widths.len() - cfg.taps()..];
    let skips = kept
        .iter()
        .enumerate()
        .map(|(j, &w)| b.conv2d(&format!("skip.{j}"), 3, w, cfg.skip_channels))
        .collect();
    let out = b.conv2d("out", 3, cfg.skip_channels * cfg.taps(), 1);
    let layers = Layers {
        branch2d,
        branch3d,
        depth_pad,
        fuse,
        head,
        deep,
        skips,
        out,
    };
    (b.specs, layers)
}

/// Xavier-normal standard deviation for a kernel shaped
/// `spatial.. × Cin × Cout`.
pub fn xavier_std(kernel: &[usize]) -> f64 {
    let r = kernel.len();
    let receptive: usize = kernel[..r - 2].iter().product();
    let fan_in = receptive * kernel[r - 2];
    let fan_out = receptive * kernel[r - 1];
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    layers: Layers,
}

/// Builds a freshly initialized model. Every parameter value is exactly
/// representable in 32 bits, so checkpoints round-trip losslessly.
pub fn build(config: &ModelConfig, init_seed: u64) -> Result<Model, ModelError> {
    config.validate()?;
    let (specs, layers) = layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let params = specs
        .iter()
        .map(|s| match s.init {
            Init::Zero => Tensor::zeros(s.shape.clone()),
            Init::Xavier => {
                let normal = Normal::new(0.0, xavier_std(&s.shape)).expect("positive std");
                Tensor::from_fn(s.shape.clone(), |_| normal.sample(&mut rng)).round_to_f32()
            }
        })
        .collect();
    Ok(Model {
        config: config.clone(),
        names: specs.into_iter().map(|s| s.name).collect(),
        params,
        layers,
    })
}

pub fn count_params(model: &Model) -> usize {
    model.params.iter().map(Tensor::len).sum()
}

/// The tensor driving the modulation generator: the spectral window itself,
/// or for the wavelength variant an `h×w×1` map filled with the target
/// band's wavelength in micrometers.
pub fn modulation_input(variant: Variant, y_lambda: &Tensor, wavelength_um: Option<f64>) -> Result<Tensor, ModelError> {
    match variant {
        Variant::SmCnn | Variant::SmCnnLite => Ok(y_lambda.clone()),
        Variant::WmCnn => {
            let wl = wavelength_um.ok_or(ModelError::MissingWavelength)?;
            let s = y_lambda.shape();
            if s.len() < 2 {
                return Err(ModelError::Shape {
                    stage: "modulation input",
                    expected: vec![0, 0, 0],
                    found: s.to_vec(),
                });
            }
            Ok(Tensor::full([s[0], s[1], 1], wl))
        }
    }
}

fn stage(stage: &'static str) -> impl Fn(TensorError) -> ModelError {
    move |source| ModelError::Stage { stage, source }
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), ModelError> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))?;
        self.replace(i, value)
    }

    /// Replaces every parameter, in [`Model::param_names`] order.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<(), ModelError> {
        if values.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (i, v) in values.into_iter().enumerate() {
            self.replace(i, v)?;
        }
        Ok(())
    }

    fn replace(&mut self, i: usize, value: Tensor) -> Result<(), ModelError> {
        if value.shape() != self.params[i].shape() {
            return Err(ModelError::ParamShape {
                name: self.names[i].clone(),
                expected: self.params[i].shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        self.params[i] = value;
        Ok(())
    }

    /// Zeroes the output conv so the network returns its input band.
    pub fn zero_output_layer(&mut self) {
        for i in [self.layers.out.weight, self.layers.out.bias] {
            self.params[i] = Tensor::zeros(self.params[i].shape().to_vec());
        }
    }

    pub fn round_to_f32(&self) -> Self {
        Self {
            params: self.params.iter().map(Tensor::round_to_f32).collect(),
            ..self.clone()
        }
    }

    /// Puts every parameter on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    fn conv(&self, vars: &[Var], c: ConvIdx) -> ConvVars {
        ConvVars {
            weight: vars[c.weight],
            bias: vars[c.bias],
        }
    }

    fn ssmm_vars(&self, vars: &[Var], s: SsmmIdx) -> SsmmVars {
        SsmmVars {
            shared: self.conv(vars, s.shared),
            pointwise: s.pointwise.map(|p| self.conv(vars, p)),
            gamma: self.conv(vars, s.gamma),
            beta: self.conv(vars, s.beta),
        }
    }

    /// Vars of residual block `i`, for inspecting a single block.
    pub fn block_vars(&self, vars: &[Var], i: usize) -> Option<SsmrbVars> {
        self.layers.deep.get(i).map(|d| SsmrbVars {
            ssmm1: self.ssmm_vars(vars, d.ssmm1),
            conv1: self.conv(vars, d.conv1),
            ssmm2: self.ssmm_vars(vars, d.ssmm2),
            conv2: self.conv(vars, d.conv2),
        })
    }

    fn check_inputs(&self, y_s: &[usize], y_lambda: &[usize], modulation: &[usize]) -> Result<(), ModelError> {
        if y_s.len() != 2 {
            return Err(ModelError::Shape {
                stage: "input band",
                expected: vec![self.config.patch_size; 2],
                found: y_s.to_vec(),
            });
        }
        let want = [y_s[0], y_s[1], self.config.k];
        if y_lambda != want {
            return Err(ModelError::Shape {
                stage: "spectral window",
                expected: want.to_vec(),
                found: y_lambda.to_vec(),
            });
        }
        let want = [y_s[0], y_s[1], self.config.modulation_channels()];
        if modulation != want {
            return Err(ModelError::Shape {
                stage: "modulation input",
                expected: want.to_vec(),
                found: modulation.to_vec(),
            });
        }
        Ok(())
    }

    /// Records the forward pass on `tape` given bound parameters `vars`.
    /// Returns the `h×w` estimate.
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        y_s: Var,
        y_lambda: Var,
        modulation: Var,
    ) -> Result<Var, ModelError> {
        self.check_inputs(tape.shape(y_s), tape.shape(y_lambda), tape.shape(modulation))?;
        let (h, w) = (tape.shape(y_s)[0], tape.shape(y_s)[1]);
        let k = self.config.k;
        let bc = self.config.branch_channels;
        let l = &self.layers;

        let band = tape.reshape(y_s, &[h, w, 1]).map_err(stage("input band"))?;
        let mut parts = Vec::with_capacity(3);
        for c in l.branch2d {
            parts.push(self.conv(vars, c).apply(tape, band).map_err(stage("spatial branch"))?);
        }
        let spatial = tape.concat(&parts, 2).map_err(stage("spatial branch"))?;
        let spatial = tape.relu(spatial);

        let err = stage("spectral branch");
        let volume = tape.reshape(y_lambda, &[h, w, k, 1]).map_err(&err)?;
        let volume = tape.permute(volume, &[2, 0, 1, 3]).map_err(&err)?;
        let mut parts = Vec::with_capacity(3);
        for ((c, kernel), pad) in l.branch3d.iter().zip(KERNELS).zip(l.depth_pad) {
            let y = tape
                .conv3d(volume, vars[c.weight], Padding::Explicit(vec![pad, kernel / 2, kernel / 2]))
                .map_err(&err)?;
            let y = tape.bias_add(y, vars[c.bias]).map_err(&err)?;
            let depth = tape.shape(y)[0];
            let y = tape.permute(y, &[1, 2, 0, 3]).map_err(&err)?;
            parts.push(tape.reshape(y, &[h, w, depth * bc]).map_err(&err)?);
        }
        let spectral = tape.concat(&parts, 2).map_err(&err)?;
        let spectral = self.conv(vars, l.fuse).apply(tape, spectral).map_err(&err)?;
        let spectral = tape.relu(spectral);

        let joined = tape.concat(&[spatial, spectral], 2).map_err(stage("head"))?;
        let x = self.conv(vars, l.head).apply(tape, joined).map_err(stage("head"))?;
        let mut x = tape.relu(x);
        let mut taps = vec![joined, x];

        for (i, d) in l.deep.iter().enumerate() {
            let err = stage("residual block");
            let y = self.conv(vars, d.conv).apply(tape, x).map_err(&err)?;
            let y = tape.relu(y);
            let block = self.block_vars(vars, i).expect("block index");
            x = ssmrb(tape, y, modulation, &block).map_err(&err)?;
            taps.push(x);
        }

        let err = stage("skip taps");
        let kept = &taps[taps.len() - l.skips.len()..];
        let mut outs = Vec::with_capacity(kept.len());
        for (&t, &c) in kept.iter().zip(&l.skips) {
            outs.push(self.conv(vars, c).apply(tape, t).map_err(&err)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat(&outs, 2).map_err(&err)?
        };
        let residual = self.conv(vars, l.out).apply(tape, merged).map_err(stage("output"))?;
        let residual = tape.reshape(residual, &[h, w]).map_err(stage("output"))?;
        tape.add(y_s, residual).map_err(stage("output"))
    }

    /// Denoised `h×w` band from its noisy version and spectral window.
    pub fn forward(&self, y_s: &Tensor, y_lambda: &Tensor, wavelength_um: Option<f64>) -> Result<Tensor, ModelError> {
        let modulation = modulation_input(self.config.variant, y_lambda, wavelength_um)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let ys = tape.constant(y_s.clone());
        let yl = tape.constant(y_lambda.clone());
        let m = tape.constant(modulation);
        let out = self.forward_graph(&mut tape, &vars, ys, yl, m)?;
        Ok(tape.value(out).clone())
    }

    /// Per-parameter shapes and totals, with the published full-size count
    /// of the same variant for comparison.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let cfg = &self.config;
        let _ = writeln!(
            s,
            "variant={} k={} channels={} blocks={} taps={} skip_channels={} branch_channels={} mod_hidden={} patch={}",
            cfg.variant,
            cfg.k,
            cfg.channels,
            cfg.blocks(),
            cfg.taps(),
            cfg.skip_channels,
            cfg.branch_channels,
            cfg.mod_hidden,
            cfg.patch_size
        );
        let width = self.names.iter().map(String::len).max().unwrap_or(0);
        for (name, p) in self.names.iter().zip(&self.params) {
            let _ = writeln!(s, "{name:<width$}  {:>18}  {:>9}", format!("{:?}", p.shape()), p.len());
        }
        let _ = writeln!(s, "total parameters: {}", group_thousands(count_params(self)));
        let _ = writeln!(
            s,
            "reference ({}): {}",
            cfg.variant,
            group_thousands(cfg.variant.reference_param_count())
        );
        s
    }
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
