//! Training objective, Adam, the training loop and tiled full-cube
//! inference.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::hsi::{flip_pad_spectral, patch_origins, spectral_patch, HsiCube, HsiError, PatchSample, SampleSet};
use crate::metrics::{mpsnr, MetricsError};
use crate::model::{build, modulation_input, save_checkpoint, Model, ModelConfig, ModelError};
use crate::noise::{corrupt, NoiseError, NoiseSpec};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Hsi(#[from] HsiError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("the training region yields no samples")]
    EmptySamples,
    #[error("{preds} predictions for {targets} targets")]
    CountMismatch { preds: usize, targets: usize },
    #[error("prediction {index} has shape {pred:?}, target has {target:?}")]
    ShapeMismatch {
        index: usize,
        pred: Vec<usize>,
        target: Vec<usize>,
    },
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("cube is {rows}×{cols} but the model works on {patch}×{patch} patches; pad the cube spatially to at least the patch size")]
    TooSmall { rows: usize, cols: usize, patch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Seeds initialization and shuffling.
    pub seed: u64,
    /// Share of rows held out at the bottom of the cube for validation;
    /// the region is at least one patch tall. Zero disables validation.
    pub validation_fraction: f64,
    /// Patch stride of the training grid; defaults to half a patch.
    pub stride: Option<usize>,
    /// Where the best checkpoint is written, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 128,
            epochs: 100,
            max_steps: None,
            seed: 0,
            validation_fraction: 0.2,
            stride: None,
            checkpoint_dir: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for minutes-long CPU runs on small cubes.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            epochs: 20,
            max_steps: Some(600),
            stride: Some(4),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(TrainError::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.stride == Some(0) {
            return Err(TrainError::Config("stride must be positive".into()));
        }
        Ok(())
    }
}

/// `(1 / 2N) · Σᵢ ‖predᵢ − targetᵢ‖₁`.
pub fn loss(preds: &[Tensor], targets: &[Tensor]) -> Result<f64, TrainError> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(TrainError::CountMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    let mut total = 0.0;
    for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
        if p.shape() != t.shape() {
            return Err(TrainError::ShapeMismatch {
                index: i,
                pred: p.shape().to_vec(),
                target: t.shape().to_vec(),
            });
        }
        total += p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(total / (2.0 * preds.len() as f64))
}

/// First and second moment estimates of every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &[Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Vec<Tensor> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    params
        .iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .map(|((p, g), (m, v))| {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            let data = p
                .data()
                .iter()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|((&x, &g), (m, v))| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    x - lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps)
                })
                .collect();
            Tensor::new(p.shape().to_vec(), data).expect("same shape")
        })
        .collect()
}

/// Loss contribution `scale · ‖pred − x‖₁` of one sample and its gradient
/// with respect to every model parameter.
fn sample_gradient(model: &Model, sample: &PatchSample, scale: f64) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    let modulation = modulation_input(model.config().variant, &sample.y_lambda, sample.wavelength_um)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let ys = tape.constant(sample.y_s.clone());
    let yl = tape.constant(sample.y_lambda.clone());
    let m = tape.constant(modulation);
    let target = tape.constant(sample.x_s.clone());
    let out = model.forward_graph(&mut tape, &vars, ys, yl, m)?;
    let err = |source| ModelError::Stage { stage: "loss", source };
    let diff = tape.sub(out, target).map_err(err)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    let scaled = tape.scale(total, scale);
    tape.backward(scaled).map_err(err)?;
    let value = tape.value(scaled).item().expect("scalar loss");
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).expect("parameter leaf").to_vec())
        .collect();
    Ok((value, grads))
}

/// Loss of one minibatch and its gradient, summed over samples in order.
pub fn batch_gradient(model: &Model, samples: &[PatchSample]) -> Result<(f64, Vec<Tensor>), ModelError> {
    let scale = 1.0 / (2.0 * samples.len() as f64);
    let parts = samples
        .par_iter()
        .map(|s| sample_gradient(model, s, scale))
        .collect::<Result<Vec<_>, _>>()?;
    let mut loss = 0.0;
    let mut sum: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    for (l, grads) in parts {
        loss += l;
        for (acc, g) in sum.iter_mut().zip(grads) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    let grads = sum
        .into_iter()
        .zip(model.params())
        .map(|(g, p)| Tensor::new(p.shape().to_vec(), g).expect("gradient shape"))
        .collect();
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Set on the last step of each epoch when validation is enabled.
    pub val_mpsnr: Option<f64>,
    /// Wall time since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    /// Epoch whose snapshot was kept.
    pub best_epoch: Option<usize>,
    pub best_val_mpsnr: Option<f64>,
}

impl TrainLog {
    /// `step,loss,val_mpsnr,seconds`; `val_mpsnr` is empty on steps without
    /// validation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,val_mpsnr,seconds\n");
        for r in &self.records {
            let val = r.val_mpsnr.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{:.3}", r.step, r.loss, val, r.seconds);
        }
        s
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// Rows kept for validation at the bottom of a `rows`-tall cube.
fn validation_rows(rows: usize, fraction: f64, patch: usize) -> usize {
    if fraction == 0.0 {
        0
    } else {
        ((rows as f64 * fraction).ceil() as usize).max(patch)
    }
}

/// Corrupts `clean` with `noise` and trains a fresh model on the pair.
pub fn train(
    clean: &HsiCube,
    noise: &NoiseSpec,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Model, TrainLog), TrainError> {
    let (noisy, _) = corrupt(clean, noise)?;
    train_pair(&noisy, clean, model_config, config)
}

/// Trains a fresh model on a fixed noisy/clean pair. Returns the snapshot
/// with the best validation MPSNR (the final one without validation),
/// rounded to 32-bit values.
pub fn train_pair(
    noisy: &HsiCube,
    clean: &HsiCube,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Model, TrainLog), TrainError> {
    config.validate()?;
    let mut model = build(model_config, config.seed)?;
    let patch = model_config.patch_size;
    let (rows, cols) = (clean.rows(), clean.cols());
    let val_rows = validation_rows(rows, config.validation_fraction, patch);
    if rows < val_rows + patch || cols < patch {
        return Err(TrainError::TooSmall { rows, cols, patch });
    }
    let train_rows = rows - val_rows;
    let samples = SampleSet::new(
        &noisy.crop(0, 0, train_rows, cols)?,
        &clean.crop(0, 0, train_rows, cols)?,
        model_config.k,
        patch,
        config.stride.unwrap_or((patch / 2).max(1)),
    )?;
    if samples.is_empty() {
        return Err(TrainError::EmptySamples);
    }
    let validation = if val_rows > 0 {
        Some((noisy.crop(train_rows, 0, val_rows, cols)?, clean.crop(train_rows, 0, val_rows, cols)?))
    } else {
        None
    };
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    log::info!(
        "training {} on {} samples ({} patches), validation rows {}",
        model_config.variant,
        samples.len(),
        samples.patch_count(),
        val_rows
    );

    let start = Instant::now();
    let mut state = AdamState::new(model.params());
    let mut log = TrainLog::default();
    let mut best: Option<Model> = None;
    let mut step = 0;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);
    for epoch in 0..config.epochs {
        if step >= max_steps {
            break;
        }
        let order = samples.shuffled_indices(config.seed.wrapping_add(epoch as u64).wrapping_mul(0x9E37_79B9));
        for chunk in order.chunks(config.batch) {
            if step >= max_steps {
                break;
            }
            let batch: Vec<PatchSample> = chunk.iter().map(|&i| samples.get(i)).collect();
            let (loss, grads) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(TrainError::NonFinite { step });
            }
            let updated = adam_step(model.params(), &grads, &mut state, config.lr, &config.adam);
            model.set_params(updated)?;
            log.records.push(StepRecord {
                step,
                epoch,
                loss,
                val_mpsnr: None,
                seconds: start.elapsed().as_secs_f64(),
            });
            step += 1;
        }

        let snapshot = model.round_to_f32();
        let score = match &validation {
            Some((vn, vc)) => {
                let v = mpsnr(&denoise_cube(&snapshot, vn)?, vc, 1.0)?;
                if v.is_nan() {
                    return Err(TrainError::NonFinite { step });
                }
                if let Some(r) = log.records.last_mut() {
                    r.val_mpsnr = Some(v);
                }
                log::info!("epoch {epoch}: step {step}, validation MPSNR {v:.3} dB");
                Some(v)
            }
            None => None,
        };
        let improved = match (score, log.best_val_mpsnr) {
            (Some(v), Some(b)) => v > b,
            _ => true,
        };
        if improved {
            log.best_epoch = Some(epoch);
            log.best_val_mpsnr = score;
            if let Some(dir) = &config.checkpoint_dir {
                save_checkpoint(&snapshot, dir.join("best.ckpt"))?;
            }
            best = Some(snapshot);
        }
    }
    let model = best.unwrap_or_else(|| model.round_to_f32());
    Ok((model, log))
}

/// Denoises every band of `noisy` with overlapping patches.
///
/// Tiles of the model's patch size are laid on a grid of stride half a
/// patch with the last row and column clamped to the border; overlapping
/// predictions are averaged uniformly. Works for any band count with
/// `B ≥ K/2`.
pub fn denoise_cube(model: &Model, noisy: &HsiCube) -> Result<HsiCube, TrainError> {
    let cfg = model.config();
    let (rows, cols, bands) = (noisy.rows(), noisy.cols(), noisy.bands());
    let patch = cfg.patch_size;
    if rows < patch || cols < patch {
        return Err(TrainError::TooSmall { rows, cols, patch });
    }
    let padded = flip_pad_spectral(noisy, cfg.k)?;
    let origins = patch_origins(rows, cols, patch, (patch / 2).max(1))?;
    let planes = (0..bands)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>, TrainError> {
            let mut mean = vec![0.0; rows * cols];
            let mut count = vec![0.0f64; rows * cols];
            for &(r0, c0) in &origins {
                let (ys, yl) = spectral_patch(&padded, b, cfg.k, (r0, c0), (patch, patch))?;
                let out = model.forward(&ys, &yl, noisy.wavelength(b))?;
                for r in 0..patch {
                    for c in 0..patch {
                        let i = (r0 + r) * cols + c0 + c;
                        count[i] += 1.0;
                        // running mean keeps agreeing predictions exact
                        mean[i] += (out.data()[r * patch + c] - mean[i]) / count[i];
                    }
                }
            }
            Ok(mean)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let data = planes.concat();
    Ok(HsiCube::new(
        rows,
        cols,
        bands,
        data,
        noisy.wavelengths().map(<[f64]>::to_vec),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_arithmetic() {
        let p = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = Tensor::new([2, 2], vec![0.0, 3.0, 3.0, 2.0]).unwrap();
        assert_eq!(loss(std::slice::from_ref(&p), &[t]).unwrap(), 2.0);
        assert_eq!(loss(std::slice::from_ref(&p), std::slice::from_ref(&p)).unwrap(), 0.0);
        assert!(matches!(loss(&[p.clone(), p], &[]), Err(TrainError::CountMismatch { .. })));
    }

    #[test]
    fn adam_zero_gradient_is_inert() {
        let p = vec![Tensor::new([2], vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::zeros([2])];
        let mut s = AdamState::new(&p);
        assert_eq!(adam_step(&p, &g, &mut s, 0.1, &AdamConfig::default()), p);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let p = vec![Tensor::new([2], vec![1.0, 1.0]).unwrap()];
        let g = vec![Tensor::new([2], vec![0.3, -7.0]).unwrap()];
        let mut s = AdamState::new(&p);
        let out = adam_step(&p, &g, &mut s, 0.01, &AdamConfig::default());
        assert!((out[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((out[0].data()[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn validation_region_is_at_least_a_patch() {
        assert_eq!(validation_rows(32, 0.2, 12), 12);
        assert_eq!(validation_rows(100, 0.2, 12), 20);
        assert_eq!(validation_rows(100, 0.0, 12), 0);
    }
}
