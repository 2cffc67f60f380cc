use std::fs;
use std::path::{Path, PathBuf};

use smcnn_core::hsi::synthetic::{generate, SceneConfig};
use smcnn_core::hsi::{load_cube, save_cube};
use smcnn_core::metrics::report as metric_report;
use smcnn_core::model::load_checkpoint;
use smcnn_core::trainer::train_pair;
use smcnn_core::{build, corrupt, count_params, denoise_cube, HsiCube, Model, Variant};

use crate::config::RunConfig;
use crate::error::CliError;

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("missing {key} (set it in the config or with a flag)")))
}

fn read_cube(path: &Path) -> Result<HsiCube, CliError> {
    load_cube(path).map_err(|e| CliError::from(e).at(path))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::from(e).at(dir)),
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| CliError::from(e).at(path))
}

fn write_cube(cube: &HsiCube, path: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    ensure_parent(path)?;
    save_cube(cube, path, cfg.dtype).map_err(|e| CliError::from(e).at(path))
}

/// `noisy.hcube` → `noisy.hcube.<ext>`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

pub fn synth(cfg: &RunConfig, rows: usize, cols: usize, bands: usize, endmembers: Option<usize>) -> Result<(), CliError> {
    let output = required(&cfg.io.output, "io.output")?;
    let mut scene = SceneConfig::new(rows, cols, bands, cfg.seed);
    if let Some(n) = endmembers {
        scene.endmembers = n;
    }
    let cube = generate(&scene)?;
    write_cube(&cube, output, cfg)?;
    println!("wrote {rows}×{cols}×{bands} synthetic cube to {}", output.display());
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let input = required(&cfg.io.input, "io.input")?;
    let output = required(&cfg.io.output, "io.output")?;
    let clean = read_cube(input)?;
    let (noisy, log) = corrupt(&clean, &cfg.noise)?;
    let log_path = cfg.io.log.clone().unwrap_or_else(|| sibling(output, "noise.txt"));
    write_cube(&noisy, output, cfg)?;
    write(&log_path, &log.to_text())?;
    write(&sibling(output, "cfg"), &cfg.to_text())?;

    println!(
        "case {} (seed {}) on {}×{}×{}",
        log.case,
        log.seed,
        clean.rows(),
        clean.cols(),
        clean.bands()
    );
    for b in &log.bands {
        let sigma = b.gaussian_sigma.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        println!("  band {:>3}: sigma {sigma:>7}  {}", b.band, b.types().join("+"));
    }
    println!("wrote {} and {}", output.display(), log_path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let clean_path = required(&cfg.io.clean, "io.clean")?;
    let out_dir = required(&cfg.io.out_dir, "io.out_dir")?;
    let clean = read_cube(clean_path)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::from(e).at(out_dir))?;
    let noisy = match &cfg.io.input {
        Some(path) => {
            let noisy = read_cube(path)?;
            let dims = |c: &HsiCube| (c.rows(), c.cols(), c.bands());
            if dims(&noisy) != dims(&clean) {
                return Err(CliError::Config(format!(
                    "noisy cube is {:?} but clean cube is {:?} (rows, cols, bands)",
                    dims(&noisy),
                    dims(&clean)
                )));
            }
            noisy
        }
        None => {
            let (noisy, log) = corrupt(&clean, &cfg.noise)?;
            write(&out_dir.join("noise.txt"), &log.to_text())?;
            noisy
        }
    };
    write(&out_dir.join("resolved.cfg"), &cfg.to_text())?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = Some(out_dir.to_path_buf());
    let (_, log) = train_pair(&noisy, &clean, &cfg.model, &train_cfg)?;
    write(&out_dir.join("train_log.csv"), &log.to_csv())?;

    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "trained {} for {} steps: loss {} -> {}",
        cfg.model.variant,
        log.records.len(),
        fmt(log.initial_loss()),
        fmt(log.final_loss())
    );
    if let (Some(e), Some(v)) = (log.best_epoch, log.best_val_mpsnr) {
        println!("best epoch {e}: validation MPSNR {v:.3} dB");
    }
    println!("wrote {}", out_dir.join("best.ckpt").display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    load_checkpoint(path).map_err(|e| CliError::from(e).at(path))
}

/// Reports the first checkpoint field the cube cannot satisfy.
fn check_compatible(model: &Model, cube: &HsiCube) -> Result<(), CliError> {
    let m = model.config();
    if cube.bands() < m.k / 2 {
        return Err(CliError::Config(format!(
            "checkpoint k={} needs at least {} bands, cube has {}",
            m.k,
            m.k / 2,
            cube.bands()
        )));
    }
    if cube.rows() < m.patch_size || cube.cols() < m.patch_size {
        return Err(CliError::Config(format!(
            "checkpoint patch_size={} exceeds the cube's {}×{} extent",
            m.patch_size,
            cube.rows(),
            cube.cols()
        )));
    }
    if m.variant == Variant::WmCnn && cube.wavelengths().is_none() {
        return Err(CliError::Config(format!(
            "checkpoint variant={} needs band wavelengths, cube has none",
            m.variant
        )));
    }
    Ok(())
}

pub fn denoise(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = required(&cfg.io.checkpoint, "io.checkpoint")?;
    let input = required(&cfg.io.input, "io.input")?;
    let output = required(&cfg.io.output, "io.output")?;
    let model = load_model(ckpt)?;
    let noisy = read_cube(input)?;
    check_compatible(&model, &noisy)?;
    let denoised = denoise_cube(&model, &noisy)?;
    if denoised.data().iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("denoised cube contains non-finite values".into()));
    }
    write_cube(&denoised, output, cfg)?;
    write(&sibling(output, "cfg"), &cfg.to_text())?;
    println!(
        "denoised {}×{}×{} with {} -> {}",
        noisy.rows(),
        noisy.cols(),
        noisy.bands(),
        model.config().variant,
        output.display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let estimate = read_cube(required(&cfg.io.input, "io.input")?)?;
    let clean = read_cube(required(&cfg.io.clean, "io.clean")?)?;
    let out_dir = required(&cfg.io.out_dir, "io.out_dir")?;
    let r = metric_report(&estimate, &clean, 1.0)?;
    write(&out_dir.join("bands.csv"), &r.band_csv())?;
    write(&out_dir.join("summary.csv"), &r.summary_csv())?;
    write(&out_dir.join("resolved.cfg"), &cfg.to_text())?;
    println!("MPSNR {} dB, MSSIM {}, SAM {} rad", r.mpsnr, r.mssim, r.sam_mean);
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let model = match &cfg.io.checkpoint {
        Some(path) => load_model(path)?,
        None => build(&cfg.model, cfg.train.seed)?,
    };
    print!("{}", model.summary());
    println!();
    println!("{:<12} {:>12} {:>12}", "variant", "this config", "reference");
    let base = model.config().clone();
    for v in Variant::ALL {
        let n = count_params(&build(&base.clone().with_variant(v), 0)?);
        println!("{:<12} {:>12} {:>12}", v.to_string(), n, v.reference_param_count());
    }
    Ok(())
}
