use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use smcnn_core::hsi::load_cube;
use smcnn_core::hsi::synthetic::{generate, SceneConfig};
use smcnn_core::hsi::{save_cube, Dtype};
use smcnn_core::model::{load_checkpoint, save_checkpoint};
use smcnn_core::{build, ModelConfig, Variant};

fn smcnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smcnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = smcnn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, name: &str, rows: usize, bands: usize, seed: u64) {
    let cube = generate(&SceneConfig::new(rows, rows, bands, seed)).unwrap();
    save_cube(&cube, dir.join(name), Dtype::F64).unwrap();
}

fn log_lines<'a>(text: &'a str, suffix: &str) -> Vec<&'a str> {
    text.lines().filter(|l| l.split('=').next().unwrap().ends_with(suffix)).collect()
}

#[test]
fn simulate_writes_cube_log_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "clean.hcube", 16, 16, 1);
    let stdout = ok(d, &["simulate", "-i", "clean.hcube", "-o", "a.hcube", "--case", "1", "--seed", "4"]);
    assert!(stdout.contains("case 1"));
    let log = fs::read_to_string(d.join("a.hcube.noise.txt")).unwrap();
    assert_eq!(log_lines(&log, ".gaussian_sigma").len(), 16);
    assert!(fs::read_to_string(d.join("a.hcube.cfg")).unwrap().contains("noise.seed = 4"));

    ok(d, &["simulate", "-i", "clean.hcube", "-o", "b.hcube", "--case", "1", "--seed", "4"]);
    assert_eq!(fs::read(d.join("a.hcube")).unwrap(), fs::read(d.join("b.hcube")).unwrap());
    assert_eq!(log, fs::read_to_string(d.join("b.hcube.noise.txt")).unwrap());
}

#[test]
fn mixture_log_has_sparse_noise_on_every_band() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "clean.hcube", 16, 9, 2);
    ok(d, &["simulate", "-i", "clean.hcube", "-o", "n.hcube", "--case", "5", "--log", "logs/n.txt"]);
    let log = fs::read_to_string(d.join("logs/n.txt")).unwrap();
    let types = log_lines(&log, ".types");
    assert_eq!(types.len(), 9);
    for line in types {
        let t = line.split('=').nth(1).unwrap();
        assert!(t.starts_with("GN+"), "{line}");
    }
}

#[test]
fn train_honours_variant_and_skip_taps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "clean.hcube", 24, 8, 3);
    let tiny = [
        "--set", "model.channels=6", "--set", "model.mod_hidden=6", "--set", "model.branch_channels=2",
        "--set", "model.k=4", "--set", "train.batch=4", "--steps", "3",
    ];
    let mut args = vec!["train", "--clean", "clean.hcube", "--out-dir", "wm", "--variant", "wmcnn"];
    args.extend(tiny);
    ok(d, &args);
    let wm = load_checkpoint(d.join("wm/best.ckpt")).unwrap();
    assert_eq!(wm.config().variant, Variant::WmCnn);
    assert!(d.join("wm/noise.txt").exists());
    let resolved = fs::read_to_string(d.join("wm/resolved.cfg")).unwrap();
    assert!(resolved.contains("model.variant = wmcnn"));

    let mut args = vec!["train", "--clean", "clean.hcube", "--out-dir", "taps", "--skip-taps", "1"];
    args.extend(tiny);
    ok(d, &args);
    assert_eq!(load_checkpoint(d.join("taps/best.ckpt")).unwrap().config().skip_taps, 1);
    let csv = fs::read_to_string(d.join("taps/train_log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn identity_checkpoint_denoises_to_input_for_other_band_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut model = build(&ModelConfig::desk(), 0).unwrap();
    model.zero_output_layer();
    save_checkpoint(&model, d.join("id.ckpt")).unwrap();
    for bands in [16, 24] {
        synth(d, "in.hcube", 14, bands, bands as u64);
        ok(d, &["denoise", "--checkpoint", "id.ckpt", "-i", "in.hcube", "-o", "out/den.hcube"]);
        assert_eq!(load_cube(d.join("out/den.hcube")).unwrap(), load_cube(d.join("in.hcube")).unwrap());
        assert!(d.join("out/den.hcube.cfg").exists());
    }
}

#[test]
fn incompatible_cube_names_the_checkpoint_field() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    save_checkpoint(&build(&ModelConfig::desk(), 0).unwrap(), d.join("m.ckpt")).unwrap();
    synth(d, "few.hcube", 14, 3, 0);
    let out = smcnn(d, &["denoise", "--checkpoint", "m.ckpt", "-i", "few.hcube", "-o", "x.hcube"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k=8"));
    assert!(!d.join("x.hcube").exists());
}

#[test]
fn evaluate_clean_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "clean.hcube", 16, 7, 5);
    let out = smcnn(d, &["evaluate", "--estimate", "clean.hcube", "--clean", "clean.hcube", "--out-dir", "ev"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("infinite PSNR"));
    assert_eq!(fs::read_to_string(d.join("ev/summary.csv")).unwrap(), "mpsnr_db,mssim,sam_mean_rad\ninf,1,0\n");
    assert_eq!(fs::read_to_string(d.join("ev/bands.csv")).unwrap().lines().count(), 8);
}

#[test]
fn report_lists_reference_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["report", "--profile", "paper"]);
    assert!(stdout.contains("reference (smcnn): 2,404,361"));
    assert!(stdout.contains("total parameters: 754,093"));
    let row = |v: &str| -> Vec<usize> {
        let line = stdout.lines().find(|l| l.starts_with(v) && l.split_whitespace().count() == 3).unwrap();
        line.split_whitespace().skip(1).map(|n| n.parse().unwrap()).collect()
    };
    assert!(row("wmcnn")[0] < row("smcnn ")[0]);
    assert_eq!(row("smcnn-lite")[1], 1_867_241);
}

#[test]
fn config_file_flags_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "# report settings\nmodel.variant = wmcnn\nmodel.channels = 12\n").unwrap();
    let stdout = ok(d, &["report", "-c", "run.cfg", "--variant", "smcnn"]);
    assert!(stdout.starts_with("variant=smcnn k=8 channels=12"));

    fs::write(d.join("bad.cfg"), "model.chanels = 12\n").unwrap();
    let out = smcnn(d, &["report", "-c", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:1"));

    let out = smcnn(d, &["simulate", "-i", "missing.hcube", "-o", "x.hcube"]);
    assert_eq!(out.status.code(), Some(3));
    let out = smcnn(d, &["simulate", "-i", "missing.hcube"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "clean.hcube", 24, 8, 6);
    let out = smcnn(
        d,
        &[
            "train", "--clean", "clean.hcube", "--out-dir", "run", "--set", "train.lr=1e300",
            "--set", "model.k=4", "--set", "train.batch=2", "--steps", "4",
        ],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
