use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smcnn_core::gradcheck;
use smcnn_core::model::{
    build, count_params, modulation_input, normalize_channels, read_checkpoint, ssmm, ssmrb, write_checkpoint,
    ModelConfig, Variant,
};
use smcnn_core::tensor::NORM_DELTA;
use smcnn_core::{Tape, Tensor, Var};

fn tiny() -> ModelConfig {
    ModelConfig {
        k: 4,
        channels: 8,
        n_ssmrb: 2,
        skip_taps: 4,
        skip_channels: 3,
        branch_channels: 2,
        mod_hidden: 6,
        variant: Variant::SmCnn,
        patch_size: 12,
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

/// Parameter count enumerated layer by layer from the architecture
/// description, independently of the model's own layout code.
fn enumerate_params(cfg: &ModelConfig) -> usize {
    let bc = cfg.branch_channels;
    let c = cfg.channels;
    let m = cfg.modulation_channels();
    let blocks = if cfg.variant == Variant::SmCnnLite { 1 } else { cfg.n_ssmrb };
    let taps = cfg.skip_taps.min(blocks + 2);
    let mut total = 0;
    // spatial branch
    for k in [3, 5, 7] {
        total += conv_params(k, 1, bc);
    }
    // spectral branch: k×k×k×1×bc kernels, then a 1×1 fusion of the
    // flattened depth
    let mut flat = 0;
    for k in [3usize, 5, 7] {
        total += k * k * k * bc + bc;
        let depth = if cfg.k >= k {
            cfg.k - k + 1
        } else {
            let pad = (k - cfg.k).div_ceil(2);
            cfg.k + 2 * pad - k + 1
        };
        flat += depth * bc;
    }
    total += conv_params(1, flat, 3 * bc);
    total += conv_params(3, 6 * bc, c);
    let mut ssmm = conv_params(5, m, cfg.mod_hidden) + 2 * conv_params(1, cfg.mod_hidden, c);
    if cfg.variant == Variant::SmCnnLite {
        ssmm += conv_params(1, m, cfg.mod_hidden);
    }
    total += blocks * (3 * conv_params(3, c, c) + 2 * ssmm);
    let widths: Vec<usize> = [6 * bc, c].into_iter().chain(std::iter::repeat_n(c, blocks)).collect();
    for &w in &widths[widths.len() - taps..] {
        total += conv_params(3, w, cfg.skip_channels);
    }
    total + conv_params(3, cfg.skip_channels * taps, 1)
}

#[test]
fn tiny_parameter_count_matches_enumeration() {
    for v in Variant::ALL {
        let cfg = tiny().with_variant(v);
        assert_eq!(count_params(&build(&cfg, 0).unwrap()), enumerate_params(&cfg), "{v}");
    }
    // spectral depths 2, 2, 2 for K = 4
    let cfg = tiny();
    let hand = (9 + 25 + 49) * 2 + 6
        + (27 + 125 + 343) * 2 + 6
        + (12 * 6 + 6)
        + (9 * 12 * 8 + 8)
        + 2 * (3 * (9 * 64 + 8) + 2 * ((25 * 4 * 6 + 6) + 2 * (6 * 8 + 8)))
        + (9 * 12 * 3 + 3)
        + 3 * (9 * 8 * 3 + 3)
        + (9 * 12 + 1);
    assert_eq!(count_params(&build(&cfg, 0).unwrap()), hand);
}

#[test]
fn default_variant_counts_are_ordered() {
    let counts: Vec<usize> = Variant::ALL
        .iter()
        .map(|&v| count_params(&build(&ModelConfig::default().with_variant(v), 0).unwrap()))
        .collect();
    for (v, n) in Variant::ALL.iter().zip(&counts) {
        println!("{v}: {n} (reference {})", v.reference_param_count());
        assert_eq!(*n, enumerate_params(&ModelConfig::default().with_variant(*v)));
    }
    let (sm, wm, lite) = (counts[0], counts[1], counts[2]);
    assert!(wm < lite && lite < sm, "{wm} {lite} {sm}");
}

#[test]
fn desk_variant_counts_are_ordered() {
    let n = |v| count_params(&build(&ModelConfig::desk().with_variant(v), 0).unwrap());
    assert!(n(Variant::WmCnn) < n(Variant::SmCnnLite));
    assert!(n(Variant::SmCnnLite) < n(Variant::SmCnn));
}

#[test]
fn same_seed_same_parameters() {
    let a = build(&tiny(), 5).unwrap();
    assert_eq!(a, build(&tiny(), 5).unwrap());
    assert_ne!(a, build(&tiny(), 6).unwrap());
}

#[test]
fn xavier_sample_std() {
    let m = build(&ModelConfig::default(), 3).unwrap();
    let w = m.param("deep.0.conv.weight").unwrap();
    assert_eq!(w.shape(), &[3, 3, 60, 60]);
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let want = (2.0f64 / (9.0 * 60.0 + 9.0 * 60.0)).sqrt();
    assert!((std / want - 1.0).abs() < 0.1, "{std} vs {want}");
    assert!(m.param("deep.0.ssmrb.ssmm1.gamma.weight").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(m.param("head.bias").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_output_layer_is_identity_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in Variant::ALL {
        let mut m = build(&tiny().with_variant(v), 2).unwrap();
        m.zero_output_layer();
        let ys = random(&[12, 12], &mut rng, 0.0, 1.0);
        let yl = random(&[12, 12, 4], &mut rng, 0.0, 1.0);
        assert_eq!(m.forward(&ys, &yl, Some(0.7)).unwrap(), ys);
    }
}

#[test]
fn forward_shapes_for_patch_sizes() {
    let m = build(&ModelConfig::desk(), 0).unwrap();
    for side in [20, 32] {
        let out = m
            .forward(&Tensor::zeros([side, side]), &Tensor::full([side, side, 8], 0.3), None)
            .unwrap();
        assert_eq!(out.shape(), &[side, side]);
    }
}

// ---- SSMM ----------------------------------------------------------------

fn conv_same_oracle(x: &[f64], h: usize, w: usize, cin: usize, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (ks, cout) = (k.shape()[0], k.shape()[3]);
    let r = (ks / 2) as isize;
    let mut out = vec![0.0; h * w * cout];
    for i in 0..h {
        for j in 0..w {
            for o in 0..cout {
                let mut acc = b.data()[o];
                for di in 0..ks {
                    for dj in 0..ks {
                        let (si, sj) = (i as isize + di as isize - r, j as isize + dj as isize - r);
                        if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                            continue;
                        }
                        for c in 0..cin {
                            acc += x[(si as usize * w + sj as usize) * cin + c] * k.at(&[di, dj, c, o]);
                        }
                    }
                }
                out[(i * w + j) * cout + o] = acc;
            }
        }
    }
    out
}

struct SsmmParams {
    shared: (Tensor, Tensor),
    gamma: (Tensor, Tensor),
    beta: (Tensor, Tensor),
}

fn random_ssmm(k: usize, hidden: usize, c: usize, rng: &mut ChaCha8Rng) -> SsmmParams {
    SsmmParams {
        shared: (random(&[5, 5, k, hidden], rng, -0.2, 0.2), random(&[hidden], rng, -0.1, 0.1)),
        gamma: (random(&[1, 1, hidden, c], rng, -0.3, 0.3), random(&[c], rng, -0.1, 0.1)),
        beta: (random(&[1, 1, hidden, c], rng, -0.3, 0.3), random(&[c], rng, -0.1, 0.1)),
    }
}

fn ssmm_on_tape(f: &Tensor, m: &Tensor, p: &SsmmParams) -> Tensor {
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let mv = tape.constant(m.clone());
    let vars = bind_ssmm(&mut tape, p);
    let out = ssmm(&mut tape, fv, mv, &vars).unwrap();
    tape.value(out).clone()
}

fn bind_ssmm(tape: &mut Tape, p: &SsmmParams) -> smcnn_core::model::SsmmVars {
    let mut conv = |(w, b): &(Tensor, Tensor)| smcnn_core::model::ConvVars {
        weight: tape.leaf(w.clone()),
        bias: tape.leaf(b.clone()),
    };
    smcnn_core::model::SsmmVars {
        shared: conv(&p.shared),
        pointwise: None,
        gamma: conv(&p.gamma),
        beta: conv(&p.beta),
    }
}

/// Direct evaluation of `γ ⊙ (f − μ)/σ + β` with the generator
/// `γ = 1 + head_γ(relu(conv5(m)))`, `β = head_β(relu(conv5(m)))`.
fn ssmm_oracle(f: &Tensor, m: &Tensor, p: &SsmmParams) -> Vec<f64> {
    let (h, w, c) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let k = m.shape()[2];
    let hidden: Vec<f64> = conv_same_oracle(m.data(), h, w, k, &p.shared.0, &p.shared.1)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let hd = p.shared.0.shape()[3];
    let gamma = conv_same_oracle(&hidden, h, w, hd, &p.gamma.0, &p.gamma.1);
    let beta = conv_same_oracle(&hidden, h, w, hd, &p.beta.0, &p.beta.1);
    let n = (h * w) as f64;
    let mut out = vec![0.0; h * w * c];
    for ch in 0..c {
        let mut mu = 0.0;
        for px in 0..h * w {
            mu += f.data()[px * c + ch];
        }
        mu /= n;
        let mut var = 0.0;
        for px in 0..h * w {
            var += (f.data()[px * c + ch] - mu).powi(2);
        }
        let sigma = (var / n + 1e-5).sqrt();
        for px in 0..h * w {
            let i = px * c + ch;
            out[i] = (1.0 + gamma[i]) * (f.data()[i] - mu) / sigma + beta[i];
        }
    }
    out
}

#[test]
fn ssmm_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let f = random(&[9, 7, 5], &mut rng, -2.0, 3.0);
        let m = random(&[9, 7, 4], &mut rng, 0.0, 1.0);
        let p = random_ssmm(4, 6, 5, &mut rng);
        let got = ssmm_on_tape(&f, &m, &p);
        let want = ssmm_oracle(&f, &m, &p);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

fn identity_generator(k: usize, hidden: usize, c: usize, rng: &mut ChaCha8Rng) -> SsmmParams {
    SsmmParams {
        shared: (random(&[5, 5, k, hidden], rng, -0.2, 0.2), Tensor::zeros([hidden])),
        gamma: (Tensor::zeros([1, 1, hidden, c]), Tensor::zeros([c])),
        beta: (Tensor::zeros([1, 1, hidden, c]), Tensor::zeros([c])),
    }
}

#[test]
fn ssmm_with_unit_gamma_normalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = random(&[20, 20, 60], &mut rng, -3.0, 5.0);
    let m = random(&[20, 20, 4], &mut rng, 0.0, 1.0);
    let out = ssmm_on_tape(&f, &m, &identity_generator(4, 8, 60, &mut rng));
    for ch in 0..60 {
        let vals: Vec<f64> = out.data().iter().skip(ch).step_by(60).copied().collect();
        let mean = vals.iter().sum::<f64>() / 400.0;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 400.0).sqrt();
        assert!(mean.abs() <= 1e-10, "{mean}");
        assert!((0.999..=1.0).contains(&std), "{std}");
    }
}

#[test]
fn ssmm_of_constant_features_is_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = Tensor::full([6, 6, 3], 2.5);
    let m = random(&[6, 6, 4], &mut rng, 0.0, 1.0);
    let p = random_ssmm(4, 5, 3, &mut rng);
    let out = ssmm_on_tape(&f, &m, &p);
    let mut zero = p;
    zero.gamma = (Tensor::zeros([1, 1, 5, 3]), Tensor::full([3], -1.0));
    let beta = ssmm_on_tape(&Tensor::zeros([6, 6, 3]), &m, &zero);
    assert!(out.max_abs_diff(&beta) < 1e-12);
}

#[test]
fn normalization_delta_is_inside_sqrt() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new([2, 1], vec![0.0, 2.0]).unwrap());
    let y = normalize_channels(&mut tape, x).unwrap();
    let want = 1.0 / (1.0 + NORM_DELTA).sqrt();
    assert!((tape.value(y).data()[1] - want).abs() < 1e-15);
}

#[test]
fn ssmm_depends_on_band_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = random(&[8, 8, 4], &mut rng, -1.0, 1.0);
    let m = random(&[8, 8, 4], &mut rng, 0.0, 1.0);
    let reversed = Tensor::from_fn([8, 8, 4], |i| m.data()[i - i % 4 + 3 - i % 4]);
    let p = random_ssmm(4, 6, 4, &mut rng);
    let a = ssmm_on_tape(&f, &m, &p);
    let b = ssmm_on_tape(&f, &reversed, &p);
    assert!(a.max_abs_diff(&b) > 1e-6);
}

// ---- SSMRB ---------------------------------------------------------------

#[test]
fn ssmrb_with_zero_convs_is_identity_and_passes_gradients() {
    let cfg = tiny();
    let mut m = build(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = random(&[10, 10, 8], &mut rng, -1.0, 1.0);
    let yl = random(&[10, 10, 4], &mut rng, 0.0, 1.0);

    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, true);
    let fv = tape.leaf(f.clone());
    let mv = tape.leaf(yl.clone());
    let block = m.block_vars(&vars, 0).unwrap();
    let out = ssmrb(&mut tape, fv, mv, &block).unwrap();
    assert_eq!(tape.shape(out), &[10, 10, 8]);
    let weights = tape.constant(random(&[10, 10, 8], &mut rng, -1.0, 1.0));
    let prod = tape.mul(out, weights).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    for v in [fv, mv] {
        assert!(tape.grad(v).unwrap().data().iter().any(|g| g.abs() > 1e-8));
    }

    {
        let name = "deep.0.ssmrb.conv2.weight";
        let shape = m.param(name).unwrap().shape().to_vec();
        m.set_param(name, Tensor::zeros(shape)).unwrap();
    }
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, false);
    let fv = tape.constant(f.clone());
    let mv = tape.constant(yl);
    let block = m.block_vars(&vars, 0).unwrap();
    let out = ssmrb(&mut tape, fv, mv, &block).unwrap();
    assert_eq!(tape.value(out), &f);
}

// ---- whole model ---------------------------------------------------------

#[test]
fn full_model_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut m = build(&tiny(), 13).unwrap();
    // move zero-initialized tensors off zero so every path carries gradient
    let perturbed: Vec<Tensor> = m
        .params()
        .iter()
        .map(|p| Tensor::from_fn(p.shape().to_vec(), |i| p.data()[i] + rng.random_range(-0.05..0.05)))
        .collect();
    m.set_params(perturbed).unwrap();
    let ys = random(&[12, 12], &mut rng, 0.0, 1.0);
    let yl = random(&[12, 12, 4], &mut rng, 0.0, 1.0);
    let weights = random(&[12, 12], &mut rng, -1.0, 1.0);

    let build_loss = |tape: &mut Tape, vars: &[Var]| {
        let ysv = tape.constant(ys.clone());
        let ylv = tape.constant(yl.clone());
        let out = m.forward_graph(tape, vars, ysv, ylv, ylv).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod)
    };
    let report = gradcheck::check(m.params(), build_loss, 1, 1e-4, &mut rng);
    assert!(report.samples.len() >= 50, "{}", report.samples.len());
    println!("checked {} coordinates, {} skipped at kinks", report.samples.len(), report.skipped);
    assert!(report.skipped < report.samples.len());
    assert!(report.max_relative_error <= 1e-4, "{}", report.max_relative_error);
}

#[test]
fn checkpoint_round_trip_preserves_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for v in Variant::ALL {
        let m = build(&tiny().with_variant(v), 15).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        let ys = random(&[12, 12], &mut rng, 0.0, 1.0);
        let yl = random(&[12, 12, 4], &mut rng, 0.0, 1.0);
        assert_eq!(m.forward(&ys, &yl, Some(1.2)).unwrap(), back.forward(&ys, &yl, Some(1.2)).unwrap());
    }
}

#[test]
fn wavelength_variant_uses_single_channel_generator() {
    let m = build(&tiny().with_variant(Variant::WmCnn), 0).unwrap();
    assert_eq!(m.param("deep.0.ssmrb.ssmm1.shared.weight").unwrap().shape(), &[5, 5, 1, 6]);
    let yl = Tensor::zeros([12, 12, 4]);
    assert_eq!(modulation_input(Variant::SmCnn, &yl, None).unwrap(), yl);
    assert!(m.forward(&Tensor::zeros([12, 12]), &yl, None).is_err());
}
