//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N (<name>): PASS|FAIL` line (run with `--nocapture` to see
//! them); a FAIL line is followed by the panic that fails the test.
//!
//! Criteria 7-9 share one desk-scale training run (the expensive part).

mod common;

use std::sync::OnceLock;

use common::{assert_grads_close, dot, fd_grad, random_tensor, random_weights, rng};
use rand::Rng;

use melnyk_net::cam::{bias_effect, compute_cam, emit_overlay};
use melnyk_net::checkpoint;
use melnyk_net::data::{parse_gnt, write_gnt, GntRecord, Sample};
use melnyk_net::layers::{HeadKind, PoolingHead};
use melnyk_net::train::{evaluate, train_loop, EpochLog, TrainConfig};
use melnyk_net::{build, ModelConfig, Network, Tensor, Variant};

fn report(id: u32, name: &str, ok: bool) {
    println!(
        "criterion {id} ({name}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} ({name}) failed");
}

#[test]
fn criterion_01_parameter_counts() {
    let expected = [
        (Variant::A, 6_507_691usize),
        (Variant::B, 6_508_139),
        (Variant::C, 6_523_819),
    ];
    let mut ok = true;
    for (variant, want) in expected {
        let net = build::<f32>(&ModelConfig::new(variant, 3755), 0).unwrap();
        let (_, non_trainable, total) = net.param_count();
        if total != want || non_trainable != 5_184 {
            eprintln!("model {variant}: total {total}, expected {want}");
            ok = false;
        }
    }
    report(1, "parameter counts", ok);
}

#[test]
fn criterion_02_total_macs() {
    let report_a = melnyk_net::analysis::network_cost(&ModelConfig::new(Variant::A, 3755));
    let ok = report_a.total_macs == 1_201_384_256
        && (report_a.total_macs as f64 / 1e9 * 10.0).round() / 10.0 == 1.2;
    report(2, "total MACs", ok);
}

#[test]
fn criterion_03_reduction_ratios() {
    use melnyk_net::analysis::{
        mac_block_bottleneck, mac_block_plain, reduction_ratio, LayerCostSpec,
    };
    use num_rational::Ratio;
    // (feature size, C, M, M_B) for blocks 1-4
    let blocks = [
        (48u64, 64u64, 96u64, 64u64),
        (24, 96, 128, 96),
        (12, 128, 256, 192),
        (6, 256, 448, 256),
    ];
    let mut ok = true;
    for (i, (h, c, m, m_b)) in blocks.into_iter().enumerate() {
        let spec = LayerCostSpec::same_3x3(h, h, c, 0);
        let plain = mac_block_plain(&spec, m).unwrap();
        let bottleneck = mac_block_bottleneck(&spec, m, m_b).unwrap();
        if Ratio::new(plain, bottleneck) != reduction_ratio(c, m, m_b) {
            eprintln!("block {} ratio mismatch", i + 1);
            ok = false;
        }
    }
    ok &= reduction_ratio(256, 448, 256) == Ratio::new(3, 2);
    ok &= reduction_ratio(128, 256, 192) == Ratio::new(5, 4);
    report(3, "Eq. 5 identity", ok);
}

#[test]
fn criterion_04_gradient_correctness() {
    // each layer family against the central finite-difference oracle on
    // 20+ randomized small shapes; assert_grads_close enforces rel < 1e-4.
    // the full per-layer sweeps live in tests/grad_check.rs; this runs a
    // condensed version of each so the criterion stands on its own
    use melnyk_net::layers::{
        relu, relu_backward, AvgPool, BatchNorm, Conv2d, DenseSoftmax, Dropout, Mode,
    };
    for case in 0..20u64 {
        let mut r = rng(7000 + case);
        let (n, h, w) = (
            r.random_range(1..3usize),
            r.random_range(2..5usize),
            r.random_range(2..5usize),
        );
        let (c, m) = (r.random_range(1..3usize), r.random_range(1..3usize));

        // conv
        let x = random_tensor(&[n, h, w, c], &mut r, false);
        let kernel = random_tensor(&[3, 3, c, m], &mut r, false);
        let conv = Conv2d::new(kernel.clone()).unwrap();
        let weights = random_weights(n * h * w * m, &mut r);
        let upstream = Tensor::new(&[n, h, w, m], weights.clone()).unwrap();
        let (gx, gk) = conv.backward(&x, &upstream).unwrap();
        let num = fd_grad(
            &mut |v| {
                let p = Tensor::new(&[n, h, w, c], v.to_vec()).unwrap();
                dot(&weights, &conv.forward(&p).unwrap())
            },
            x.data(),
        );
        assert_grads_close(gx.data(), &num, "conv grad_x");
        let num = fd_grad(
            &mut |v| {
                let p = Conv2d::new(Tensor::new(&[3, 3, c, m], v.to_vec()).unwrap()).unwrap();
                dot(&weights, &p.forward(&x).unwrap())
            },
            kernel.data(),
        );
        assert_grads_close(gk.data(), &num, "conv grad_k");

        // batch norm, train mode (input gradient; params in grad_check.rs)
        let n2 = n.max(2);
        let xb = random_tensor(&[n2, h, w, c], &mut r, false);
        let wb = random_weights(n2 * h * w * c, &mut r);
        let mut bn = BatchNorm::<f64>::new(c, 1e-3, 0.99);
        let (_, cache) = bn.forward_train(&xb).unwrap();
        let up = Tensor::new(&[n2, h, w, c], wb.clone()).unwrap();
        let (gx, _, _) = bn.backward(&cache, &up).unwrap();
        let num = fd_grad(
            &mut |v| {
                let p = Tensor::new(&[n2, h, w, c], v.to_vec()).unwrap();
                let mut probe = BatchNorm::<f64>::new(c, 1e-3, 0.99);
                dot(&wb, &probe.forward_train(&p).unwrap().0)
            },
            xb.data(),
        );
        assert_grads_close(gx.data(), &num, "bn grad_x");

        // relu
        let xr = random_tensor(&[n, h, w, c], &mut r, true);
        let wr = random_weights(xr.len(), &mut r);
        let up = Tensor::new(&[n, h, w, c], wr.clone()).unwrap();
        let g = relu_backward(&xr, &up);
        let num = fd_grad(
            &mut |v| {
                let p = Tensor::new(&[n, h, w, c], v.to_vec()).unwrap();
                dot(&wr, &relu(&p))
            },
            xr.data(),
        );
        assert_grads_close(g.data(), &num, "relu grad_x");

        // avgpool
        let out = AvgPool.forward(&x).unwrap();
        let wp = random_weights(out.len(), &mut r);
        let up = Tensor::new(out.shape(), wp.clone()).unwrap();
        let g = AvgPool.backward(&[n, h, w, c], &up).unwrap();
        let num = fd_grad(
            &mut |v| {
                let p = Tensor::new(&[n, h, w, c], v.to_vec()).unwrap();
                dot(&wp, &AvgPool.forward(&p).unwrap())
            },
            x.data(),
        );
        assert_grads_close(g.data(), &num, "avgpool grad_x");

        // pooling heads
        for kind in [HeadKind::Gap, HeadKind::Gwoap, HeadKind::Gwap] {
            let feat = random_tensor(&[h, w, c], &mut r, false);
            let head: PoolingHead<f64> = match kind {
                HeadKind::Gap => PoolingHead::Gap,
                HeadKind::Gwoap => PoolingHead::Gwoap {
                    kernel: random_tensor(&[c], &mut r, false),
                },
                HeadKind::Gwap => PoolingHead::Gwap {
                    kernel: random_tensor(&[h, w, c], &mut r, false),
                },
            };
            let wh = random_weights(c, &mut r);
            let up = Tensor::new(&[c], wh.clone()).unwrap();
            let (gf, _) = head.backward(&feat, &up).unwrap();
            let num = fd_grad(
                &mut |v| {
                    let p = Tensor::new(&[h, w, c], v.to_vec()).unwrap();
                    dot(&wh, &head.forward(&p).unwrap())
                },
                feat.data(),
            );
            assert_grads_close(gf.data(), &num, "head grad_feat");
        }

        // dense softmax with cross-entropy
        let k = r.random_range(2..5usize);
        let xd = random_tensor(&[n, c], &mut r, false);
        let dense = DenseSoftmax {
            weights: random_tensor(&[c, k], &mut r, false),
            bias: random_tensor(&[k], &mut r, false),
        };
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let (_, probs) = dense.forward(&xd, false).unwrap();
        let mut gl = probs.clone();
        for (i, &l) in labels.iter().enumerate() {
            gl.data_mut()[i * k + l] -= 1.0;
        }
        let (gx, _, _) = dense.backward(&xd, &gl).unwrap();
        let num = fd_grad(
            &mut |v| {
                let p = Tensor::new(&[n, c], v.to_vec()).unwrap();
                let (_, pr) = dense.forward(&p, false).unwrap();
                -labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| pr.data()[i * k + l].ln())
                    .sum::<f64>()
            },
            xd.data(),
        );
        assert_grads_close(gx.data(), &num, "dense grad_x");

        // dropout with the mask frozen
        let len = r.random_range(2..20usize);
        let p_drop = r.random_range(0.1..0.8f64);
        let xo = random_tensor(&[len], &mut r, false);
        let layer = Dropout::new(p_drop, case);
        let (_, mask) = layer.forward(&xo, Mode::Train, 5);
        let mask = mask.unwrap();
        let wo = random_weights(len, &mut r);
        let up = Tensor::new(&[len], wo.clone()).unwrap();
        let g = layer.backward(&up, Some(&mask));
        let scale = 1.0 / (1.0 - p_drop);
        let num = fd_grad(
            &mut |v| {
                v.iter()
                    .zip(&mask)
                    .zip(&wo)
                    .map(|((&xv, &keep), &wv)| if keep { wv * xv * scale } else { 0.0 })
                    .sum()
            },
            xo.data(),
        );
        assert_grads_close(g.data(), &num, "dropout grad_x");
    }
    report(4, "gradient correctness", true);
}

#[test]
fn criterion_05_cam_logit_identity() {
    let mut worst: f64 = 0.0;
    for variant in [Variant::A, Variant::B, Variant::C] {
        let net = build::<f32>(&ModelConfig::new(variant, 23), 11).unwrap();
        let mut r = rng(variant.code() as u64);
        for _ in 0..100 {
            let sample = Sample {
                image: Tensor::from_fn(&[96, 96, 1], |_| r.random_range(0.0..1.0f32)),
                label: 0,
            };
            let cam = compute_cam(&net, &sample).unwrap();
            let image = sample.image.clone().reshaped(&[1, 96, 96, 1]).unwrap();
            let (logits, _, _) = net.forward_infer(&image, true).unwrap();
            let logit = logits.data()[cam.predicted_class] as f64;
            let sum: f64 = cam.raw_map.data().iter().map(|&v| v as f64).sum();
            let agg = match variant {
                Variant::A => sum / cam.raw_map.len() as f64,
                _ => sum,
            };
            worst = worst.max((agg - logit).abs() / logit.abs().max(1e-9));
        }
    }
    report(5, "CAM-logit identity", worst < 1e-4);
}

#[test]
fn criterion_06_pooling_head_reductions() {
    let mut r = rng(66);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (h, w, c) = (
            r.random_range(1..8usize),
            r.random_range(1..8usize),
            r.random_range(1..6usize),
        );
        let feat = random_tensor(&[h, w, c], &mut r, false);
        let inv_hw = 1.0 / (h * w) as f64;
        let gap = PoolingHead::Gap.forward(&feat).unwrap();
        let gwoap = PoolingHead::Gwoap {
            kernel: Tensor::full(&[c], inv_hw),
        }
        .forward(&feat)
        .unwrap();
        let gwap = PoolingHead::Gwap {
            kernel: Tensor::full(&[h, w, c], inv_hw),
        }
        .forward(&feat)
        .unwrap();
        for ((&a, &b), &g) in gwoap.data().iter().zip(gwap.data()).zip(gap.data()) {
            worst = worst.max((a - g).abs()).max((b - g).abs());
        }
    }
    report(6, "pooling-head reductions", worst < 1e-6);
}

struct ToyRun {
    net: Network<f32>,
    val: Vec<Sample>,
    logs: Vec<EpochLog>,
}

/// The shared desk-scale run: Model C, 10-class head, synthetic glyphs,
/// batch 32, early stop at 95% validation top-1.
fn toy_run() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let data = melnyk_net::data::synth_glyphs(10, 200, 7);
        // class-major layout: hold out the last 20 samples of each class
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, s) in data.into_iter().enumerate() {
            if i % 200 >= 180 {
                val.push(s);
            } else {
                train.push(s);
            }
        }
        let config = TrainConfig {
            batch_size: 32,
            max_epochs: 15,
            seed: 7,
            target_val_acc: Some(0.95),
            ..TrainConfig::default()
        };
        let mut net = build::<f32>(&ModelConfig::new(Variant::C, 10), 7).unwrap();
        let logs = train_loop(&mut net, &train, &val, &config, |log| {
            println!("  {log}");
        })
        .unwrap();
        ToyRun { net, val, logs }
    })
}

#[test]
fn criterion_07_desk_scale_training() {
    let run = toy_run();
    let reached = run
        .logs
        .iter()
        .any(|l| l.epoch <= 15 && l.val_acc >= 0.95);
    let decay_logged = run.logs.first().is_some_and(|l| l.lr == 0.1)
        && run.logs.get(1).is_some_and(|l| l.lr == 0.01);
    if !reached {
        eprintln!("final log: {:?}", run.logs.last());
    }
    report(7, "desk-scale training", reached && decay_logged);
}

#[test]
fn criterion_08_bias_zeroing_ablation() {
    let run = toy_run();
    let (with_bias, zero_bias, drop) = bias_effect(&run.net, &run.val).unwrap();
    println!("  top1 with bias {with_bias:.4}, zeroed {zero_bias:.4}, drop {drop:.5}");
    report(8, "bias-zeroing ablation", drop < 0.005);
}

#[test]
fn criterion_09_top_k_monotonicity() {
    let run = toy_run();
    let ks: Vec<usize> = (1..=10).collect();
    let accs = evaluate(&run.net, &run.val, &ks).unwrap();
    let monotone = accs.windows(2).all(|w| w[1] >= w[0]);
    let full = (accs[9] - 1.0).abs() < 1e-12;
    report(9, "top-k monotonicity", monotone && full);
}

#[test]
fn criterion_10_format_round_trips() {
    let mut ok = true;

    // GNT write -> parse identity on 1000 randomized records
    let mut r = rng(1010);
    let records: Vec<GntRecord> = (0..1000)
        .map(|_| {
            let w = r.random_range(1..12usize);
            let h = r.random_range(1..12usize);
            let bitmap: Vec<u8> = (0..w * h).map(|_| r.random::<u8>()).collect();
            GntRecord::new([r.random(), r.random()], w, h, bitmap).unwrap()
        })
        .collect();
    let parsed = parse_gnt(&write_gnt(&records)[..]).unwrap();
    ok &= parsed == records;

    // checkpoint save -> load bit-exact on all three variants
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::A, Variant::B, Variant::C] {
        let net = build::<f32>(&ModelConfig::new(variant, 7), 5).unwrap();
        let path = dir.path().join(format!("{variant}.ckpt"));
        checkpoint::save(&net, &path).unwrap();
        let loaded = checkpoint::load(&path, Some(variant)).unwrap();
        let mut orig = Vec::new();
        net.visit_params(&mut |p| orig.push(p.tensor.data().to_vec()));
        let mut back = Vec::new();
        loaded.visit_params(&mut |p| back.push(p.tensor.data().to_vec()));
        for (a, b) in orig.iter().zip(&back) {
            ok &= a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }

    // CAM PGM emission byte-stable across repeated runs
    let net = build::<f32>(&ModelConfig::new(Variant::C, 5), 9).unwrap();
    let sample = Sample {
        image: Tensor::from_fn(&[96, 96, 1], |i| ((i * 131) % 251) as f32 / 250.0),
        label: 0,
    };
    let cam = compute_cam(&net, &sample).unwrap();
    let (p1, o1) = emit_overlay(&sample, &cam, &dir.path().join("x")).unwrap();
    let (bytes_cam, bytes_overlay) = (std::fs::read(&p1).unwrap(), std::fs::read(&o1).unwrap());
    let cam2 = compute_cam(&net, &sample).unwrap();
    let (p2, o2) = emit_overlay(&sample, &cam2, &dir.path().join("y")).unwrap();
    ok &= std::fs::read(&p2).unwrap() == bytes_cam;
    ok &= std::fs::read(&o2).unwrap() == bytes_overlay;

    report(10, "format round-trips", ok);
}
