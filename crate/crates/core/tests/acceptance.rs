//! Acceptance suite. Each test covers one numbered criterion and prints a
//! PASS line on success (visible with --nocapture).

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempofuse_core::boxgen::{box_iou, boxes_from_components, extract_instances, DetectionBox};
use tempofuse_core::dataset::{generate_synthetic, split_corpus, ScanFrame, ScanSequence};
use tempofuse_core::fusion::{fuse_sequence, FusedSample};
use tempofuse_core::metrics::{accumulate_confusion, aggregate_map, compute_map};
use tempofuse_core::network::{
    count_parameters, LayerKind, Network, NetworkConfig,
};
use tempofuse_core::pipeline::{evaluate_sequences, EvalOptions};
use tempofuse_core::training::{
    cross_entropy_loss, load_checkpoint, sample_loss_and_grad, save_checkpoint, train,
    TrainConfig, TrainOptions,
};

fn sequence_of(m: usize) -> ScanSequence {
    let frames = (0..m)
        .map(|i| ScanFrame::new(i, Array2::zeros((2, 2)), Array2::zeros((2, 2))).unwrap())
        .collect();
    ScanSequence::new(
        "s".into(),
        frames,
        vec!["background".into(), "item_1".into()],
    )
    .unwrap()
}

#[test]
fn criterion_1_fusion_arithmetic() {
    let start = std::time::Instant::now();
    for m in 3..=300usize {
        let samples = fuse_sequence(&sequence_of(m)).unwrap();
        assert_eq!(samples.len(), m / 3, "M={m}: sample count");
        let discarded = m - samples.len() * 3;
        assert_eq!(discarded, m % 3, "M={m}: discard count");
        assert!(discarded <= 2, "M={m}: discards exceed two");
    }
    // Worked cases: M=9 gives 3 groups; M=101 gives 33 groups dropping
    // exactly the first and last scans.
    let nine = fuse_sequence(&sequence_of(9)).unwrap();
    assert_eq!(nine.len(), 3);
    let hundred_one = fuse_sequence(&sequence_of(101)).unwrap();
    assert_eq!(hundred_one.len(), 33);
    assert_eq!(hundred_one[0].source_indices, [1, 2, 3]);
    assert_eq!(hundred_one[32].source_indices, [97, 98, 99]);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, must be < 1 s");
    println!("acceptance 1 (fusion arithmetic): PASS");
}

#[test]
fn criterion_2_shape_and_normalization() {
    let start = std::time::Instant::now();
    let net = Network::new(NetworkConfig::desk(5, 11)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = Array3::from_shape_simple_fn((3, 64, 64), || rng.random_range(0.0..1.0));
    let logits = net.forward(&input).unwrap();
    assert_eq!(logits.logits.dim(), (5, 64, 64));

    let probs = logits.softmax();
    for y in 0..64 {
        for x in 0..64 {
            let mut sum = 0.0;
            for c in 0..5 {
                let p = probs[[c, y, x]];
                assert!(p >= 0.0);
                sum += p;
            }
            assert!((sum - 1.0).abs() <= 1e-6, "softmax sum at ({y},{x}): {sum}");
        }
    }

    // A non-divisible input round-trips through pad and crop.
    let odd = Array3::from_shape_simple_fn((3, 60, 60), || rng.random_range(0.0..1.0));
    let odd_logits = net.forward(&odd).unwrap();
    assert_eq!(odd_logits.logits.dim(), (5, 60, 60));
    assert!(odd_logits.logits.iter().all(|v| v.is_finite()));

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}, must be < 10 s");
    println!("acceptance 2 (shape/normalization): PASS");
}

#[test]
fn criterion_3_gradient_check() {
    let start = std::time::Instant::now();
    // Tiny architecture pinned for the check: two levels, widths [4, 8].
    let config = NetworkConfig {
        num_levels: 2,
        encoder_channels: vec![4, 8],
        decoder_channels: 8,
        num_classes: 3,
        crp_stages: 2,
        input_channels: 3,
        init_seed: 3,
    };
    let mut net = Network::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = Array3::from_shape_simple_fn((3, 8, 8), || rng.random_range(0.0..1.0));
    let target = Array2::from_shape_fn((8, 8), |(y, x)| ((y + x) % 3) as u8);

    // loss(uniform logits) must equal ln(n) to within 1e-9.
    let uniform = tempofuse_core::network::LogitMap {
        logits: Array3::from_elem((3, 8, 8), 0.125),
    };
    let uniform_loss = cross_entropy_loss(&[uniform], &[target.clone()]).unwrap();
    assert!(
        (uniform_loss - 3f64.ln()).abs() <= 1e-9,
        "uniform-logit loss {uniform_loss} vs ln(3) {}",
        3f64.ln()
    );

    // Analytic gradients of the scalar loss with respect to every parameter.
    let (logits, cache) = net.forward_train(&input).unwrap();
    let (_, dlogits) = sample_loss_and_grad(&logits, &target, 1).unwrap();
    let grads = net.backward(&cache, &dlogits);

    let loss_of = |net: &Network| -> f64 {
        let out = net.forward(&input).unwrap();
        cross_entropy_loss(&[out], &[target.clone()]).unwrap()
    };

    let step = 1e-3;
    let names: Vec<String> = net.named_params().iter().map(|(n, _)| n.clone()).collect();
    let mut checked = 0usize;
    let mut worst: (f64, String) = (0.0, String::new());
    for name in &names {
        let len = grads.get(name).unwrap().len();
        for idx in 0..len {
            let perturb = |net: &mut Network, delta: f64| {
                for (n, mut view) in net.named_params_mut() {
                    if &n == name {
                        view.as_slice_mut().unwrap()[idx] += delta;
                    }
                }
            };
            perturb(&mut net, step);
            let plus = loss_of(&net);
            perturb(&mut net, -2.0 * step);
            let minus = loss_of(&net);
            perturb(&mut net, step);

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(name).unwrap().as_slice().unwrap()[idx];
            let tol = 1e-3 * analytic.abs().max(numeric.abs()) + 1e-6;
            let err = (numeric - analytic).abs();
            if err > worst.0 {
                worst = (err, format!("{name}[{idx}]"));
            }
            assert!(
                err <= tol,
                "{name}[{idx}]: numeric {numeric:.9} vs analytic {analytic:.9} (err {err:.2e})"
            );
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}, must be < 2 min");
    println!(
        "acceptance 3 (gradient check): PASS — {checked} parameters, worst abs err {:.2e} at {}, {elapsed:.1?}",
        worst.0, worst.1
    );
}

#[test]
fn criterion_4_structural_checks() {
    // Residual units carry no normalization layers.
    let net = Network::new(NetworkConfig::desk(5, 0)).unwrap();
    let summary = net.layer_summary();
    let rcu_layers: Vec<&(String, LayerKind)> =
        summary.iter().filter(|(p, _)| p.contains("rcu")).collect();
    assert!(!rcu_layers.is_empty());
    assert!(
        rcu_layers.iter().all(|(_, k)| *k != LayerKind::Normalization),
        "residual units must not contain normalization layers"
    );
    assert!(summary.iter().all(|(_, k)| *k != LayerKind::Normalization));

    // After one backward pass on random data no parameter tensor has an
    // all-zero gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = Array3::from_shape_simple_fn((3, 64, 64), || rng.random_range(0.0..1.0));
    let target = Array2::from_shape_fn((64, 64), |(y, x)| ((y / 16 + x / 16) % 5) as u8);
    let (logits, cache) = net.forward_train(&input).unwrap();
    let (_, dlogits) = sample_loss_and_grad(&logits, &target, 1).unwrap();
    let grads = net.backward(&cache, &dlogits);
    for (name, grad) in grads.iter() {
        assert!(
            grad.iter().any(|&v| v != 0.0),
            "parameter {name} received an all-zero gradient"
        );
    }

    // Analytic parameter count matches an independent layer-by-layer sum for
    // the desk-scale preset: K=4, encoder [16, 32, 64, 128], decoder 64, n=5.
    let config = NetworkConfig::desk(5, 0);
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let mut oracle = 0usize;
    // Encoder: stride-2 conv + one residual unit (two 3x3 convs) per level.
    oracle += conv(3, 16, 3) + 2 * conv(16, 16, 3);
    oracle += conv(16, 32, 3) + 2 * conv(32, 32, 3);
    oracle += conv(32, 64, 3) + 2 * conv(64, 64, 3);
    oracle += conv(64, 128, 3) + 2 * conv(128, 128, 3);
    // Decoder, deepest level first. Each level: 1x1 projection, input RCU,
    // fusion block (two 3x3 convs, absent at the deepest level), two CRP
    // stage convs, output RCU. Decoder width 64.
    let rcu = 2 * conv(64, 64, 3);
    let crp = 2 * conv(64, 64, 3);
    let mfb = 2 * conv(64, 64, 3);
    oracle += conv(128, 64, 1) + rcu + crp + rcu; // level 4 (no fusion block)
    oracle += conv(64, 64, 1) + rcu + mfb + crp + rcu; // level 3
    oracle += conv(32, 64, 1) + rcu + mfb + crp + rcu; // level 2
    oracle += conv(16, 64, 1) + rcu + mfb + crp + rcu; // level 1
    // Classifier head.
    oracle += conv(64, 5, 1);

    assert_eq!(count_parameters(&config).unwrap(), oracle);
    assert_eq!(net.parameter_count(), oracle);
    // Frozen regression value for this preset.
    assert_eq!(oracle, 1_613_381);

    println!("acceptance 4 (structural checks): PASS — {oracle} parameters");
}

#[test]
fn criterion_5_metrics_oracle_equivalence() {
    let start = std::time::Instant::now();
    let n = 4usize;
    let mut rng = ChaCha8Rng::seed_from_u64(55);

    // 100 random 16x16 mask pairs: metrics from ConfusionCounts must equal a
    // naive per-pixel double loop exactly.
    for trial in 0..100 {
        let pred = Array2::from_shape_fn((16, 16), |_| rng.random_range(0..n as u8));
        let truth = Array2::from_shape_fn((16, 16), |_| rng.random_range(0..n as u8));
        let counts = accumulate_confusion(&pred, &truth, n).unwrap();

        let mut tp = vec![0u64; n];
        let mut fp = vec![0u64; n];
        let mut fn_ = vec![0u64; n];
        for y in 0..16 {
            for x in 0..16 {
                let (p, t) = (pred[[y, x]] as usize, truth[[y, x]] as usize);
                for c in 0..n {
                    match (p == c, t == c) {
                        (true, true) => tp[c] += 1,
                        (true, false) => fp[c] += 1,
                        (false, true) => fn_[c] += 1,
                        _ => {}
                    }
                }
            }
        }
        for c in 0..n {
            let denom = tp[c] + fp[c] + fn_[c];
            let oracle_iou = if denom == 0 {
                None
            } else {
                Some(tp[c] as f64 / denom as f64)
            };
            assert_eq!(counts.iou(c), oracle_iou, "trial {trial} class {c} IoU");
        }
        let (stp, sfp, sfn): (u64, u64, u64) = (
            tp[1..].iter().sum(),
            fp[1..].iter().sum(),
            fn_[1..].iter().sum(),
        );
        let prf = counts.prf();
        assert_eq!(prf.recall, stp as f64 / (stp + sfn) as f64, "trial {trial} recall");
        assert_eq!(prf.precision, stp as f64 / (stp + sfp) as f64, "trial {trial} precision");
        let (r, p) = (prf.recall, prf.precision);
        assert_eq!(prf.f_score, 2.0 * r * p / (r + p), "trial {trial} f-score");
    }

    // AP on an enumerated toy detection set equals the hand-built PR area.
    let gt_at = |y: usize| DetectionBox {
        class_id: 1,
        row_min: y,
        row_max: y + 3,
        col_min: y,
        col_max: y + 3,
        confidence: 1.0,
        pixel_count: 16,
    };
    let det_at = |y: usize, conf: f64| DetectionBox {
        confidence: conf,
        ..gt_at(y)
    };
    let gts = vec![vec![gt_at(0), gt_at(10), gt_at(20)]];
    let dets = vec![vec![
        det_at(0, 0.9),   // hit
        det_at(40, 0.8),  // miss
        det_at(10, 0.7),  // hit
        det_at(20, 0.6),  // hit
    ]];
    let report = compute_map(&dets, &gts, 2, 0.5).unwrap();
    // Oracle: enumerate the 4 prefix operating points, apply the precision
    // envelope, and integrate rectangles between recall steps.
    let flags = [true, false, true, true];
    let total_gt = 3.0;
    let mut points = Vec::new();
    let mut tp_so_far = 0.0;
    for (i, &hit) in flags.iter().enumerate() {
        if hit {
            tp_so_far += 1.0;
        }
        points.push((tp_so_far / total_gt, tp_so_far / (i as f64 + 1.0)));
    }
    let mut oracle_ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let (recall, _) = points[i];
        if recall > prev_recall {
            let envelope = points[i..]
                .iter()
                .map(|&(_, p)| p)
                .fold(f64::NEG_INFINITY, f64::max);
            oracle_ap += (recall - prev_recall) * envelope;
            prev_recall = recall;
        }
    }
    let ap = report.per_class_ap[1].unwrap();
    assert!(
        (ap - oracle_ap).abs() <= 1e-9,
        "AP {ap} vs enumerated oracle {oracle_ap}"
    );

    // Mean of the four reference per-class APs.
    let map = aggregate_map(&[
        None,
        Some(0.9610),
        Some(0.9051),
        Some(0.9706),
        Some(0.9322),
    ])
    .unwrap();
    assert!(
        (map - 0.9422).abs() <= 1e-4,
        "mAP of the four reference APs: {map}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, must be < 5 s");
    println!("acceptance 5 (metrics oracle equivalence): PASS");
}

#[test]
fn criterion_6_boxgen_oracle() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(66);

    for trial in 0..100 {
        // Random blobby masks: a few rectangles per class over noise speckle.
        let mut mask: Array2<u8> = Array2::zeros((24, 24));
        for _ in 0..rng.random_range(1..6) {
            let class = rng.random_range(1..4u8);
            let y0 = rng.random_range(0..20usize);
            let x0 = rng.random_range(0..20usize);
            let h = rng.random_range(1..5usize);
            let w = rng.random_range(1..5usize);
            for y in y0..(y0 + h).min(24) {
                for x in x0..(x0 + w).min(24) {
                    mask[[y, x]] = class;
                }
            }
        }
        for _ in 0..6 {
            let y = rng.random_range(0..24usize);
            let x = rng.random_range(0..24usize);
            mask[[y, x]] = rng.random_range(0..4u8);
        }

        let comps = extract_instances(&mask, 1);
        let probs = Array3::from_elem((4, 24, 24), 0.5);
        let boxes = boxes_from_components(&comps, &probs);
        assert_eq!(comps.len(), boxes.len());
        for (comp, b) in comps.iter().zip(boxes.iter()) {
            // Brute-force min/max scan over the component's pixels.
            let rows: Vec<usize> = comp.pixels.iter().map(|&(y, _)| y).collect();
            let cols: Vec<usize> = comp.pixels.iter().map(|&(_, x)| x).collect();
            assert_eq!(b.row_min, *rows.iter().min().unwrap(), "trial {trial}");
            assert_eq!(b.row_max, *rows.iter().max().unwrap(), "trial {trial}");
            assert_eq!(b.col_min, *cols.iter().min().unwrap(), "trial {trial}");
            assert_eq!(b.col_max, *cols.iter().max().unwrap(), "trial {trial}");
            for &(y, x) in &comp.pixels {
                assert!(b.contains(y, x), "trial {trial}: pixel outside box");
            }
        }
    }

    // Inclusive-convention spot values.
    let unit = |r0: usize, c0: usize, r1: usize, c1: usize| DetectionBox {
        class_id: 1,
        row_min: r0,
        row_max: r1,
        col_min: c0,
        col_max: c1,
        confidence: 1.0,
        pixel_count: 0,
    };
    let a = unit(0, 0, 1, 1);
    assert_eq!(box_iou(&a, &a), 1.0);
    assert_eq!(box_iou(&a, &unit(5, 5, 6, 6)), 0.0);
    let overlapping = unit(1, 1, 2, 2);
    assert!((box_iou(&a, &overlapping) - 1.0 / 7.0).abs() < 1e-15);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, must be < 5 s");
    println!("acceptance 6 (boxgen oracle): PASS");
}

#[test]
fn criterion_7_end_to_end_overfit() {
    let start = std::time::Instant::now();
    let n = 5usize;
    let corpus = generate_synthetic(4, 9, (64, 64), n, 5).unwrap();
    let split = split_corpus(corpus, 0.7, 5).unwrap();
    let train_samples: Vec<FusedSample> = split
        .train
        .iter()
        .flat_map(|s| fuse_sequence(s).unwrap())
        .collect();
    assert_eq!(split.train.len(), 3);
    assert_eq!(train_samples.len(), 9);

    let mut net = Network::new(NetworkConfig::tiny(n, 7)).unwrap();
    let config = TrainConfig {
        batch_size: 1,
        learning_rate: 0.004,
        momentum: 0.9,
        epochs: 200,
        seed: 7,
        checkpoint_every: 0,
    };
    train(&mut net, &train_samples, &config, &TrainOptions::default()).unwrap();

    let opts = EvalOptions::default();
    let train_outcome = evaluate_sequences(&net, &split.train, &opts).unwrap();
    let eval_outcome = evaluate_sequences(&net, &split.eval, &opts).unwrap();
    assert!(
        train_outcome.report.miou >= 0.95,
        "training-set mIoU {:.4} below 0.95",
        train_outcome.report.miou
    );
    assert!(
        eval_outcome.report.miou >= 0.6,
        "held-out mIoU {:.4} below 0.6",
        eval_outcome.report.miou
    );

    // Checkpoint round-trip must reproduce logits bit-exactly.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("overfit.ckpt");
    save_checkpoint(&path, &net, &Default::default(), config.epochs, config.seed).unwrap();
    let (reloaded, _, _) = load_checkpoint(&path).unwrap();
    let before = net.forward(&train_samples[0].channels).unwrap();
    let after = reloaded.forward(&train_samples[0].channels).unwrap();
    assert_eq!(before.logits, after.logits, "checkpoint round-trip changed logits");

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 15.0 * 60.0,
        "took {elapsed:?}, must be <= 15 min"
    );
    println!(
        "acceptance 7 (end-to-end overfit): PASS — train mIoU {:.4}, eval mIoU {:.4}, {elapsed:.0?}",
        train_outcome.report.miou, eval_outcome.report.miou
    );
}
