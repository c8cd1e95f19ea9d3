// Scratch harness for tuning the overfit hyperparameters. Not part of the
// deliverable surface; run with:
//   cargo run -p tempofuse-core --example tune --release
use ndarray::Array2;
use std::time::Instant;
use tempofuse_core::dataset::{generate_synthetic, split_corpus};
use tempofuse_core::fusion::{fuse_sequence, FusedSample};
use tempofuse_core::metrics::ConfusionCounts;
use tempofuse_core::network::{Network, NetworkConfig};
use tempofuse_core::training::{train, TrainConfig, TrainOptions};

fn miou_on(net: &Network, samples: &[FusedSample], n: usize) -> f64 {
    let mut counts = ConfusionCounts::new(n);
    for s in samples {
        let logits = net.forward(&s.channels).unwrap();
        let pred: Array2<u8> = logits.predicted_mask();
        counts.accumulate(&pred, &s.target).unwrap();
    }
    let per: Vec<String> = (1..n)
        .map(|c| match counts.iou(c) {
            Some(v) => format!("c{c}={v:.3}"),
            None => format!("c{c}=--"),
        })
        .collect();
    println!("  per-class: {}", per.join(" "));
    counts.miou().unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let bs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(200);

    let n = 5;
    let data_seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(7);
    let seqs = generate_synthetic(4, 9, (64, 64), n, data_seed).unwrap();
    let split = split_corpus(seqs, 0.7, data_seed).unwrap();
    let train_samples: Vec<FusedSample> = split
        .train
        .iter()
        .flat_map(|s| fuse_sequence(s).unwrap())
        .collect();
    let eval_samples: Vec<FusedSample> = split
        .eval
        .iter()
        .flat_map(|s| fuse_sequence(s).unwrap())
        .collect();
    println!(
        "train sequences {} ({} samples), eval sequences {} ({} samples)",
        split.train.len(),
        train_samples.len(),
        split.eval.len(),
        eval_samples.len()
    );

    let model: String = args.get(4).cloned().unwrap_or_else(|| "tiny".to_string());
    let config = match model.as_str() {
        "k3" => NetworkConfig {
            num_levels: 3,
            encoder_channels: vec![8, 16, 32],
            decoder_channels: 24,
            num_classes: n,
            crp_stages: 2,
            input_channels: 3,
            init_seed: 7,
        },
        "wide" => NetworkConfig {
            num_levels: 2,
            encoder_channels: vec![12, 24],
            decoder_channels: 24,
            num_classes: n,
            crp_stages: 2,
            input_channels: 3,
            init_seed: 7,
        },
        _ => NetworkConfig::tiny(n, 7),
    };
    let mut net = Network::new(config).unwrap();
    println!("params: {}", net.parameter_count());
    let config = TrainConfig {
        batch_size: bs,
        learning_rate: lr,
        momentum: 0.9,
        epochs,
        seed: 7,
        checkpoint_every: 0,
    };
    let t0 = Instant::now();
    let state = train(&mut net, &train_samples, &config, &TrainOptions::default()).unwrap();
    let dt = t0.elapsed();
    println!(
        "lr={lr} bs={bs} epochs={epochs}: final loss {:.6} in {:.1?} ({} steps)",
        state.running_loss, dt, state.step
    );
    for (i, l) in state.epoch_losses.iter().enumerate() {
        if (i + 1) % 20 == 0 || i == 0 {
            println!("  epoch {:3}: {:.6}", i + 1, l);
        }
    }
    let train_miou = miou_on(&net, &train_samples, n);
    let eval_miou = miou_on(&net, &eval_samples, n);
    println!("train mIoU {train_miou:.4}  eval mIoU {eval_miou:.4}");

    // Where do true-class pixels go on eval? (row = truth, cols = predicted)
    let mut table = vec![vec![0usize; n]; n];
    let mut mean_intensity = vec![(0.0f64, 0usize); n];
    for s in &eval_samples {
        let pred = net.forward(&s.channels).unwrap().predicted_mask();
        for ((y, x), &t) in s.target.indexed_iter() {
            table[t as usize][pred[[y, x]] as usize] += 1;
            let m = &mut mean_intensity[t as usize];
            m.0 += s.channels[[1, y, x]];
            m.1 += 1;
        }
    }
    for t in 0..n {
        let total: usize = table[t].iter().sum();
        if total == 0 {
            continue;
        }
        let dist: Vec<String> = (0..n)
            .map(|p| format!("{p}:{:.2}", table[t][p] as f64 / total as f64))
            .collect();
        let mean = mean_intensity[t].0 / mean_intensity[t].1.max(1) as f64;
        println!("truth {t} (mean I {mean:.3}): {}", dist.join(" "));
    }
}
