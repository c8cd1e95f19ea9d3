// Scratch probe: full-network finite-difference sweep at several step sizes
// and input seeds, reporting worst relative error per configuration.
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempofuse_core::network::{Network, NetworkConfig};
use tempofuse_core::training::{cross_entropy_loss, sample_loss_and_grad};

fn main() {
    let config = NetworkConfig {
        num_levels: 2,
        encoder_channels: vec![4, 8],
        decoder_channels: 8,
        num_classes: 3,
        crp_stages: 2,
        input_channels: 3,
        init_seed: 3,
    };
    let target = Array2::from_shape_fn((8, 8), |(y, x)| ((y + x) % 3) as u8);

    for input_seed in [4u64, 0, 1, 2, 5, 8, 13, 21] {
        let mut net = Network::new(config.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(input_seed);
        let input = Array3::from_shape_simple_fn((3, 8, 8), || rng.random_range(0.0..1.0));

        let (logits, cache) = net.forward_train(&input).unwrap();
        let (_, dlogits) = sample_loss_and_grad(&logits, &target, 1).unwrap();
        let grads = net.backward(&cache, &dlogits);
        let loss_of = |net: &Network| -> f64 {
            cross_entropy_loss(&[net.forward(&input).unwrap()], &[target.clone()]).unwrap()
        };

        for step in [1e-3f64, 1e-4, 1e-5] {
            let names: Vec<String> = net.named_params().iter().map(|(n, _)| n.clone()).collect();
            let mut worst = (0.0f64, String::new(), 0.0, 0.0);
            let mut fails = 0usize;
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
                    if err > tol {
                        fails += 1;
                    }
                    let rel = err / (analytic.abs().max(numeric.abs()) + 1e-12);
                    if rel > worst.0 {
                        worst = (rel, format!("{name}[{idx}]"), numeric, analytic);
                    }
                }
            }
            println!(
                "seed {input_seed} step {step:.0e}: {fails} failures, worst rel {:.2e} at {} (num {:.8} ana {:.8})",
                worst.0, worst.1, worst.2, worst.3
            );
        }
    }
}
