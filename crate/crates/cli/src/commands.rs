use crate::overlay;
use crate::settings::{resolve_seed, ConfigFile};
use crate::{EvalArgs, GenerateArgs, InferArgs, TrainArgs};
use anyhow::{bail, Context, Result};
use std::fs;
use std::path::Path;
use tempofuse_core::boxgen::{boxes_from_components, extract_instances, format_box_outputs, BoxRecord};
use tempofuse_core::dataset::{
    generate_synthetic, load_corpus, load_sequence_dir, save_corpus, split_corpus, ScanSequence,
};
use tempofuse_core::fusion::fuse_sequence;
use tempofuse_core::network::{Network, NetworkConfig};
use tempofuse_core::pipeline::{evaluate_sequences, truth_boxes, EvalOptions};
use tempofuse_core::training::{load_checkpoint, train as run_training, TrainConfig, TrainOptions};

pub fn generate(args: GenerateArgs) -> Result<()> {
    let config = ConfigFile::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &config)?;
    let sequences = config.resolve(args.sequences, "sequences", 4)?;
    let frames = config.resolve(args.frames, "frames", 9)?;
    let size = config.resolve(args.size, "size", 64)?;
    let classes = config.resolve(args.classes, "classes", 5)?;

    let corpus = generate_synthetic(sequences, frames, (size, size), classes, seed)?;
    save_corpus(&args.out, &corpus)?;
    let total_frames: usize = corpus.iter().map(ScanSequence::len).sum();
    println!(
        "generated {} sequences, {} frames, {}x{} px, {} classes, seed {} -> {}",
        corpus.len(),
        total_frames,
        size,
        size,
        classes,
        seed,
        args.out.display()
    );
    Ok(())
}

fn load_split(
    data: &Path,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<ScanSequence>, Vec<ScanSequence>, Vec<String>)> {
    let corpus = load_corpus(data)?;
    if corpus.is_empty() {
        bail!("corpus at {} contains no sequences", data.display());
    }
    let class_names = corpus[0].class_names.clone();
    let split = split_corpus(corpus, train_fraction, seed)?;
    Ok((split.train, split.eval, class_names))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = ConfigFile::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &config)?;
    let preset: String = config.resolve(args.preset.clone(), "preset", "tiny".to_string())?;
    let epochs = config.resolve(args.epochs, "epochs", 10)?;
    let batch_size = config.resolve(args.batch_size, "batch-size", 4)?;
    let lr = config.resolve(args.lr, "lr", 0.0005)?;
    let momentum = config.resolve(args.momentum, "momentum", 0.9)?;
    let train_fraction = config.resolve(args.train_fraction, "train-fraction", 0.7)?;
    let checkpoint_every = config.resolve(args.checkpoint_every, "checkpoint-every", 0)?;
    let deterministic =
        args.deterministic || config.get::<bool>("deterministic")?.unwrap_or(false);

    println!(
        "tempofuse train: preset={preset} lr={lr} momentum={momentum} batch_size={batch_size} \
         epochs={epochs} seed={seed} deterministic={deterministic}"
    );

    let (train_seqs, eval_seqs, class_names) = load_split(&args.data, train_fraction, seed)?;
    println!(
        "corpus: {} train / {} eval sequences, {} classes",
        train_seqs.len(),
        eval_seqs.len(),
        class_names.len()
    );
    let mut samples = Vec::new();
    for seq in &train_seqs {
        samples.extend(fuse_sequence(seq)?);
    }
    println!("fused {} training samples", samples.len());

    let net_config = NetworkConfig::preset(&preset, class_names.len(), seed)?;
    let mut network = Network::new(net_config)?;
    println!("parameters: {}", network.parameter_count());

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output dir {}", args.out.display()))?;
    let train_config = TrainConfig {
        batch_size,
        learning_rate: lr,
        momentum,
        epochs,
        seed,
        checkpoint_every,
    };
    let options = TrainOptions {
        checkpoint_path: Some(args.out.join("model.ckpt")),
        periodic_pattern: Some(
            args.out
                .join("checkpoint_epoch{epoch}.ckpt")
                .to_string_lossy()
                .into_owned(),
        ),
        log_path: Some(args.out.join("train.log")),
        deterministic,
        verbose: true,
    };
    let state = run_training(&mut network, &samples, &train_config, &options)?;
    println!(
        "done: {} steps, final mean loss {:.6}, checkpoint {}",
        state.step,
        state.running_loss,
        args.out.join("model.ckpt").display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let config = ConfigFile::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &config)?;
    let split_side: String = config.resolve(args.split.clone(), "split", "eval".to_string())?;
    let train_fraction = config.resolve(args.train_fraction, "train-fraction", 0.7)?;
    let iou_threshold = config.resolve(args.iou_threshold, "iou-threshold", 0.5)?;
    let min_area = config.resolve(args.min_area, "min-area", 9)?;

    let (network, _buffers, meta) = load_checkpoint(&args.checkpoint)?;
    let (train_seqs, eval_seqs, class_names) = load_split(&args.data, train_fraction, seed)?;
    if network.config.num_classes != class_names.len() {
        bail!(
            "checkpoint was trained for {} classes but the corpus declares {}",
            network.config.num_classes,
            class_names.len()
        );
    }
    let sequences = match split_side.as_str() {
        "eval" => &eval_seqs,
        "train" => &train_seqs,
        other => bail!("--split must be train or eval, got {other}"),
    };
    println!(
        "evaluating checkpoint from epoch {} on the {split_side} split ({} sequences)",
        meta.epoch,
        sequences.len()
    );

    let outcome = evaluate_sequences(
        &network,
        sequences,
        &EvalOptions {
            iou_threshold,
            min_area,
        },
    )?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output dir {}", args.out.display()))?;
    let text = outcome.report.to_text();
    fs::write(args.out.join("report.txt"), &text)?;
    fs::write(args.out.join("report.json"), outcome.report.to_json()?)?;

    let mut records = Vec::new();
    for pred in &outcome.predictions {
        for b in &pred.boxes {
            records.push(BoxRecord::new(&pred.image_id, &class_names, b));
        }
    }
    let (box_text, box_json) = format_box_outputs(&records)?;
    fs::write(args.out.join("boxes.txt"), box_text)?;
    fs::write(args.out.join("boxes.json"), box_json)?;

    print!("{text}");
    println!("report written to {}", args.out.display());
    Ok(())
}

pub fn infer(args: InferArgs) -> Result<()> {
    let config = ConfigFile::load(args.config.as_deref())?;
    let min_area = config.resolve(args.min_area, "min-area", 9)?;
    let (network, _buffers, _meta) = load_checkpoint(&args.checkpoint)?;
    let n = network.config.num_classes;

    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| {
            let sibling = args.input.parent().map(|p| p.join("manifest"));
            sibling.filter(|p| p.exists())
        });
    let class_names: Vec<String> = match manifest_path {
        Some(path) => fs::read_to_string(&path)
            .with_context(|| format!("reading manifest {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => (0..n)
            .map(|c| {
                if c == 0 {
                    "background".to_string()
                } else {
                    format!("class_{c}")
                }
            })
            .collect(),
    };
    if class_names.len() != n {
        bail!(
            "checkpoint expects {n} classes but the manifest names {}",
            class_names.len()
        );
    }

    let loaded = load_sequence_dir(&args.input, class_names.clone())?;
    let samples = fuse_sequence(&loaded.sequence)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output dir {}", args.out.display()))?;

    let mut records = Vec::new();
    for sample in &samples {
        let mid = sample.source_indices[1];
        let image_id = format!("{}/{}", loaded.sequence.id, mid);
        let logits = network.forward(&sample.channels)?;
        let probabilities = logits.softmax();
        let predicted = logits.predicted_mask();

        // Predicted label map.
        let (h, w) = predicted.dim();
        let mut mask_img = image::GrayImage::new(w as u32, h as u32);
        for ((y, x), &v) in predicted.indexed_iter() {
            mask_img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
        mask_img.save(args.out.join(format!("pred_{mid:03}.png")))?;

        // Boxes.
        let comps = extract_instances(&predicted, min_area);
        let boxes = boxes_from_components(&comps, &probabilities);
        for b in &boxes {
            records.push(BoxRecord::new(&image_id, &class_names, b));
        }

        // Overlay: middle scan as base, truth boxes in blue under predicted
        // boxes in green.
        let middle = sample.channels.index_axis(ndarray::Axis(0), 1);
        let mut canvas = overlay::grayscale_to_rgb(middle);
        if loaded.has_truth {
            for tb in truth_boxes(&sample.target) {
                overlay::draw_box(&mut canvas, &tb, overlay::TRUTH);
            }
        }
        for b in &boxes {
            overlay::draw_box(&mut canvas, b, overlay::PREDICTED);
        }
        canvas.save(args.out.join(format!("overlay_{mid:03}.png")))?;
    }

    let (box_text, box_json) = format_box_outputs(&records)?;
    fs::write(args.out.join("boxes.txt"), box_text)?;
    fs::write(args.out.join("boxes.json"), box_json)?;
    println!(
        "wrote {} fused predictions ({} detections) to {}",
        samples.len(),
        records.len(),
        args.out.display()
    );
    Ok(())
}
