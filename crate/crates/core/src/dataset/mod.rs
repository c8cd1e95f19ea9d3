//! Scan sequences, corpus layout, train/eval splits and synthetic data.

mod corpus;
mod synthetic;

pub use corpus::{load_corpus, load_sequence_dir, save_corpus, LoadedSequence};
pub use synthetic::generate_synthetic;

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One grayscale scan plus its per-pixel class mask.
#[derive(Debug, Clone)]
pub struct ScanFrame {
    /// Position within the sequence.
    pub index: usize,
    /// N1 x N2 intensities in [0, 1].
    pub image: Array2<f64>,
    /// N1 x N2 class labels, 0 = background.
    pub mask: Array2<u8>,
}

impl ScanFrame {
    pub fn new(index: usize, image: Array2<f64>, mask: Array2<u8>) -> Result<Self> {
        if image.dim() != mask.dim() {
            return Err(Error::DimensionMismatch {
                context: format!("frame {index}: image vs mask"),
                expected: image.dim(),
                got: mask.dim(),
            });
        }
        Ok(Self { index, image, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dim()
    }
}

/// Temporally ordered frames of one bag, with the corpus class list.
#[derive(Debug, Clone)]
pub struct ScanSequence {
    pub id: String,
    pub frames: Vec<ScanFrame>,
    /// Class names; index 0 is always "background".
    pub class_names: Vec<String>,
}

impl ScanSequence {
    pub fn new(id: String, frames: Vec<ScanFrame>, class_names: Vec<String>) -> Result<Self> {
        if class_names.is_empty() || class_names[0] != "background" {
            return Err(Error::InvalidConfig(format!(
                "sequence {id}: class list must start with \"background\""
            )));
        }
        if class_names.len() > 256 {
            return Err(Error::InvalidConfig(format!(
                "sequence {id}: at most 256 classes supported, got {}",
                class_names.len()
            )));
        }
        if frames.is_empty() {
            return Err(Error::InvalidConfig(format!("sequence {id}: no frames")));
        }
        let dims = frames[0].dims();
        let first_index = frames[0].index;
        let n = class_names.len();
        for (pos, frame) in frames.iter().enumerate() {
            if frame.dims() != dims {
                return Err(Error::DimensionMismatch {
                    context: format!("sequence {id}, frame index {}", frame.index),
                    expected: dims,
                    got: frame.dims(),
                });
            }
            if frame.index != first_index + pos {
                return Err(Error::InvalidConfig(format!(
                    "sequence {id}: frame indices not consecutive at position {pos} (index {})",
                    frame.index
                )));
            }
            if let Some(&v) = frame.mask.iter().max() {
                if (v as usize) >= n {
                    return Err(Error::MaskValueOutOfRange {
                        value: v as u32,
                        num_classes: n,
                        context: format!("sequence {id}, frame index {}", frame.index),
                    });
                }
            }
        }
        Ok(Self {
            id,
            frames,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Sequence-level train/eval partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ScanSequence>,
    pub eval: Vec<ScanSequence>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn train_frames(&self) -> usize {
        self.train.iter().map(ScanSequence::len).sum()
    }

    pub fn eval_frames(&self) -> usize {
        self.eval.iter().map(ScanSequence::len).sum()
    }
}

/// Splits whole sequences into train/eval so the frame-count ratio lands as
/// close to `train_fraction` as sequence granularity allows. Deterministic for
/// a fixed seed; both sides are always non-empty.
pub fn split_corpus(
    sequences: Vec<ScanSequence>,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if sequences.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 sequences to split, got {}",
            sequences.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut rng);

    let total_frames: usize = sequences.iter().map(ScanSequence::len).sum();
    let target = train_fraction * total_frames as f64;
    let mut best_k = 1;
    let mut best_gap = f64::INFINITY;
    let mut prefix = 0usize;
    for (pos, &idx) in order.iter().enumerate() {
        prefix += sequences[idx].len();
        let k = pos + 1;
        if k >= sequences.len() {
            break; // eval side must stay non-empty
        }
        let gap = (prefix as f64 - target).abs();
        if gap < best_gap {
            best_gap = gap;
            best_k = k;
        }
    }

    let train_idx: std::collections::HashSet<usize> = order[..best_k].iter().copied().collect();
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (idx, seq) in sequences.into_iter().enumerate() {
        if train_idx.contains(&idx) {
            train.push(seq);
        } else {
            eval.push(seq);
        }
    }
    Ok(DatasetSplit { train, eval, seed })
}
