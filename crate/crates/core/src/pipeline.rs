//! End-to-end glue: run a trained network over scan sequences, accumulate
//! pixel confusion against the fused targets, extract detection boxes from
//! predicted and ground-truth masks, and assemble the metrics report.

use crate::boxgen::{boxes_from_components, extract_instances, DetectionBox};
use crate::dataset::ScanSequence;
use crate::error::Result;
use crate::fusion::fuse_sequence;
use crate::metrics::{compute_map, ConfusionCounts, MetricsReport};
use crate::network::Network;
use ndarray::{Array2, Array3};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Box-IoU threshold for detection matching.
    pub iou_threshold: f64,
    /// Minimum component area (pixels) for a predicted detection.
    pub min_area: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            min_area: 9,
        }
    }
}

/// Per fused sample: identifier (`sequence/middle_frame`), predicted mask,
/// predicted boxes and ground-truth boxes.
#[derive(Debug, Clone)]
pub struct SamplePrediction {
    pub image_id: String,
    pub predicted_mask: Array2<u8>,
    pub boxes: Vec<DetectionBox>,
    pub truth_boxes: Vec<DetectionBox>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub counts: ConfusionCounts,
    pub report: MetricsReport,
    pub predictions: Vec<SamplePrediction>,
}

/// Boxes for a ground-truth mask: every connected component, no area filter,
/// confidence pinned to 1.
pub fn truth_boxes(mask: &Array2<u8>) -> Vec<DetectionBox> {
    let comps = extract_instances(mask, 1);
    let (h, w) = mask.dim();
    let num_classes = mask.iter().copied().max().unwrap_or(0) as usize + 1;
    let ones = Array3::from_elem((num_classes, h, w), 1.0);
    boxes_from_components(&comps, &ones)
}

/// Runs inference over every fused sample of `sequences` and computes the full
/// metrics report.
pub fn evaluate_sequences(
    network: &Network,
    sequences: &[ScanSequence],
    options: &EvalOptions,
) -> Result<EvalOutcome> {
    let num_classes = network.config.num_classes;
    let mut counts = ConfusionCounts::new(num_classes);
    let mut predictions = Vec::new();
    let mut detections_per_image = Vec::new();
    let mut truths_per_image = Vec::new();

    for sequence in sequences {
        for sample in fuse_sequence(sequence)? {
            let logits = network.forward(&sample.channels)?;
            let probabilities = logits.softmax();
            let predicted = logits.predicted_mask();
            counts.accumulate(&predicted, &sample.target)?;

            let comps = extract_instances(&predicted, options.min_area);
            let boxes = boxes_from_components(&comps, &probabilities);
            let truths = truth_boxes(&sample.target);
            detections_per_image.push(boxes.clone());
            truths_per_image.push(truths.clone());
            predictions.push(SamplePrediction {
                image_id: format!("{}/{}", sequence.id, sample.source_indices[1]),
                predicted_mask: predicted,
                boxes,
                truth_boxes: truths,
            });
        }
    }

    let map = compute_map(
        &detections_per_image,
        &truths_per_image,
        num_classes,
        options.iou_threshold,
    )?;
    let class_names = sequences
        .first()
        .map(|s| s.class_names.clone())
        .unwrap_or_default();
    let report = MetricsReport::build(&counts, &map, &class_names)?;
    Ok(EvalOutcome {
        counts,
        report,
        predictions,
    })
}
