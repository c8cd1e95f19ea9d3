//! Pixel-level confusion accounting and the derived metrics: per-class IoU,
//! mIoU over suspicious classes, micro-averaged recall/precision/F-score,
//! pixel accuracy, and box-level average precision.

use crate::boxgen::{box_iou, DetectionBox};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// One-vs-rest pixel counts per class. TN is derived from the running pixel
/// total, so merging stays a plain sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    total_pixels: u64,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            total_pixels: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn tp(&self, class: usize) -> u64 {
        self.tp[class]
    }

    pub fn fp(&self, class: usize) -> u64 {
        self.fp[class]
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        self.fn_[class]
    }

    pub fn tn(&self, class: usize) -> u64 {
        self.total_pixels - self.tp[class] - self.fp[class] - self.fn_[class]
    }

    pub fn total_pixels(&self) -> u64 {
        self.total_pixels
    }

    /// Adds one prediction/truth mask pair into the counts.
    pub fn accumulate(&mut self, predicted: &Array2<u8>, truth: &Array2<u8>) -> Result<()> {
        if predicted.dim() != truth.dim() {
            return Err(Error::DimensionMismatch {
                context: "confusion masks".into(),
                expected: truth.dim(),
                got: predicted.dim(),
            });
        }
        let n = self.num_classes();
        for (&p, &t) in predicted.iter().zip(truth.iter()) {
            let (p, t) = (p as usize, t as usize);
            if p >= n || t >= n {
                return Err(Error::MaskValueOutOfRange {
                    value: p.max(t) as u32,
                    num_classes: n,
                    context: "confusion accumulation".into(),
                });
            }
            if p == t {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[t] += 1;
            }
        }
        self.total_pixels += predicted.len() as u64;
        Ok(())
    }

    /// Associative merge for parallel accumulation.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.num_classes(), other.num_classes());
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        self.total_pixels += other.total_pixels;
    }

    /// IoU = TP / (TP + FP + FN). None when the class is absent from both
    /// prediction and truth (degenerate: excluded from mIoU).
    pub fn iou(&self, class: usize) -> Option<f64> {
        let denom = self.tp[class] + self.fp[class] + self.fn_[class];
        if denom == 0 {
            None
        } else {
            Some(self.tp[class] as f64 / denom as f64)
        }
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes()).map(|c| self.iou(c)).collect()
    }

    /// Unweighted mean IoU over suspicious (non-background) classes that occur
    /// in prediction or ground truth. Errors when no suspicious class occurs.
    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = (1..self.num_classes()).filter_map(|c| self.iou(c)).collect();
        if ious.is_empty() {
            return Err(Error::NoSuspiciousClass);
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// Micro-aggregated recall, precision, F-score and accuracy over the
    /// suspicious classes (counts summed before the ratios).
    pub fn prf(&self) -> PrfMetrics {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        let mut tn = 0u64;
        for c in 1..self.num_classes() {
            tp += self.tp[c];
            fp += self.fp[c];
            fn_ += self.fn_[c];
            tn += self.tn(c);
        }
        let mut degenerate = false;
        let mut ratio = |num: u64, denom: u64| -> f64 {
            if denom == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / denom as f64
            }
        };
        let recall = ratio(tp, tp + fn_);
        let precision = ratio(tp, tp + fp);
        let accuracy = ratio(tp + tn, tp + tn + fp + fn_);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            degenerate = true;
            0.0
        };
        PrfMetrics {
            recall,
            precision,
            f_score,
            accuracy,
            degenerate,
        }
    }
}

/// Builds confusion counts from a single mask pair.
pub fn accumulate_confusion(
    predicted: &Array2<u8>,
    truth: &Array2<u8>,
    num_classes: usize,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::new(num_classes);
    counts.accumulate(predicted, truth)?;
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub accuracy: f64,
    /// True when some denominator was zero and the affected metric was
    /// defined as 0.
    pub degenerate: bool,
}

/// Per-class average precision and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// Indexed by class id; None for suspicious classes with no ground truth
    /// (excluded from the mean) and for background (index 0).
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
}

/// Mean of the defined per-class APs. None when no class has a defined AP.
pub fn aggregate_map(per_class_ap: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = per_class_ap.iter().filter_map(|v| *v).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Computes per-class AP and mAP from per-image detections and ground truths.
///
/// Per class: detections are ranked by descending confidence and matched
/// greedily to the unmatched same-image ground-truth box of highest overlap at
/// box IoU >= `iou_threshold`; AP is the area under the all-point interpolated
/// precision-recall curve.
pub fn compute_map(
    detections: &[Vec<DetectionBox>],
    ground_truth: &[Vec<DetectionBox>],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<MapReport> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::InvalidIouThreshold(iou_threshold));
    }
    if detections.len() != ground_truth.len() {
        return Err(Error::InvalidConfig(format!(
            "detections cover {} images, ground truth {}",
            detections.len(),
            ground_truth.len()
        )));
    }

    let mut per_class_ap: Vec<Option<f64>> = vec![None; num_classes];
    for class in 1..num_classes {
        let total_gt: usize = ground_truth
            .iter()
            .map(|boxes| boxes.iter().filter(|b| b.class_id == class).count())
            .sum();
        if total_gt == 0 {
            continue;
        }

        // (confidence, image, detection) ranked by descending confidence;
        // ties break on image then insertion order for determinism.
        let mut ranked: Vec<(f64, usize, &DetectionBox)> = Vec::new();
        for (img, boxes) in detections.iter().enumerate() {
            for b in boxes.iter().filter(|b| b.class_id == class) {
                ranked.push((b.confidence, img, b));
            }
        }
        ranked.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });

        let mut matched: Vec<Vec<bool>> = ground_truth
            .iter()
            .map(|boxes| vec![false; boxes.len()])
            .collect();
        let mut tp_flags = Vec::with_capacity(ranked.len());
        for &(_, img, det) in &ranked {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in ground_truth[img].iter().enumerate() {
                if gt.class_id != class || matched[img][gi] {
                    continue;
                }
                let overlap = box_iou(det, gt);
                if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            match best {
                Some((gi, _)) => {
                    matched[img][gi] = true;
                    tp_flags.push(true);
                }
                None => tp_flags.push(false),
            }
        }

        per_class_ap[class] = Some(average_precision(&tp_flags, total_gt));
    }

    let map = aggregate_map(&per_class_ap).ok_or(Error::NoSuspiciousClass)?;
    Ok(MapReport { per_class_ap, map })
}

/// Area under the all-point interpolated PR curve given confidence-ranked
/// true-positive flags.
fn average_precision(tp_flags: &[bool], total_gt: usize) -> f64 {
    if tp_flags.is_empty() || total_gt == 0 {
        return 0.0;
    }
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / total_gt as f64);
    }
    // Precision envelope from the right, then sum rectangle areas between
    // successive recall levels.
    for i in (0..precisions.len() - 1).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..precisions.len() {
        if recalls[i] > prev_recall {
            ap += (recalls[i] - prev_recall) * precisions[i];
            prev_recall = recalls[i];
        }
    }
    ap
}

/// Everything the evaluation run reports, serializable as JSON and as flat
/// key-value text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub accuracy: f64,
    pub degenerate_prf: bool,
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
}

impl MetricsReport {
    pub fn build(
        counts: &ConfusionCounts,
        boxes: &MapReport,
        class_names: &[String],
    ) -> Result<Self> {
        let prf = counts.prf();
        Ok(Self {
            class_names: class_names.to_vec(),
            per_class_iou: counts.per_class_iou(),
            miou: counts.miou()?,
            recall: prf.recall,
            precision: prf.precision,
            f_score: prf.f_score,
            accuracy: prf.accuracy,
            degenerate_prf: prf.degenerate,
            per_class_ap: boxes.per_class_ap.clone(),
            map: boxes.map,
        })
    }

    /// Flat `key value` lines; one metric per line.
    pub fn to_text(&self) -> String {
        let fmt_opt = |v: &Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "undefined".to_string(),
        };
        let mut out = String::new();
        out.push_str(&format!("miou {:.6}\n", self.miou));
        out.push_str(&format!("recall {:.6}\n", self.recall));
        out.push_str(&format!("precision {:.6}\n", self.precision));
        out.push_str(&format!("f_score {:.6}\n", self.f_score));
        out.push_str(&format!("accuracy {:.6}\n", self.accuracy));
        out.push_str(&format!("map {:.6}\n", self.map));
        for (c, name) in self.class_names.iter().enumerate().skip(1) {
            out.push_str(&format!("ap_{name} {}\n", fmt_opt(&self.per_class_ap[c])));
        }
        for (c, name) in self.class_names.iter().enumerate().skip(1) {
            out.push_str(&format!("iou_{name} {}\n", fmt_opt(&self.per_class_iou[c])));
        }
        out.push_str(&format!("degenerate_prf {}\n", self.degenerate_prf));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("report json: {e}")))
    }
}
