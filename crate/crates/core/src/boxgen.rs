//! Mask-to-box extraction: 8-connected components per suspicious class, one
//! detection box per component spanning its exact min/max row and column.

use crate::error::Result;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Axis-aligned detection box with inclusive pixel extents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub class_id: usize,
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
    /// Mean softmax probability of the class over the component's pixels.
    pub confidence: f64,
    pub pixel_count: usize,
}

impl DetectionBox {
    pub fn area(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.row_min && y <= self.row_max && x >= self.col_min && x <= self.col_max
    }
}

/// One connected pixel component of a single suspicious class.
#[derive(Debug, Clone)]
pub struct Component {
    pub class_id: usize,
    pub pixels: Vec<(usize, usize)>,
}

/// Finds 8-connected components per suspicious class (id >= 1), dropping
/// components smaller than `min_area` pixels. Components are emitted in
/// row-major order of their first pixel.
pub fn extract_instances(mask: &Array2<u8>, min_area: usize) -> Vec<Component> {
    let (h, w) = mask.dim();
    let mut visited = vec![false; h * w];
    let mut components = Vec::new();
    let mut queue = std::collections::VecDeque::new();

    for sy in 0..h {
        for sx in 0..w {
            let class = mask[[sy, sx]];
            if class == 0 || visited[sy * w + sx] {
                continue;
            }
            visited[sy * w + sx] = true;
            queue.push_back((sy, sx));
            let mut pixels = Vec::new();
            while let Some((y, x)) = queue.pop_front() {
                pixels.push((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if !visited[ny * w + nx] && mask[[ny, nx]] == class {
                            visited[ny * w + nx] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            if pixels.len() >= min_area {
                components.push(Component {
                    class_id: class as usize,
                    pixels,
                });
            }
        }
    }
    components
}

/// Turns components into boxes: inclusive min/max extents plus the mean class
/// probability over the component as confidence. `probabilities` is the
/// per-pixel softmax map of shape (n, H, W).
pub fn boxes_from_components(
    components: &[Component],
    probabilities: &Array3<f64>,
) -> Vec<DetectionBox> {
    components
        .iter()
        .map(|comp| {
            let mut row_min = usize::MAX;
            let mut row_max = 0;
            let mut col_min = usize::MAX;
            let mut col_max = 0;
            let mut prob_sum = 0.0;
            for &(y, x) in &comp.pixels {
                row_min = row_min.min(y);
                row_max = row_max.max(y);
                col_min = col_min.min(x);
                col_max = col_max.max(x);
                prob_sum += probabilities[[comp.class_id, y, x]];
            }
            DetectionBox {
                class_id: comp.class_id,
                row_min,
                row_max,
                col_min,
                col_max,
                confidence: prob_sum / comp.pixels.len() as f64,
                pixel_count: comp.pixels.len(),
            }
        })
        .collect()
}

/// Intersection-over-union of two boxes under the inclusive-pixel convention:
/// a box spanning rows [a, b] covers b - a + 1 pixels.
pub fn box_iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let inter_rows = overlap(a.row_min, a.row_max, b.row_min, b.row_max);
    let inter_cols = overlap(a.col_min, a.col_max, b.col_min, b.col_max);
    let inter = inter_rows * inter_cols;
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

fn overlap(a_min: usize, a_max: usize, b_min: usize, b_max: usize) -> usize {
    let lo = a_min.max(b_min);
    let hi = a_max.min(b_max);
    if hi >= lo {
        hi - lo + 1
    } else {
        0
    }
}

/// One emitted detection line: `image_id class_name confidence row_min col_min
/// row_max col_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRecord {
    pub image_id: String,
    pub class_name: String,
    pub confidence: f64,
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoxRecord {
    pub fn new(image_id: &str, class_names: &[String], b: &DetectionBox) -> Self {
        let class_name = class_names
            .get(b.class_id)
            .cloned()
            .unwrap_or_else(|| format!("class_{}", b.class_id));
        Self {
            image_id: image_id.to_string(),
            class_name,
            confidence: b.confidence,
            row_min: b.row_min,
            col_min: b.col_min,
            row_max: b.row_max,
            col_max: b.col_max,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {:.6} {} {} {} {}",
            self.image_id,
            self.class_name,
            self.confidence,
            self.row_min,
            self.col_min,
            self.row_max,
            self.col_max
        )
    }
}

/// Renders records as the text format (one line per detection) and as JSON.
pub fn format_box_outputs(records: &[BoxRecord]) -> Result<(String, String)> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    let json = serde_json::to_string_pretty(records)
        .map_err(|e| crate::error::Error::InvalidConfig(format!("box json: {e}")))?;
    Ok((text, json))
}
