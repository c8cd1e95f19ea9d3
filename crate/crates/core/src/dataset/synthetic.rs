//! Deterministic synthetic scan sequences: class-specific shapes rendered as
//! multiplicative attenuation on a textured background, drifting by about a
//! pixel per frame.

use crate::error::{Error, Result};
use crate::dataset::{ScanFrame, ScanSequence};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub(crate) enum ShapeKind {
    Disc,
    Slab,
    Diamond,
    Ring,
}

impl ShapeKind {
    fn for_class(class_id: usize) -> Self {
        match (class_id - 1) % 4 {
            0 => ShapeKind::Disc,
            1 => ShapeKind::Slab,
            2 => ShapeKind::Diamond,
            _ => ShapeKind::Ring,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Shape {
    kind: ShapeKind,
    center: (f64, f64),
    radius: f64,
    attenuation: f64,
}

impl Shape {
    pub(crate) fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.center.0;
        let dx = x as f64 - self.center.1;
        match self.kind {
            ShapeKind::Disc => dy * dy + dx * dx <= self.radius * self.radius,
            ShapeKind::Slab => dy.abs() <= self.radius * 0.7 && dx.abs() <= self.radius * 1.3,
            ShapeKind::Diamond => dy.abs() + dx.abs() <= self.radius * 1.25,
            ShapeKind::Ring => {
                let d2 = dy * dy + dx * dx;
                let outer = self.radius;
                let inner = self.radius * 0.45;
                d2 <= outer * outer && d2 >= inner * inner
            }
        }
    }
}

/// Renders shapes onto an image/mask pair. Classes are drawn in ascending id
/// order, so on overlap the higher class id owns the pixel.
pub(crate) fn rasterize(
    image: &mut Array2<f64>,
    mask: &mut Array2<u8>,
    shapes: &[(usize, Shape)],
) {
    let (h, w) = image.dim();
    for &(class_id, shape) in shapes {
        for y in 0..h {
            for x in 0..w {
                if shape.contains(y, x) {
                    image[[y, x]] *= shape.attenuation;
                    mask[[y, x]] = class_id as u8;
                }
            }
        }
    }
}

/// Evenly spaced attenuation factors so class intensity bands stay separable.
fn class_attenuation(class_id: usize, n_classes: usize) -> f64 {
    let suspicious = n_classes - 1;
    if suspicious == 1 {
        return 0.55;
    }
    let t = (class_id - 1) as f64 / (suspicious - 1) as f64;
    0.74 - t * (0.74 - 0.22)
}

/// Shape instances drawn per suspicious class in every sequence.
const INSTANCES_PER_CLASS: usize = 2;

/// Generates `num_sequences` synthetic scan sequences of `frames_per_sequence`
/// frames each. One shape per non-background class, drifting by up to one
/// pixel per axis between frames. Bit-deterministic for a fixed seed.
pub fn generate_synthetic(
    num_sequences: usize,
    frames_per_sequence: usize,
    dims: (usize, usize),
    n_classes: usize,
    seed: u64,
) -> Result<Vec<ScanSequence>> {
    if num_sequences < 1 || frames_per_sequence < 1 {
        return Err(Error::InvalidConfig(
            "num_sequences and frames_per_sequence must be at least 1".into(),
        ));
    }
    if n_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes (background + 1), got {n_classes}"
        )));
    }
    if n_classes > 256 {
        return Err(Error::InvalidConfig(format!(
            "at most 256 classes supported, got {n_classes}"
        )));
    }
    let (n1, n2) = dims;
    if n1 < 16 || n2 < 16 {
        return Err(Error::InvalidConfig(format!(
            "dims {n1}x{n2} too small to place shapes, need at least 16x16"
        )));
    }

    let class_names: Vec<String> = (0..n_classes)
        .map(|c| {
            if c == 0 {
                "background".to_string()
            } else {
                format!("item_{c}")
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(num_sequences);
    for s in 0..num_sequences {
        let id = format!("seq_{s:03}");

        // Smooth background texture whose phase drifts from frame to frame,
        // as if the bag were moving through the scanner.
        let base = 0.90;
        let (fy, fx) = (
            rng.random_range(0.5..1.5) * std::f64::consts::PI / n1 as f64,
            rng.random_range(0.5..1.5) * std::f64::consts::PI / n2 as f64,
        );
        let (mut py, mut px) = (
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        );

        // A couple of shapes per suspicious class; retry placement to limit
        // overlap (shapes may still overlap when space runs out).
        let min_side = n1.min(n2) as f64;
        let mut shapes: Vec<(usize, Shape)> = Vec::new();
        for class_id in 1..n_classes {
            for _ in 0..INSTANCES_PER_CLASS {
                let radius = rng.random_range(0.09..0.14) * min_side;
                let margin = radius * 1.4 + 2.0;
                let mut placed = None;
                for _ in 0..60 {
                    let cy = rng.random_range(margin..(n1 as f64 - margin));
                    let cx = rng.random_range(margin..(n2 as f64 - margin));
                    let ok = shapes.iter().all(|&(_, other)| {
                        let dy = cy - other.center.0;
                        let dx = cx - other.center.1;
                        (dy * dy + dx * dx).sqrt() >= (radius + other.radius) * 1.05 + 2.0
                    });
                    placed = Some((cy, cx));
                    if ok {
                        break;
                    }
                }
                let (cy, cx) = placed.expect("at least one placement attempt");
                let attenuation = class_attenuation(class_id, n_classes);
                shapes.push((
                    class_id,
                    Shape {
                        kind: ShapeKind::for_class(class_id),
                        center: (cy, cx),
                        radius,
                        attenuation,
                    },
                ));
            }
        }

        let mut frames = Vec::with_capacity(frames_per_sequence);
        for f in 0..frames_per_sequence {
            if f > 0 {
                // Slight drift between consecutive frames.
                for (_, shape) in shapes.iter_mut() {
                    let dy = rng.random_range(-2i32..=2) as f64;
                    let dx = rng.random_range(-2i32..=2) as f64;
                    let margin = shape.radius * 1.4 + 2.0;
                    shape.center.0 = (shape.center.0 + dy).clamp(margin, n1 as f64 - margin);
                    shape.center.1 = (shape.center.1 + dx).clamp(margin, n2 as f64 - margin);
                }
                py += rng.random_range(-0.4..0.4);
                px += rng.random_range(-0.4..0.4);
            }
            let mut image = Array2::from_shape_fn((n1, n2), |(y, x)| {
                base + 0.012 * ((y as f64 * fy + py).sin() + (x as f64 * fx + px).sin()) / 2.0
            });
            image.mapv_inplace(|v| v + rng.random_range(-0.008..0.008));
            let mut mask = Array2::zeros((n1, n2));
            rasterize(&mut image, &mut mask, &shapes);
            image.mapv_inplace(|v| v.clamp(0.0, 1.0));
            frames.push(ScanFrame::new(f, image, mask)?);
        }
        sequences.push(ScanSequence::new(id, frames, class_names.clone())?);
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_only_contain_declared_classes() {
        let seqs = generate_synthetic(1, 3, (64, 64), 3, 0).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].frames.len(), 3);
        let mut seen = [false; 3];
        for frame in &seqs[0].frames {
            for &v in frame.mask.iter() {
                assert!(v < 3);
                seen[v as usize] = true;
            }
        }
        assert!(seen[0], "background must appear");
        assert!(seen[1] && seen[2], "every suspicious class must appear");
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let a = generate_synthetic(2, 4, (32, 32), 4, 9).unwrap();
        let b = generate_synthetic(2, 4, (32, 32), 4, 9).unwrap();
        for (sa, sb) in a.iter().zip(b.iter()) {
            assert_eq!(sa.id, sb.id);
            for (fa, fb) in sa.frames.iter().zip(sb.frames.iter()) {
                assert_eq!(fa.image, fb.image);
                assert_eq!(fa.mask, fb.mask);
            }
        }
    }

    #[test]
    fn tiny_dims_rejected() {
        assert!(generate_synthetic(1, 3, (8, 8), 3, 0).is_err());
        assert!(generate_synthetic(1, 3, (8, 32), 3, 0).is_err());
    }

    #[test]
    fn consecutive_frames_differ_but_slightly() {
        let seqs = generate_synthetic(1, 4, (48, 48), 3, 3).unwrap();
        let frames = &seqs[0].frames;
        for w in frames.windows(2) {
            // Drift means mask differences are possible but bounded in size.
            let differing = w[0]
                .mask
                .iter()
                .zip(w[1].mask.iter())
                .filter(|(a, b)| a != b)
                .count();
            assert!(differing < 48 * 48 / 4, "drift too large: {differing}");
        }
    }

    #[test]
    fn overlap_gives_pixel_to_higher_class() {
        let mut image = Array2::from_elem((32, 32), 1.0);
        let mut mask = Array2::zeros((32, 32));
        let lo = Shape {
            kind: ShapeKind::Disc,
            center: (16.0, 14.0),
            radius: 6.0,
            attenuation: 0.7,
        };
        let hi = Shape {
            kind: ShapeKind::Disc,
            center: (16.0, 18.0),
            radius: 6.0,
            attenuation: 0.5,
        };
        rasterize(&mut image, &mut mask, &[(1, lo), (2, hi)]);
        // (16, 16) lies inside both discs: later-drawn class 2 wins the label
        // and the intensities multiply.
        assert!(lo.contains(16, 16) && hi.contains(16, 16));
        assert_eq!(mask[[16, 16]], 2);
        assert!((image[[16, 16]] - 0.35).abs() < 1e-12);
        // A pixel only in the low disc keeps class 1.
        assert_eq!(mask[[16, 9]], 1);
    }
}
