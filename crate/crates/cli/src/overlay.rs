//! Overlay rendering: grayscale scan as RGB base, predicted boxes in pure
//! green, ground-truth boxes in pure blue, 2-pixel-wide outlines.

use image::RgbImage;
use ndarray::ArrayView2;
use tempofuse_core::boxgen::DetectionBox;

pub const PREDICTED: [u8; 3] = [0, 255, 0];
pub const TRUTH: [u8; 3] = [0, 0, 255];
const THICKNESS: usize = 2;

pub fn grayscale_to_rgb(image: ArrayView2<'_, f64>) -> RgbImage {
    let (h, w) = image.dim();
    let mut out = RgbImage::new(w as u32, h as u32);
    for ((y, x), &v) in image.indexed_iter() {
        let g = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        out.put_pixel(x as u32, y as u32, image::Rgb([g, g, g]));
    }
    out
}

/// Draws a rectangle outline over the box extents, growing inward.
pub fn draw_box(img: &mut RgbImage, b: &DetectionBox, color: [u8; 3]) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let r0 = b.row_min.min(h - 1);
    let r1 = b.row_max.min(h - 1);
    let c0 = b.col_min.min(w - 1);
    let c1 = b.col_max.min(w - 1);
    let px = image::Rgb(color);
    for t in 0..THICKNESS {
        // Horizontal edges.
        if r0 + t <= r1 {
            for x in c0..=c1 {
                img.put_pixel(x as u32, (r0 + t) as u32, px);
            }
        }
        if r1 >= r0 + t {
            for x in c0..=c1 {
                img.put_pixel(x as u32, (r1 - t) as u32, px);
            }
        }
        // Vertical edges.
        if c0 + t <= c1 {
            for y in r0..=r1 {
                img.put_pixel((c0 + t) as u32, y as u32, px);
            }
        }
        if c1 >= c0 + t {
            for y in r0..=r1 {
                img.put_pixel((c1 - t) as u32, y as u32, px);
            }
        }
    }
}
