//! Dense f64 tensor kernels used by the network: convolution, pooling,
//! resampling and padding, each with a matching backward pass.
//!
//! All feature maps are `Array3<f64>` in channel-major (C, H, W) layout.

mod conv;
mod resample;

pub use conv::Conv2d;
pub use resample::{maxpool_s1, maxpool_s1_backward, upsample_x2, upsample_x2_backward, PoolCache};

use ndarray::Array3;

/// Elementwise max(0, x).
pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient of relu given the forward input. The subgradient at 0 is taken as 0.
pub fn relu_backward(input: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(input, |gv, &xv| {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

pub fn all_finite(x: &Array3<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Spatial padding bookkeeping for inputs whose dims are not divisible by 2^K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadInfo {
    pub top: usize,
    pub left: usize,
    pub orig_h: usize,
    pub orig_w: usize,
}

impl PadInfo {
    pub fn is_identity(&self) -> bool {
        self.top == 0 && self.left == 0
    }
}

/// Zero-pads (C, H, W) symmetrically so both spatial dims become multiples of
/// `multiple`. Extra odd pixels go to the bottom/right edge.
pub fn pad_to_multiple(x: &Array3<f64>, multiple: usize) -> (Array3<f64>, PadInfo) {
    let (c, h, w) = x.dim();
    let target_h = h.div_ceil(multiple) * multiple;
    let target_w = w.div_ceil(multiple) * multiple;
    let top = (target_h - h) / 2;
    let left = (target_w - w) / 2;
    let info = PadInfo {
        top,
        left,
        orig_h: h,
        orig_w: w,
    };
    if target_h == h && target_w == w {
        return (x.clone(), info);
    }
    let mut out = Array3::zeros((c, target_h, target_w));
    out.slice_mut(ndarray::s![.., top..top + h, left..left + w])
        .assign(x);
    (out, info)
}

/// Crops a padded (C, H, W) map back to the original spatial dims.
pub fn crop_to_original(x: &Array3<f64>, info: &PadInfo) -> Array3<f64> {
    x.slice(ndarray::s![
        ..,
        info.top..info.top + info.orig_h,
        info.left..info.left + info.orig_w
    ])
    .to_owned()
}

/// Scatters a gradient over a cropped map back into the padded shape.
pub fn crop_backward(grad: &Array3<f64>, info: &PadInfo, padded_h: usize, padded_w: usize) -> Array3<f64> {
    let c = grad.dim().0;
    let mut out = Array3::zeros((c, padded_h, padded_w));
    out.slice_mut(ndarray::s![
        ..,
        info.top..info.top + info.orig_h,
        info.left..info.left + info.orig_w
    ])
    .assign(grad);
    out
}
