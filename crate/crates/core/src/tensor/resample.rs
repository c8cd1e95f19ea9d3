use ndarray::Array3;

/// Argmax positions recorded by the pooling forward pass, consumed by the
/// backward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    /// Flat (y * W + x) source index of the max for every output element.
    argmax: Vec<u32>,
    input_dims: (usize, usize, usize),
}

/// Stride-1 max pooling with a square window whose footprint is clipped at the
/// borders, so output dims equal input dims. Ties resolve to the first element
/// in row-major scan order.
pub fn maxpool_s1(x: &Array3<f64>, window: usize) -> (Array3<f64>, PoolCache) {
    assert!(window % 2 == 1, "pooling window must be odd");
    let (c, h, w) = x.dim();
    let r = window / 2;
    let mut out = Array3::zeros((c, h, w));
    let mut argmax = vec![0u32; c * h * w];
    let x_sl = x.as_slice().expect("contiguous input");
    let out_sl = out.as_slice_mut().expect("contiguous output");
    for ch in 0..c {
        let plane = ch * h * w;
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r).min(h - 1);
            for xo in 0..w {
                let x0 = xo.saturating_sub(r);
                let x1 = (xo + r).min(w - 1);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0u32;
                for yy in y0..=y1 {
                    let row = plane + yy * w;
                    for xx in x0..=x1 {
                        let v = x_sl[row + xx];
                        if v > best {
                            best = v;
                            best_idx = (yy * w + xx) as u32;
                        }
                    }
                }
                out_sl[plane + y * w + xo] = best;
                argmax[plane + y * w + xo] = best_idx;
            }
        }
    }
    (
        out,
        PoolCache {
            argmax,
            input_dims: (c, h, w),
        },
    )
}

/// Routes each output gradient back to the input position that produced the max.
pub fn maxpool_s1_backward(cache: &PoolCache, grad_out: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = cache.input_dims;
    assert_eq!(grad_out.dim(), (c, h, w));
    let mut grad_in = Array3::zeros((c, h, w));
    let gi = grad_in.as_slice_mut().expect("contiguous grad");
    let go = grad_out.as_slice().expect("contiguous grad_out");
    for ch in 0..c {
        let plane = ch * h * w;
        for i in 0..h * w {
            gi[plane + cache.argmax[plane + i] as usize] += go[plane + i];
        }
    }
    grad_in
}

/// Bilinear 2x upsampling with half-pixel sample centers clamped at borders.
/// A constant map upsamples to the same constant.
pub fn upsample_x2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Array3::zeros((c, oh, ow));
    let taps_y = axis_taps(h);
    let taps_x = axis_taps(w);
    for ch in 0..c {
        for i in 0..oh {
            let (y0, y1, fy) = taps_y[i];
            for j in 0..ow {
                let (x0, x1, fx) = taps_x[j];
                out[[ch, i, j]] = (1.0 - fy) * (1.0 - fx) * x[[ch, y0, x0]]
                    + (1.0 - fy) * fx * x[[ch, y0, x1]]
                    + fy * (1.0 - fx) * x[[ch, y1, x0]]
                    + fy * fx * x[[ch, y1, x1]];
            }
        }
    }
    out
}

/// Transpose of `upsample_x2`: scatters output gradients to the contributing
/// input taps with the same interpolation weights.
pub fn upsample_x2_backward(grad_out: &Array3<f64>, input_dims: (usize, usize, usize)) -> Array3<f64> {
    let (c, h, w) = input_dims;
    assert_eq!(grad_out.dim(), (c, h * 2, w * 2));
    let mut grad_in = Array3::zeros((c, h, w));
    let taps_y = axis_taps(h);
    let taps_x = axis_taps(w);
    for ch in 0..c {
        for i in 0..h * 2 {
            let (y0, y1, fy) = taps_y[i];
            for j in 0..w * 2 {
                let (x0, x1, fx) = taps_x[j];
                let g = grad_out[[ch, i, j]];
                grad_in[[ch, y0, x0]] += (1.0 - fy) * (1.0 - fx) * g;
                grad_in[[ch, y0, x1]] += (1.0 - fy) * fx * g;
                grad_in[[ch, y1, x0]] += fy * (1.0 - fx) * g;
                grad_in[[ch, y1, x1]] += fy * fx * g;
            }
        }
    }
    grad_in
}

/// For each output coordinate along one axis of length 2n, the two source
/// indices and the interpolation fraction toward the second one.
fn axis_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let coord = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = coord.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, coord - i0 as f64)
        })
        .collect()
}
