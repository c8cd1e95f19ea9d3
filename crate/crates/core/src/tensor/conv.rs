use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;

/// A 2-D convolution layer over (C, H, W) maps with square kernels.
///
/// Forward and backward go through an im2col matrix so the inner loop is a
/// single GEMM. Weights are stored as (out, in, k, k).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Fan-in-scaled uniform init (bound sqrt(6 / fan_in)), zero biases.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self::new_scaled(in_channels, out_channels, kernel, stride, padding, 1.0, rng)
    }

    /// Fan-in-scaled uniform init with an extra gain on the bound. Residual
    /// branches use gains below 1 so activation variance stays bounded without
    /// normalization layers.
    #[allow(clippy::too_many_arguments)]
    pub fn new_scaled<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let weight = Array4::from_shape_simple_fn((out_channels, in_channels, kernel, kernel), || {
            rng.random_range(-bound..bound)
        });
        Self {
            weight,
            bias: Array1::zeros(out_channels),
            stride,
            padding,
        }
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Array4::zeros((out_channels, in_channels, kernel, kernel)),
            bias: Array1::zeros(out_channels),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (c_in, h, w) = x.dim();
        assert_eq!(c_in, self.in_channels(), "conv input channel mismatch");
        let (h_out, w_out) = self.output_dims(h, w);
        let cols = im2col(x, self.kernel(), self.stride, self.padding, h_out, w_out);
        let k2 = self.in_channels() * self.kernel() * self.kernel();
        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((self.out_channels(), k2))
            .expect("contiguous weight");
        let mut out_mat = w_mat.dot(&cols);
        for (mut row, &b) in out_mat.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        out_mat
            .into_shape_with_order((self.out_channels(), h_out, w_out))
            .expect("conv output reshape")
    }

    /// Backward pass given the forward input and the output gradient.
    /// Returns (grad wrt input, grad wrt weight, grad wrt bias).
    pub fn backward(
        &self,
        x: &Array3<f64>,
        grad_out: &Array3<f64>,
    ) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
        let (_, h, w) = x.dim();
        let (c_out, h_out, w_out) = grad_out.dim();
        assert_eq!(c_out, self.out_channels(), "conv grad channel mismatch");
        let k = self.kernel();
        let k2 = self.in_channels() * k * k;
        let cols = im2col(x, k, self.stride, self.padding, h_out, w_out);
        let g_mat = grad_out
            .view()
            .into_shape_with_order((c_out, h_out * w_out))
            .expect("contiguous grad");

        let grad_bias = g_mat.sum_axis(ndarray::Axis(1));
        let grad_w_mat = g_mat.dot(&cols.t());
        let grad_weight = grad_w_mat
            .into_shape_with_order(self.weight.raw_dim())
            .expect("weight grad reshape");

        let w_mat = self
            .weight
            .view()
            .into_shape_with_order((c_out, k2))
            .expect("contiguous weight");
        let grad_cols = w_mat.t().dot(&g_mat);
        let grad_input = col2im(
            &grad_cols,
            self.in_channels(),
            h,
            w,
            k,
            self.stride,
            self.padding,
            h_out,
            w_out,
        );
        (grad_input, grad_weight, grad_bias)
    }
}

/// Unfolds (C, H, W) into a (C*k*k, H_out*W_out) patch matrix. Out-of-bounds
/// taps (zero padding) stay zero.
fn im2col(
    x: &Array3<f64>,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) -> Array2<f64> {
    let (c_in, h, w) = x.dim();
    let mut cols = Array2::zeros((c_in * k * k, h_out * w_out));
    let x_sl = x.as_slice().expect("contiguous input");
    {
        let cols_sl = cols.as_slice_mut().expect("contiguous cols");
        for c in 0..c_in {
            for di in 0..k {
                for dj in 0..k {
                    let row = (c * k + di) * k + dj;
                    let row_base = row * (h_out * w_out);
                    for oy in 0..h_out {
                        let iy = oy * stride + di;
                        if iy < padding || iy >= h + padding {
                            continue;
                        }
                        let iy = iy - padding;
                        let src_base = (c * h + iy) * w;
                        let dst_base = row_base + oy * w_out;
                        for ox in 0..w_out {
                            let ix = ox * stride + dj;
                            if ix < padding || ix >= w + padding {
                                continue;
                            }
                            cols_sl[dst_base + ox] = x_sl[src_base + ix - padding];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a (C*k*k, H_out*W_out) gradient matrix back onto the (C, H, W) input,
/// accumulating overlapping taps.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &Array2<f64>,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) -> Array3<f64> {
    let mut out = Array3::zeros((c_in, h, w));
    let out_sl = out.as_slice_mut().expect("contiguous output");
    let cols_sl = cols.as_slice().expect("contiguous cols");
    for c in 0..c_in {
        for di in 0..k {
            for dj in 0..k {
                let row = (c * k + di) * k + dj;
                let row_base = row * (h_out * w_out);
                for oy in 0..h_out {
                    let iy = oy * stride + di;
                    if iy < padding || iy >= h + padding {
                        continue;
                    }
                    let iy = iy - padding;
                    let dst_base = (c * h + iy) * w;
                    let src_base = row_base + oy * w_out;
                    for ox in 0..w_out {
                        let ix = ox * stride + dj;
                        if ix < padding || ix >= w + padding {
                            continue;
                        }
                        out_sl[dst_base + ix - padding] += cols_sl[src_base + ox];
                    }
                }
            }
        }
    }
    out
}
