//! Decoder building blocks: residual convolutional units, chained residual
//! pooling, and multi-scale fusion. Each block carries its own forward cache
//! and backward pass; gradients are accumulated into a [`Gradients`] map under
//! the block's parameter path.

use crate::error::{Error, Result};
use crate::network::{GradSink, LayerKind};
use crate::tensor::{
    maxpool_s1, maxpool_s1_backward, relu, relu_backward, upsample_x2, upsample_x2_backward,
    Conv2d, PoolCache,
};
use ndarray::Array3;
use rand::Rng;

pub(crate) const CRP_POOL_WINDOW: usize = 5;

fn check_channels(expected: usize, x: &Array3<f64>) -> Result<()> {
    if x.dim().0 != expected {
        return Err(Error::ChannelMismatch {
            expected,
            got: x.dim().0,
        });
    }
    Ok(())
}

/// Residual convolutional unit: x + Conv(ReLU(Conv(ReLU(x)))).
///
/// Deliberately contains no normalization layers; the residual branch is two
/// ReLU-convolution pairs summed back onto the input.
#[derive(Debug, Clone)]
pub struct Rcu {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

#[derive(Debug, Clone)]
pub struct RcuCache {
    x: Array3<f64>,
    a1: Array3<f64>,
    z1: Array3<f64>,
    a2: Array3<f64>,
}

impl Rcu {
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        // The branch's closing conv starts small so the residual sum does not
        // compound activation variance across stacked units.
        Self {
            conv1: Conv2d::new(channels, channels, 3, 1, 1, rng),
            conv2: Conv2d::new_scaled(channels, channels, 3, 1, 1, 0.25, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            conv1: Conv2d::zeros(channels, channels, 3, 1, 1),
            conv2: Conv2d::zeros(channels, channels, 3, 1, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Array3<f64>) -> Result<(Array3<f64>, RcuCache)> {
        check_channels(self.channels(), x)?;
        let a1 = relu(x);
        let z1 = self.conv1.forward(&a1);
        let a2 = relu(&z1);
        let z2 = self.conv2.forward(&a2);
        let out = x + &z2;
        Ok((
            out,
            RcuCache {
                x: x.clone(),
                a1,
                z1,
                a2,
            },
        ))
    }

    /// Returns the gradient with respect to the block input.
    pub fn backward(
        &self,
        cache: &RcuCache,
        grad_out: &Array3<f64>,
        path: &str,
        sink: &mut GradSink,
    ) -> Array3<f64> {
        let (d_a2, gw2, gb2) = self.conv2.backward(&cache.a2, grad_out);
        sink.add(&format!("{path}.conv2.weight"), gw2.into_dyn());
        sink.add(&format!("{path}.conv2.bias"), gb2.into_dyn());
        let d_z1 = relu_backward(&cache.z1, &d_a2);
        let (d_a1, gw1, gb1) = self.conv1.backward(&cache.a1, &d_z1);
        sink.add(&format!("{path}.conv1.weight"), gw1.into_dyn());
        sink.add(&format!("{path}.conv1.bias"), gb1.into_dyn());
        grad_out + &relu_backward(&cache.x, &d_a1)
    }

    /// Forward-order layer list for structural introspection.
    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        vec![
            LayerKind::Relu,
            LayerKind::Conv,
            LayerKind::Relu,
            LayerKind::Conv,
            LayerKind::ResidualAdd,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }
}

/// Chained residual pooling: ReLU, then a cascade of stride-1 max-pool +
/// convolution stages whose outputs are summed residually. Spatial dims are
/// preserved; the receptive field grows with each stage.
#[derive(Debug, Clone)]
pub struct Crp {
    pub stages: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct CrpCache {
    x: Array3<f64>,
    /// Per stage: the pooled map fed to the conv, and the pooling argmax.
    stages: Vec<(Array3<f64>, PoolCache)>,
}

impl Crp {
    pub fn new<R: Rng>(channels: usize, num_stages: usize, rng: &mut R) -> Self {
        // Stage outputs accumulate onto the relu path, so each conv starts small.
        Self {
            stages: (0..num_stages)
                .map(|_| Conv2d::new_scaled(channels, channels, 3, 1, 1, 0.25, rng))
                .collect(),
        }
    }

    pub fn zeros(channels: usize, num_stages: usize) -> Self {
        Self {
            stages: (0..num_stages)
                .map(|_| Conv2d::zeros(channels, channels, 3, 1, 1))
                .collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.stages[0].in_channels()
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Array3<f64>) -> Result<(Array3<f64>, CrpCache)> {
        check_channels(self.channels(), x)?;
        let h0 = relu(x);
        let mut acc = h0.clone();
        let mut h = h0;
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for conv in &self.stages {
            let (pooled, pool_cache) = maxpool_s1(&h, CRP_POOL_WINDOW);
            h = conv.forward(&pooled);
            acc += &h;
            stage_caches.push((pooled, pool_cache));
        }
        Ok((
            acc,
            CrpCache {
                x: x.clone(),
                stages: stage_caches,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &CrpCache,
        grad_out: &Array3<f64>,
        path: &str,
        sink: &mut GradSink,
    ) -> Array3<f64> {
        // out = h_0 + h_1 + ... + h_S with h_s = conv_s(pool(h_{s-1})), so each
        // h_{s-1} receives grad_out directly plus the backprop through stage s.
        let mut g = grad_out.clone();
        for (s, conv) in self.stages.iter().enumerate().rev() {
            let (pooled, pool_cache) = &cache.stages[s];
            let (d_pooled, gw, gb) = conv.backward(pooled, &g);
            sink.add(&format!("{path}.stage{s}.weight"), gw.into_dyn());
            sink.add(&format!("{path}.stage{s}.bias"), gb.into_dyn());
            g = grad_out + &maxpool_s1_backward(pool_cache, &d_pooled);
        }
        relu_backward(&cache.x, &g)
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        let mut kinds = vec![LayerKind::Relu];
        for _ in &self.stages {
            kinds.push(LayerKind::MaxPool);
            kinds.push(LayerKind::Conv);
            kinds.push(LayerKind::ResidualAdd);
        }
        kinds
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Conv2d::param_count).sum()
    }
}

/// Multi-scale fusion: Conv(fine) + Upsample2x(Conv(coarse)).
#[derive(Debug, Clone)]
pub struct Mfb {
    pub conv_fine: Conv2d,
    pub conv_coarse: Conv2d,
}

#[derive(Debug, Clone)]
pub struct MfbCache {
    fine: Array3<f64>,
    coarse: Array3<f64>,
    coarse_out_dims: (usize, usize, usize),
}

impl Mfb {
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        // The two pathways add; split the variance budget between them.
        Self {
            conv_fine: Conv2d::new_scaled(channels, channels, 3, 1, 1, 0.7, rng),
            conv_coarse: Conv2d::new_scaled(channels, channels, 3, 1, 1, 0.7, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            conv_fine: Conv2d::zeros(channels, channels, 3, 1, 1),
            conv_coarse: Conv2d::zeros(channels, channels, 3, 1, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_fine.in_channels()
    }

    pub fn forward(&self, coarse: &Array3<f64>, fine: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(self.forward_train(coarse, fine)?.0)
    }

    pub fn forward_train(
        &self,
        coarse: &Array3<f64>,
        fine: &Array3<f64>,
    ) -> Result<(Array3<f64>, MfbCache)> {
        check_channels(self.channels(), coarse)?;
        check_channels(self.channels(), fine)?;
        let (_, fh, fw) = fine.dim();
        let (_, ch, cw) = coarse.dim();
        if (ch * 2, cw * 2) != (fh, fw) {
            return Err(Error::DimensionMismatch {
                context: "fusion block: coarse must be half the fine dims".into(),
                expected: (fh, fw),
                got: (ch * 2, cw * 2),
            });
        }
        let cf = self.conv_fine.forward(fine);
        let cc = self.conv_coarse.forward(coarse);
        let up = upsample_x2(&cc);
        let out = cf + &up;
        Ok((
            out,
            MfbCache {
                fine: fine.clone(),
                coarse: coarse.clone(),
                coarse_out_dims: cc.dim(),
            },
        ))
    }

    /// Returns (grad wrt coarse, grad wrt fine).
    pub fn backward(
        &self,
        cache: &MfbCache,
        grad_out: &Array3<f64>,
        path: &str,
        sink: &mut GradSink,
    ) -> (Array3<f64>, Array3<f64>) {
        let (d_fine, gwf, gbf) = self.conv_fine.backward(&cache.fine, grad_out);
        sink.add(&format!("{path}.conv_fine.weight"), gwf.into_dyn());
        sink.add(&format!("{path}.conv_fine.bias"), gbf.into_dyn());
        let d_cc = upsample_x2_backward(grad_out, cache.coarse_out_dims);
        let (d_coarse, gwc, gbc) = self.conv_coarse.backward(&cache.coarse, &d_cc);
        sink.add(&format!("{path}.conv_coarse.weight"), gwc.into_dyn());
        sink.add(&format!("{path}.conv_coarse.bias"), gbc.into_dyn());
        (d_coarse, d_fine)
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        vec![
            LayerKind::Conv,
            LayerKind::Conv,
            LayerKind::BilinearUpsample,
            LayerKind::ResidualAdd,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.conv_fine.param_count() + self.conv_coarse.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::GradSink;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(dims: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(dims, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rcu_with_zero_kernels_is_identity() {
        let rcu = Rcu::zeros(4);
        let x = random_map((4, 8, 8), 1);
        let out = rcu.forward(&x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn rcu_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rcu = Rcu::new(6, &mut rng);
        let x = random_map((6, 8, 8), 3);
        let out = rcu.forward(&x).unwrap();
        assert_eq!(out.dim(), x.dim());
    }

    #[test]
    fn rcu_rejects_channel_mismatch() {
        let rcu = Rcu::zeros(4);
        let x = random_map((3, 8, 8), 4);
        assert!(matches!(
            rcu.forward(&x),
            Err(Error::ChannelMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn rcu_has_no_normalization_layers() {
        let rcu = Rcu::zeros(4);
        assert!(rcu
            .layer_kinds()
            .iter()
            .all(|k| *k != LayerKind::Normalization));
    }

    #[test]
    fn rcu_input_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rcu = Rcu::new(2, &mut rng);
        let x = random_map((2, 4, 4), 6);
        // Scalar objective: plain sum of outputs.
        let (_, cache) = rcu.forward_train(&x).unwrap();
        let ones = Array3::from_elem((2, 4, 4), 1.0);
        let mut sink = GradSink::new();
        let gx = rcu.backward(&cache, &ones, "rcu", &mut sink);

        let step = 1e-3;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += step;
            xm.as_slice_mut().unwrap()[idx] -= step;
            let num = (rcu.forward(&xp).unwrap().sum() - rcu.forward(&xm).unwrap().sum())
                / (2.0 * step);
            let ana = gx.as_slice().unwrap()[idx];
            let denom = num.abs().max(ana.abs()).max(1.0);
            assert!(
                ((num - ana) / denom).abs() < 1e-4,
                "grad {idx}: numeric {num} vs analytic {ana}"
            );
        }
    }

    #[test]
    fn crp_with_zero_kernels_returns_relu_of_input() {
        let crp = Crp::zeros(3, 2);
        let x = random_map((3, 8, 8), 7);
        let out = crp.forward(&x).unwrap();
        assert_eq!(out, relu(&x));
    }

    #[test]
    fn crp_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let crp = Crp::new(5, 2, &mut rng);
        let x = random_map((5, 9, 7), 9);
        let out = crp.forward(&x).unwrap();
        assert_eq!(out.dim(), x.dim());
    }

    #[test]
    fn crp_constant_plane_is_constant_away_from_borders() {
        // One stage on a constant plane: pooling returns the constant
        // everywhere; the 3x3 conv's zero padding only perturbs a 1-pixel rim.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let crp = Crp::new(1, 1, &mut rng);
        let x = Array3::from_elem((1, 6, 6), 0.5);
        let out = crp.forward(&x).unwrap();
        let center = out[[0, 2, 2]];
        for y in 1..5 {
            for xo in 1..5 {
                assert!(
                    (out[[0, y, xo]] - center).abs() < 1e-12,
                    "interior not constant at ({y},{xo})"
                );
            }
        }
        // Hand evaluation: pooled plane is 0.5 everywhere, so the interior
        // conv response is 0.5 * sum(kernel) + bias, plus the relu(x) term.
        let kernel_sum: f64 = crp.stages[0].weight.iter().sum();
        let expect = 0.5 + 0.5 * kernel_sum + crp.stages[0].bias[0];
        assert!((center - expect).abs() < 1e-12);
    }

    #[test]
    fn crp_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let crp = Crp::new(2, 2, &mut rng);
        let x = random_map((2, 6, 6), 12);
        let (_, cache) = crp.forward_train(&x).unwrap();
        let ones = Array3::from_elem((2, 6, 6), 1.0);
        let mut sink = GradSink::new();
        let gx = crp.backward(&cache, &ones, "crp", &mut sink);

        let step = 1e-4;
        for idx in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += step;
            xm.as_slice_mut().unwrap()[idx] -= step;
            let num = (crp.forward(&xp).unwrap().sum() - crp.forward(&xm).unwrap().sum())
                / (2.0 * step);
            let ana = gx.as_slice().unwrap()[idx];
            let denom = num.abs().max(ana.abs()).max(1.0);
            assert!(
                ((num - ana) / denom).abs() < 1e-4,
                "grad {idx}: numeric {num} vs analytic {ana}"
            );
        }
    }

    #[test]
    fn mfb_output_matches_fine_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mfb = Mfb::new(4, &mut rng);
        let coarse = random_map((4, 8, 8), 14);
        let fine = random_map((4, 16, 16), 15);
        let out = mfb.forward(&coarse, &fine).unwrap();
        assert_eq!(out.dim(), (4, 16, 16));
    }

    #[test]
    fn mfb_rejects_wrong_scale_ratio() {
        let mfb = Mfb::zeros(4);
        let coarse = random_map((4, 8, 8), 16);
        let fine = random_map((4, 20, 20), 17);
        assert!(matches!(
            mfb.forward(&coarse, &fine),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mfb_zero_coarse_with_identity_fine_conv_passes_fine_through() {
        let mut mfb = Mfb::zeros(2);
        // Identity-initialize the fine conv: center tap 1 on the matching channel.
        for c in 0..2 {
            mfb.conv_fine.weight[[c, c, 1, 1]] = 1.0;
        }
        let coarse = Array3::zeros((2, 4, 4));
        let fine = random_map((2, 8, 8), 18);
        let out = mfb.forward(&coarse, &fine).unwrap();
        for (o, f) in out.iter().zip(fine.iter()) {
            assert!((o - f).abs() < 1e-12);
        }
    }

    #[test]
    fn mfb_constant_coarse_adds_flat_offset_under_identity_convs() {
        let mut mfb = Mfb::zeros(1);
        mfb.conv_fine.weight[[0, 0, 1, 1]] = 1.0;
        mfb.conv_coarse.weight[[0, 0, 1, 1]] = 1.0;
        // 2x2 constant coarse map: a center-tap identity kernel never touches
        // the zero padding, so conv_coarse(coarse) stays the constant, and the
        // bilinear 2x upsample of a constant map is the same constant.
        let coarse = Array3::from_elem((1, 2, 2), 0.25);
        let fine = random_map((1, 4, 4), 19);
        let out = mfb.forward(&coarse, &fine).unwrap();
        for (o, f) in out.iter().zip(fine.iter()) {
            assert!((o - (f + 0.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn mfb_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mfb = Mfb::new(2, &mut rng);
        let coarse = random_map((2, 3, 3), 21);
        let fine = random_map((2, 6, 6), 22);
        let (_, cache) = mfb.forward_train(&coarse, &fine).unwrap();
        let ones = Array3::from_elem((2, 6, 6), 1.0);
        let mut sink = GradSink::new();
        let (g_coarse, g_fine) = mfb.backward(&cache, &ones, "mfb", &mut sink);

        let step = 1e-5;
        for idx in 0..coarse.len() {
            let mut cp = coarse.clone();
            let mut cm = coarse.clone();
            cp.as_slice_mut().unwrap()[idx] += step;
            cm.as_slice_mut().unwrap()[idx] -= step;
            let num = (mfb.forward(&cp, &fine).unwrap().sum()
                - mfb.forward(&cm, &fine).unwrap().sum())
                / (2.0 * step);
            let ana = g_coarse.as_slice().unwrap()[idx];
            assert!((num - ana).abs() < 1e-7, "coarse grad {idx}");
        }
        for idx in 0..fine.len() {
            let mut fp = fine.clone();
            let mut fm = fine.clone();
            fp.as_slice_mut().unwrap()[idx] += step;
            fm.as_slice_mut().unwrap()[idx] -= step;
            let num = (mfb.forward(&coarse, &fp).unwrap().sum()
                - mfb.forward(&coarse, &fm).unwrap().sum())
                / (2.0 * step);
            let ana = g_fine.as_slice().unwrap()[idx];
            assert!((num - ana).abs() < 1e-7, "fine grad {idx}");
        }
    }
}
