//! The symmetric K-level encoder-decoder.
//!
//! The encoder stacks residual units with stride-2 downsampling between
//! levels. The decoder starts at the deepest level with RCU -> CRP -> RCU and
//! walks up one level at a time: the encoder feature is width-matched by a 1x1
//! convolution, refined by an RCU, fused with the coarser decoder output
//! (convolve both, upsample the coarse one, add), then passed through CRP and
//! a final RCU. A 1x1 classifier head maps to one channel per class and a
//! bilinear 2x upsample restores the input resolution.

mod blocks;

pub use blocks::{Crp, Mfb, Rcu};

use crate::error::{Error, Result};
use crate::tensor::{
    all_finite, crop_backward, crop_to_original, pad_to_multiple, upsample_x2,
    upsample_x2_backward, Conv2d, PadInfo,
};
use ndarray::{Array2, Array3, ArrayD, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of feature decomposition levels K.
    pub num_levels: usize,
    /// Encoder width per level, shallowest first; length K.
    pub encoder_channels: Vec<usize>,
    /// Uniform width of the decoder pathway.
    pub decoder_channels: usize,
    /// Output classes n (including background).
    pub num_classes: usize,
    /// Pooling-convolution repetitions per chained-residual-pooling block.
    pub crp_stages: usize,
    /// Input channels; fixed at 3 by the fusion stage.
    pub input_channels: usize,
    /// Seed for the fan-in-scaled uniform weight init.
    pub init_seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_levels must be at least 2, got {}",
                self.num_levels
            )));
        }
        if self.encoder_channels.len() != self.num_levels {
            return Err(Error::InvalidConfig(format!(
                "encoder_channels has {} entries for {} levels",
                self.encoder_channels.len(),
                self.num_levels
            )));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) || self.decoder_channels == 0 {
            return Err(Error::InvalidConfig("channel widths must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.crp_stages < 1 {
            return Err(Error::InvalidConfig("crp_stages must be at least 1".into()));
        }
        if self.input_channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "input_channels is fixed at 3, got {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    /// Smallest practical preset; trains on synthetic corpora in minutes on a
    /// single CPU core.
    pub fn tiny(num_classes: usize, init_seed: u64) -> Self {
        Self {
            num_levels: 2,
            encoder_channels: vec![12, 24],
            decoder_channels: 24,
            num_classes,
            crp_stages: 2,
            input_channels: 3,
            init_seed,
        }
    }

    /// Mid-size preset used for parameter accounting and shape checks.
    pub fn desk(num_classes: usize, init_seed: u64) -> Self {
        Self {
            num_levels: 4,
            encoder_channels: vec![16, 32, 64, 128],
            decoder_channels: 64,
            num_classes,
            crp_stages: 2,
            input_channels: 3,
            init_seed,
        }
    }

    /// ResNet-50-like stage widths. Far too heavy for CPU training; provided
    /// as the full-scale configuration point.
    pub fn resnet50(num_classes: usize, init_seed: u64) -> Self {
        Self {
            num_levels: 4,
            encoder_channels: vec![256, 512, 1024, 2048],
            decoder_channels: 256,
            num_classes,
            crp_stages: 2,
            input_channels: 3,
            init_seed,
        }
    }

    pub fn preset(name: &str, num_classes: usize, init_seed: u64) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(num_classes, init_seed)),
            "desk" => Ok(Self::desk(num_classes, init_seed)),
            "resnet50" => Ok(Self::resnet50(num_classes, init_seed)),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset \"{other}\" (expected tiny, desk, or resnet50)"
            ))),
        }
    }

    fn pad_multiple(&self) -> usize {
        1 << self.num_levels
    }
}

/// Analytic trainable-parameter count for a configuration: the sum over every
/// convolution of out*in*k*k + out.
pub fn count_parameters(config: &NetworkConfig) -> Result<usize> {
    config.validate()?;
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let rcu = |c: usize| 2 * conv(c, c, 3);
    let dec = config.decoder_channels;
    let k_levels = config.num_levels;

    let mut total = 0;
    let mut prev = config.input_channels;
    for &width in &config.encoder_channels {
        total += conv(prev, width, 3); // stride-2 downsampling conv
        total += rcu(width);
        prev = width;
    }
    for i in 0..k_levels {
        let enc_width = config.encoder_channels[k_levels - 1 - i];
        total += conv(enc_width, dec, 1); // width-matching projection
        total += rcu(dec); // input-side RCU
        if i > 0 {
            total += 2 * conv(dec, dec, 3); // fusion block convolutions
        }
        total += config.crp_stages * conv(dec, dec, 3);
        total += rcu(dec); // output-side RCU
    }
    total += conv(dec, config.num_classes, 1); // classifier head
    Ok(total)
}

/// Kinds of primitive layers for structural introspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    BilinearUpsample,
    ResidualAdd,
    /// Never constructed by this architecture; present so structure checks
    /// can assert its absence.
    Normalization,
}

/// Named parameter gradients, accumulated additively. BTreeMap keeps
/// iteration (and therefore reduction) order deterministic.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<String, ArrayD<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, grad: ArrayD<f64>) {
        match self.grads.get_mut(name) {
            Some(existing) => *existing += &grad,
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Sums another gradient set into this one.
    pub fn merge(&mut self, other: &Gradients) {
        for (name, grad) in other.iter() {
            self.add(name, grad.clone());
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.grads.values_mut() {
            grad.mapv_inplace(|v| v * factor);
        }
    }

    /// Name of the first parameter with a non-finite gradient, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.grads
            .iter()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n.as_str())
    }
}

pub(crate) type GradSink = Gradients;

/// Multi-scale encoder features; level k has spatial dims halved k times.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Array3<f64>>,
}

/// Per-pixel class scores at input resolution, shape (n, N1, N2).
#[derive(Debug, Clone)]
pub struct LogitMap {
    pub logits: Array3<f64>,
}

impl LogitMap {
    pub fn num_classes(&self) -> usize {
        self.logits.dim().0
    }

    /// Numerically stable per-pixel softmax.
    pub fn softmax(&self) -> Array3<f64> {
        let (n, h, w) = self.logits.dim();
        let mut out = Array3::zeros((n, h, w));
        for y in 0..h {
            for x in 0..w {
                let mut max = f64::NEG_INFINITY;
                for c in 0..n {
                    max = max.max(self.logits[[c, y, x]]);
                }
                let mut denom = 0.0;
                for c in 0..n {
                    let e = (self.logits[[c, y, x]] - max).exp();
                    out[[c, y, x]] = e;
                    denom += e;
                }
                for c in 0..n {
                    out[[c, y, x]] /= denom;
                }
            }
        }
        out
    }

    /// Per-pixel argmax; ties resolve to the lowest class id.
    pub fn predicted_mask(&self) -> Array2<u8> {
        let (n, h, w) = self.logits.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut best_c = 0usize;
            let mut best = self.logits[[0, y, x]];
            for c in 1..n {
                let v = self.logits[[c, y, x]];
                if v > best {
                    best = v;
                    best_c = c;
                }
            }
            best_c as u8
        })
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    down: Conv2d,
    rcu: Rcu,
}

#[derive(Debug, Clone)]
struct EncLevelCache {
    input: Array3<f64>,
    rcu: blocks::RcuCache,
}

impl EncoderLevel {
    fn forward(&self, input: &Array3<f64>) -> Result<Array3<f64>> {
        self.rcu.forward(&self.down.forward(input))
    }

    fn forward_train(&self, input: &Array3<f64>) -> Result<(Array3<f64>, EncLevelCache)> {
        let down_out = self.down.forward(input);
        let (out, rcu) = self.rcu.forward_train(&down_out)?;
        Ok((
            out,
            EncLevelCache {
                input: input.clone(),
                rcu,
            },
        ))
    }

    fn backward(
        &self,
        cache: &EncLevelCache,
        grad_out: &Array3<f64>,
        path: &str,
        sink: &mut Gradients,
    ) -> Array3<f64> {
        let d_down_out = self
            .rcu
            .backward(&cache.rcu, grad_out, &format!("{path}.rcu"), sink);
        let (d_input, gw, gb) = self.down.backward(&cache.input, &d_down_out);
        sink.add(&format!("{path}.down.weight"), gw.into_dyn());
        sink.add(&format!("{path}.down.bias"), gb.into_dyn());
        d_input
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    proj: Conv2d,
    rcu_in: Rcu,
    /// None at the deepest level (there is no coarser input to fuse).
    mfb: Option<Mfb>,
    crp: Crp,
    rcu_out: Rcu,
}

#[derive(Debug, Clone)]
struct DecLevelCache {
    enc_feat: Array3<f64>,
    rcu_in: blocks::RcuCache,
    mfb: Option<blocks::MfbCache>,
    crp: blocks::CrpCache,
    rcu_out: blocks::RcuCache,
}

impl DecoderLevel {
    fn forward(&self, enc_feat: &Array3<f64>, coarse: Option<&Array3<f64>>) -> Result<Array3<f64>> {
        let fine = self.rcu_in.forward(&self.proj.forward(enc_feat))?;
        let fused = match (&self.mfb, coarse) {
            (Some(mfb), Some(c)) => mfb.forward(c, &fine)?,
            (None, None) => fine,
            _ => return Err(Error::InvalidConfig("decoder level wiring mismatch".into())),
        };
        self.rcu_out.forward(&self.crp.forward(&fused)?)
    }

    fn forward_train(
        &self,
        enc_feat: &Array3<f64>,
        coarse: Option<&Array3<f64>>,
    ) -> Result<(Array3<f64>, DecLevelCache)> {
        let proj_out = self.proj.forward(enc_feat);
        let (fine, rcu_in_cache) = self.rcu_in.forward_train(&proj_out)?;
        let (fused, mfb_cache) = match (&self.mfb, coarse) {
            (Some(mfb), Some(c)) => {
                let (out, cache) = mfb.forward_train(c, &fine)?;
                (out, Some(cache))
            }
            (None, None) => (fine, None),
            _ => return Err(Error::InvalidConfig("decoder level wiring mismatch".into())),
        };
        let (pooled, crp_cache) = self.crp.forward_train(&fused)?;
        let (out, rcu_out_cache) = self.rcu_out.forward_train(&pooled)?;
        Ok((
            out,
            DecLevelCache {
                enc_feat: enc_feat.clone(),
                rcu_in: rcu_in_cache,
                mfb: mfb_cache,
                crp: crp_cache,
                rcu_out: rcu_out_cache,
            },
        ))
    }

    /// Returns (grad wrt encoder feature, grad wrt coarser decoder output).
    fn backward(
        &self,
        cache: &DecLevelCache,
        grad_out: &Array3<f64>,
        path: &str,
        sink: &mut Gradients,
    ) -> (Array3<f64>, Option<Array3<f64>>) {
        let d_pooled = self
            .rcu_out
            .backward(&cache.rcu_out, grad_out, &format!("{path}.rcu_out"), sink);
        let d_fused = self
            .crp
            .backward(&cache.crp, &d_pooled, &format!("{path}.crp"), sink);
        let (d_fine, d_coarse) = match (&self.mfb, &cache.mfb) {
            (Some(mfb), Some(mfb_cache)) => {
                let (dc, df) = mfb.backward(mfb_cache, &d_fused, &format!("{path}.mfb"), sink);
                (df, Some(dc))
            }
            _ => (d_fused, None),
        };
        let d_proj_out = self
            .rcu_in
            .backward(&cache.rcu_in, &d_fine, &format!("{path}.rcu_in"), sink);
        let (d_enc, gw, gb) = self.proj.backward(&cache.enc_feat, &d_proj_out);
        sink.add(&format!("{path}.proj.weight"), gw.into_dyn());
        sink.add(&format!("{path}.proj.bias"), gb.into_dyn());
        (d_enc, d_coarse)
    }
}

/// Forward activations needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct NetCache {
    pad_info: PadInfo,
    padded_dims: (usize, usize),
    enc: Vec<EncLevelCache>,
    /// Decoder caches in processing order (deepest first).
    dec: Vec<DecLevelCache>,
    dec_out: Array3<f64>,
    half_dims: (usize, usize, usize),
}

/// The full encoder-decoder with classifier head.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    encoder: Vec<EncoderLevel>,
    /// Processing order: index 0 is the deepest level K.
    decoder: Vec<DecoderLevel>,
    classifier: Conv2d,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let k_levels = config.num_levels;
        let dec_width = config.decoder_channels;

        let mut encoder = Vec::with_capacity(k_levels);
        let mut prev = config.input_channels;
        for &width in &config.encoder_channels {
            encoder.push(EncoderLevel {
                down: Conv2d::new(prev, width, 3, 2, 1, &mut rng),
                rcu: Rcu::new(width, &mut rng),
            });
            prev = width;
        }

        let mut decoder = Vec::with_capacity(k_levels);
        for i in 0..k_levels {
            let enc_width = config.encoder_channels[k_levels - 1 - i];
            decoder.push(DecoderLevel {
                proj: Conv2d::new(enc_width, dec_width, 1, 1, 0, &mut rng),
                rcu_in: Rcu::new(dec_width, &mut rng),
                mfb: if i > 0 { Some(Mfb::new(dec_width, &mut rng)) } else { None },
                crp: Crp::new(dec_width, config.crp_stages, &mut rng),
                rcu_out: Rcu::new(dec_width, &mut rng),
            });
        }

        let classifier = Conv2d::new(dec_width, config.num_classes, 1, 1, 0, &mut rng);
        Ok(Self {
            config,
            encoder,
            decoder,
            classifier,
        })
    }

    fn check_input(&self, input: &Array3<f64>) -> Result<()> {
        if input.dim().0 != self.config.input_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.input_channels,
                got: input.dim().0,
            });
        }
        if !all_finite(input) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    /// Runs the encoder alone, padding the input to a multiple of 2^K first.
    /// Level k of the pyramid has dims (C_k, H/2^k, W/2^k) of the padded input.
    pub fn encode(&self, input: &Array3<f64>) -> Result<FeaturePyramid> {
        self.check_input(input)?;
        let (padded, _) = pad_to_multiple(input, self.config.pad_multiple());
        let mut levels = Vec::with_capacity(self.encoder.len());
        let mut current = padded;
        for level in &self.encoder {
            current = level.forward(&current)?;
            levels.push(current.clone());
        }
        Ok(FeaturePyramid { levels })
    }

    /// Inference forward pass: logits at the input resolution.
    pub fn forward(&self, input: &Array3<f64>) -> Result<LogitMap> {
        self.check_input(input)?;
        let (padded, info) = pad_to_multiple(input, self.config.pad_multiple());
        let mut enc_outs = Vec::with_capacity(self.encoder.len());
        let mut current = padded;
        for level in &self.encoder {
            current = level.forward(&current)?;
            enc_outs.push(current.clone());
        }
        let k_levels = self.encoder.len();
        let mut coarse: Option<Array3<f64>> = None;
        for (i, level) in self.decoder.iter().enumerate() {
            let enc_feat = &enc_outs[k_levels - 1 - i];
            let out = level.forward(enc_feat, coarse.as_ref())?;
            coarse = Some(out);
        }
        let dec_out = coarse.expect("at least one decoder level");
        let half = self.classifier.forward(&dec_out);
        let full = upsample_x2(&half);
        let logits = crop_to_original(&full, &info);
        Ok(LogitMap { logits })
    }

    /// Training forward pass: logits plus the activation cache for backward.
    pub fn forward_train(&self, input: &Array3<f64>) -> Result<(LogitMap, NetCache)> {
        self.check_input(input)?;
        let (padded, info) = pad_to_multiple(input, self.config.pad_multiple());
        let padded_dims = (padded.dim().1, padded.dim().2);

        let mut enc_caches = Vec::with_capacity(self.encoder.len());
        let mut enc_outs = Vec::with_capacity(self.encoder.len());
        let mut current = padded;
        for level in &self.encoder {
            let (out, cache) = level.forward_train(&current)?;
            enc_caches.push(cache);
            enc_outs.push(out.clone());
            current = out;
        }

        let k_levels = self.encoder.len();
        let mut dec_caches = Vec::with_capacity(self.decoder.len());
        let mut coarse: Option<Array3<f64>> = None;
        for (i, level) in self.decoder.iter().enumerate() {
            let enc_feat = &enc_outs[k_levels - 1 - i];
            let (out, cache) = level.forward_train(enc_feat, coarse.as_ref())?;
            dec_caches.push(cache);
            coarse = Some(out);
        }
        let dec_out = coarse.expect("at least one decoder level");
        let half = self.classifier.forward(&dec_out);
        let half_dims = half.dim();
        let full = upsample_x2(&half);
        let logits = crop_to_original(&full, &info);
        Ok((
            LogitMap { logits },
            NetCache {
                pad_info: info,
                padded_dims,
                enc: enc_caches,
                dec: dec_caches,
                dec_out,
                half_dims,
            },
        ))
    }

    /// Backpropagates a logit gradient through the whole network, returning
    /// parameter gradients keyed by name.
    pub fn backward(&self, cache: &NetCache, grad_logits: &Array3<f64>) -> Gradients {
        let mut sink = Gradients::new();
        let (ph, pw) = cache.padded_dims;
        let full = crop_backward(grad_logits, &cache.pad_info, ph, pw);
        let d_half = upsample_x2_backward(&full, cache.half_dims);
        let (d_dec_out, gw, gb) = self.classifier.backward(&cache.dec_out, &d_half);
        sink.add("classifier.weight", gw.into_dyn());
        sink.add("classifier.bias", gb.into_dyn());

        let k_levels = self.encoder.len();
        // Decoder levels in reverse processing order (shallowest first).
        let mut d_enc_feats: Vec<Option<Array3<f64>>> = vec![None; k_levels];
        let mut grad_level_out = d_dec_out;
        for i in (0..k_levels).rev() {
            let (d_enc, d_coarse) = self.decoder[i].backward(
                &cache.dec[i],
                &grad_level_out,
                &format!("decoder.{i}"),
                &mut sink,
            );
            d_enc_feats[k_levels - 1 - i] = Some(d_enc);
            match d_coarse {
                Some(g) => grad_level_out = g,
                None => debug_assert_eq!(i, 0),
            }
        }

        // Encoder levels deepest-first; each level's output also feeds the
        // next encoder level, so gradients add up.
        let mut grad_out = d_enc_feats[k_levels - 1].take().expect("deepest grad");
        for e in (0..k_levels).rev() {
            let d_input =
                self.encoder[e].backward(&cache.enc[e], &grad_out, &format!("encoder.{e}"), &mut sink);
            if e > 0 {
                grad_out = d_enc_feats[e - 1].take().expect("decoder grad") + &d_input;
            }
        }
        sink
    }

    /// Actual trainable scalar count, summed over parameter tensors.
    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, v)| v.len()).sum()
    }

    fn conv_paths(&self) -> Vec<(String, &Conv2d)> {
        let mut out = Vec::new();
        for (e, level) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{e}.down"), &level.down));
            out.push((format!("encoder.{e}.rcu.conv1"), &level.rcu.conv1));
            out.push((format!("encoder.{e}.rcu.conv2"), &level.rcu.conv2));
        }
        for (i, level) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.proj"), &level.proj));
            out.push((format!("decoder.{i}.rcu_in.conv1"), &level.rcu_in.conv1));
            out.push((format!("decoder.{i}.rcu_in.conv2"), &level.rcu_in.conv2));
            if let Some(mfb) = &level.mfb {
                out.push((format!("decoder.{i}.mfb.conv_fine"), &mfb.conv_fine));
                out.push((format!("decoder.{i}.mfb.conv_coarse"), &mfb.conv_coarse));
            }
            for (s, stage) in level.crp.stages.iter().enumerate() {
                out.push((format!("decoder.{i}.crp.stage{s}"), stage));
            }
            out.push((format!("decoder.{i}.rcu_out.conv1"), &level.rcu_out.conv1));
            out.push((format!("decoder.{i}.rcu_out.conv2"), &level.rcu_out.conv2));
        }
        out.push(("classifier".to_string(), &self.classifier));
        out
    }

    fn conv_paths_mut(&mut self) -> Vec<(String, &mut Conv2d)> {
        let mut out: Vec<(String, &mut Conv2d)> = Vec::new();
        for (e, level) in self.encoder.iter_mut().enumerate() {
            out.push((format!("encoder.{e}.down"), &mut level.down));
            out.push((format!("encoder.{e}.rcu.conv1"), &mut level.rcu.conv1));
            out.push((format!("encoder.{e}.rcu.conv2"), &mut level.rcu.conv2));
        }
        for (i, level) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder.{i}.proj"), &mut level.proj));
            out.push((format!("decoder.{i}.rcu_in.conv1"), &mut level.rcu_in.conv1));
            out.push((format!("decoder.{i}.rcu_in.conv2"), &mut level.rcu_in.conv2));
            if let Some(mfb) = &mut level.mfb {
                out.push((format!("decoder.{i}.mfb.conv_fine"), &mut mfb.conv_fine));
                out.push((format!("decoder.{i}.mfb.conv_coarse"), &mut mfb.conv_coarse));
            }
            for (s, stage) in level.crp.stages.iter_mut().enumerate() {
                out.push((format!("decoder.{i}.crp.stage{s}"), stage));
            }
            out.push((format!("decoder.{i}.rcu_out.conv1"), &mut level.rcu_out.conv1));
            out.push((format!("decoder.{i}.rcu_out.conv2"), &mut level.rcu_out.conv2));
        }
        out.push(("classifier".to_string(), &mut self.classifier));
        out
    }

    /// All parameter tensors with their hierarchical names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (path, conv) in self.conv_paths() {
            out.push((format!("{path}.weight"), conv.weight.view().into_dyn()));
            out.push((format!("{path}.bias"), conv.bias.view().into_dyn()));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (path, conv) in self.conv_paths_mut() {
            let (weight, bias) = (&mut conv.weight, &mut conv.bias);
            // Split the two disjoint field borrows.
            out.push((format!("{path}.weight"), weight.view_mut().into_dyn()));
            out.push((format!("{path}.bias"), bias.view_mut().into_dyn()));
        }
        out
    }

    /// Forward-order primitive layer listing per block path, for structural
    /// checks (e.g. asserting the residual units carry no normalization).
    pub fn layer_summary(&self) -> Vec<(String, LayerKind)> {
        let mut out = Vec::new();
        let push_all = |path: String, kinds: Vec<LayerKind>, out: &mut Vec<(String, LayerKind)>| {
            for kind in kinds {
                out.push((path.clone(), kind));
            }
        };
        for (e, level) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{e}.down"), LayerKind::Conv));
            push_all(format!("encoder.{e}.rcu"), level.rcu.layer_kinds(), &mut out);
        }
        for (i, level) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.proj"), LayerKind::Conv));
            push_all(format!("decoder.{i}.rcu_in"), level.rcu_in.layer_kinds(), &mut out);
            if let Some(mfb) = &level.mfb {
                push_all(format!("decoder.{i}.mfb"), mfb.layer_kinds(), &mut out);
            }
            push_all(format!("decoder.{i}.crp"), level.crp.layer_kinds(), &mut out);
            push_all(format!("decoder.{i}.rcu_out"), level.rcu_out.layer_kinds(), &mut out);
        }
        out.push(("classifier".to_string(), LayerKind::Conv));
        out.push(("head.upsample".to_string(), LayerKind::BilinearUpsample));
        out
    }
}
