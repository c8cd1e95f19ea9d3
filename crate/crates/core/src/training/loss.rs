//! Per-pixel categorical cross-entropy under a softmax, averaged over pixels
//! within each sample and over samples within the batch.

use crate::error::{Error, Result};
use crate::network::LogitMap;
use ndarray::{Array2, Array3};

/// Probabilities below this are clamped before the log.
pub const LOG_EPS: f64 = 1e-12;

fn max_nll() -> f64 {
    -LOG_EPS.ln()
}

/// Mean batch loss: -(1/b) sum over samples of the pixel-averaged log softmax
/// probability of the target class.
pub fn cross_entropy_loss(logits: &[LogitMap], targets: &[Array2<u8>]) -> Result<f64> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(Error::InvalidConfig(format!(
            "loss batch mismatch: {} logit maps vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (lm, target) in logits.iter().zip(targets.iter()) {
        total += sample_loss(lm, target)?;
    }
    Ok(total / logits.len() as f64)
}

fn check_sample(logits: &LogitMap, target: &Array2<u8>) -> Result<()> {
    let (n, h, w) = logits.logits.dim();
    if target.dim() != (h, w) {
        return Err(Error::DimensionMismatch {
            context: "loss target vs logits".into(),
            expected: (h, w),
            got: target.dim(),
        });
    }
    if let Some(&v) = target.iter().max() {
        if (v as usize) >= n {
            return Err(Error::MaskValueOutOfRange {
                value: v as u32,
                num_classes: n,
                context: "loss target".into(),
            });
        }
    }
    Ok(())
}

/// Pixel-averaged negative log softmax probability of the target class for one
/// sample.
pub fn sample_loss(logits: &LogitMap, target: &Array2<u8>) -> Result<f64> {
    check_sample(logits, target)?;
    let (n, h, w) = logits.logits.dim();
    let cap = max_nll();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut max = f64::NEG_INFINITY;
            for c in 0..n {
                max = max.max(logits.logits[[c, y, x]]);
            }
            let mut denom = 0.0;
            for c in 0..n {
                denom += (logits.logits[[c, y, x]] - max).exp();
            }
            let lse = max + denom.ln();
            let nll = lse - logits.logits[[target[[y, x]] as usize, y, x]];
            sum += nll.min(cap);
        }
    }
    Ok(sum / (h * w) as f64)
}

/// One sample's loss plus its logit gradient, scaled for a batch of
/// `batch_size` (the gradient of the batch-mean loss with respect to this
/// sample's logits).
///
/// The clamp caps only the reported value; the gradient is the plain softmax
/// cross-entropy one, p - t, which is finite everywhere and keeps saturated
/// wrong predictions recoverable.
pub fn sample_loss_and_grad(
    logits: &LogitMap,
    target: &Array2<u8>,
    batch_size: usize,
) -> Result<(f64, Array3<f64>)> {
    check_sample(logits, target)?;
    let (n, h, w) = logits.logits.dim();
    let cap = max_nll();
    let scale = 1.0 / (batch_size * h * w) as f64;
    let mut grad = Array3::zeros((n, h, w));
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let t = target[[y, x]] as usize;
            let mut max = f64::NEG_INFINITY;
            for c in 0..n {
                max = max.max(logits.logits[[c, y, x]]);
            }
            let mut denom = 0.0;
            for c in 0..n {
                denom += (logits.logits[[c, y, x]] - max).exp();
            }
            let lse = max + denom.ln();
            let nll = lse - logits.logits[[t, y, x]];
            sum += nll.min(cap);
            for c in 0..n {
                let p = (logits.logits[[c, y, x]] - max).exp() / denom;
                grad[[c, y, x]] = (p - if c == t { 1.0 } else { 0.0 }) * scale;
            }
        }
    }
    Ok((sum / (h * w) as f64, grad))
}
