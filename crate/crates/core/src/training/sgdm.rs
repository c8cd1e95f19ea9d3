//! Stochastic gradient descent with momentum:
//! buffer <- momentum * buffer + grad; param <- param - lr * buffer.

use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use ndarray::{ArrayD, ArrayViewMutD};
use std::collections::BTreeMap;

pub type MomentumBuffers = BTreeMap<String, ArrayD<f64>>;

/// Updates a single parameter tensor in place.
pub fn sgdm_update(
    mut param: ArrayViewMutD<'_, f64>,
    grad: &ArrayD<f64>,
    buffer: &mut ArrayD<f64>,
    lr: f64,
    momentum: f64,
) {
    buffer.zip_mut_with(grad, |b, &g| *b = momentum * *b + g);
    param.zip_mut_with(buffer, |p, &b| *p -= lr * b);
}

/// Applies one SGDM step to every parameter of the network. Missing momentum
/// buffers are initialized to zero; a parameter absent from `grads` is treated
/// as having zero gradient.
pub fn sgdm_step(
    network: &mut Network,
    grads: &Gradients,
    buffers: &mut MomentumBuffers,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            name: name.to_string(),
        });
    }
    for (name, param) in network.named_params_mut() {
        let zero = || ArrayD::zeros(param.shape().to_vec());
        let grad = match grads.get(&name) {
            Some(g) => {
                if g.shape() != param.shape() {
                    return Err(Error::InvalidConfig(format!(
                        "gradient shape {:?} does not match parameter {name} {:?}",
                        g.shape(),
                        param.shape()
                    )));
                }
                g.clone()
            }
            None => zero(),
        };
        let buffer = buffers.entry(name.clone()).or_insert_with(zero);
        if buffer.shape() != param.shape() {
            return Err(Error::InvalidConfig(format!(
                "momentum buffer shape {:?} does not match parameter {name} {:?}",
                buffer.shape(),
                param.shape()
            )));
        }
        sgdm_update(param, &grad, buffer, lr, momentum);
    }
    Ok(())
}
