//! Momentum SGD with L2 weight decay.

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// One update of every parameter in `params`:
///
/// ```text
/// v ← momentum·v + (grad + weight_decay·param)
/// param ← param − lr·v
/// ```
///
/// Velocity buffers live in `params` and persist across calls. Gradients are
/// left in place; callers reset them with [`ModelParams::zero_grads`].
pub fn sgd_step(params: &mut ModelParams, lr: f32, momentum: f32, weight_decay: f32) -> Result<()> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        if params.get(name)?.grad().is_none() {
            return Err(Error::Contract(format!("parameter {name:?} has no gradient")));
        }
    }
    for name in &names {
        let (dims, data, grad) = {
            let t = params.get(name)?;
            (t.dims().to_vec(), t.data().to_vec(), t.grad().unwrap().to_vec())
        };
        let v = params.velocity_mut_or_zero(name, &dims);
        for ((vi, &p), &g) in v.data_mut().iter_mut().zip(&data).zip(&grad) {
            *vi = momentum * *vi + (g + weight_decay * p);
        }
        let v = v.data().to_vec();
        let t = params.get_mut(name)?;
        for (p, vi) in t.data_mut().iter_mut().zip(&v) {
            *p -= lr * vi;
        }
    }
    Ok(())
}
