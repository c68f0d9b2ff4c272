//! Pixel-wise cross-entropy, the `H(·,·)` behind every loss term.

use super::model::{ForwardPass, Gradients, NetModel};
use crate::error::{Result, RmlError};
use crate::tensor::{Logits, OneHotMap, SoftPrediction, Tensor4};

/// Floor applied before `ln` when the loss is computed from probabilities.
pub const PROB_FLOOR: f64 = 1e-12;

fn included(target: &OneHotMap, mask: Option<&[bool]>, i: usize) -> bool {
    target.valid()[i] && mask.is_none_or(|m| m[i])
}

fn check_target(pixels: usize, k: usize, target: &OneHotMap, mask: Option<&[bool]>) -> Result<()> {
    if target.len() != pixels || target.num_classes() != k {
        return Err(RmlError::Input(format!(
            "target has {} pixels over K={}, prediction has {pixels} over K={k}",
            target.len(),
            target.num_classes()
        )));
    }
    if mask.is_some_and(|m| m.len() != pixels) {
        return Err(RmlError::Input("pixel mask length mismatch".into()));
    }
    Ok(())
}

/// Mean cross-entropy over included pixels, from logits via log-sum-exp,
/// with its gradient w.r.t. the logits. A pixel is included when the
/// target's gate and the optional `mask` both admit it; with no included
/// pixels the loss and gradient are zero.
pub fn cross_entropy(logits: &Logits, target: &OneHotMap, mask: Option<&[bool]>) -> Result<(f64, Tensor4)> {
    let k = logits.c();
    check_target(logits.pixels(), k, target, mask)?;
    let mut grad = Tensor4::zeros(logits.shape());
    let count = (0..logits.pixels()).filter(|&i| included(target, mask, i)).count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for i in 0..logits.pixels() {
        if !included(target, mask, i) {
            continue;
        }
        let row = logits.pixel(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let cls = target.classes()[i] as usize;
        total += lse - row[cls];
        let g = grad.pixel_mut(i);
        for (j, gv) in g.iter_mut().enumerate() {
            *gv = (row[j] - lse).exp() * inv;
        }
        g[cls] -= inv;
    }
    Ok((total * inv, grad))
}

/// Mean cross-entropy computed from probabilities, clamped at
/// [`PROB_FLOOR`].
pub fn cross_entropy_probs(p: &SoftPrediction, target: &OneHotMap, mask: Option<&[bool]>) -> Result<f64> {
    let t = p.tensor();
    check_target(t.pixels(), t.c(), target, mask)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..t.pixels() {
        if included(target, mask, i) {
            total -= t.pixel(i)[target.classes()[i] as usize].max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Loss and parameter gradients for one recorded pass.
pub fn loss_and_gradients(
    model: &NetModel,
    pass: &ForwardPass,
    target: &OneHotMap,
    mask: Option<&[bool]>,
) -> Result<(f64, Gradients)> {
    let (loss, dlogits) = cross_entropy(&pass.logits, target, mask)?;
    let grads = model.backward(pass, &dlogits)?;
    Ok((loss, grads))
}
