//! Loss functions. Each returns the mean loss over the batch together with
//! its gradient with respect to the prediction tensor.

use super::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax in double precision.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&z| f64::from(z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy for `[batch, k, 1, 1]` logits and class labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let batch = logits.batch();
    if labels.len() != batch {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let k = logits.len() / batch;
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidArgument(format!("label {label} >= {k} classes")));
        }
        let p = softmax(logits.item(b));
        loss -= p[label].max(1e-300).ln();
        let g = &mut grad.data_mut()[b * k..(b + 1) * k];
        for (j, (gv, pv)) in g.iter_mut().zip(&p).enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            *gv = ((pv - target) / batch as f64) as f32;
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Binary cross-entropy on logits, `targets` in [0, 1].
pub fn bce_with_logits(logits: &Tensor, targets: &[f32]) -> Result<(f64, Tensor)> {
    if targets.len() != logits.len() {
        return Err(Error::InvalidArgument(format!(
            "{} targets for {} logits",
            targets.len(),
            logits.len()
        )));
    }
    let n = logits.len() as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for ((g, &z), &t) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets) {
        let (z, t) = (f64::from(z), f64::from(t));
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        let p = 1.0 / (1.0 + (-z).exp());
        *g = ((p - t) / n) as f32;
    }
    Ok((loss / n, grad))
}

/// Mean absolute error.
pub fn l1(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidArgument(format!(
            "L1 shape mismatch {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    let inv = (1.0 / n) as f32;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += f64::from(d.abs());
        *g = if d > 0.0 {
            inv
        } else if d < 0.0 {
            -inv
        } else {
            0.0
        };
    }
    Ok((loss / n, grad))
}
