//! Softmax cross-entropy with the standard max-logit stabilization.

use crate::error::{Error, Result};
use crate::netcore::layers::dims2;
use crate::tensor::Tensor;

/// Per-sample losses and logit gradients for a batch.
///
/// Losses are computed in f64 through the log-sum-exp identity so tiny
/// losses (confident correct predictions) survive; gradients are the
/// per-sample `softmax - one_hot`, unscaled by batch size.
pub fn softmax_xent(logits: &Tensor, labels: &[u8]) -> Result<(Vec<f64>, Tensor)> {
    let [n, k] = dims2(logits, "logits")?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    let mut losses = Vec::with_capacity(n);
    let mut grad = Tensor::zeros(&[n, k]);
    for s in 0..n {
        let row = &logits.data()[s * k..(s + 1) * k];
        let target = labels[s] as usize;
        if target < 1 || target > k {
            return Err(Error::Config(format!("label {target} outside 1..={k}")));
        }
        let target = target - 1;
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut denom = 0.0f64;
        for &z in row {
            denom += (z as f64 - max).exp();
        }
        let log_denom = denom.ln();
        losses.push(max + log_denom - row[target] as f64);
        let g = &mut grad.data_mut()[s * k..(s + 1) * k];
        for (j, &z) in row.iter().enumerate() {
            let p = ((z as f64 - max).exp() / denom) as f32;
            g[j] = if j == target { p - 1.0 } else { p };
        }
    }
    Ok((losses, grad))
}

/// Softmax probabilities of one logit row, in f64.
pub fn softmax_probs(row: &[f32]) -> Vec<f64> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = row.iter().map(|&z| (z as f64 - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}
