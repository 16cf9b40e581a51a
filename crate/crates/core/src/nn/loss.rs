//! Softmax activation and cross-entropy loss.

use super::tensor::Tensor4;

/// Floor applied to probabilities before taking the log.
pub const LOG_EPS: f64 = 1e-12;

/// Max-shifted softmax: `exp(z_i - max z) / sum_j exp(z_j - max z)`.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `-sum_i t_i ln(max(f_i, eps))` for one-hot (or general) targets.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * p.max(LOG_EPS).ln())
        .sum::<f64>()
}

/// Cross-entropy against a class index.
#[inline]
pub fn cross_entropy_index(probs: &[f64], class: usize) -> f64 {
    -probs[class].max(LOG_EPS).ln()
}

/// Per-voxel softmax across the channels of a score tensor.
pub fn softmax_voxels(scores: &Tensor4) -> Tensor4 {
    let c = scores.channels();
    let n = scores.voxels();
    let mut out = scores.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0; c];
    for v in 0..n {
        for k in 0..c {
            buf[k] = data[k * n + v];
        }
        softmax_in_place(&mut buf);
        for k in 0..c {
            data[k * n + v] = buf[k];
        }
    }
    out
}

/// Mean per-voxel cross-entropy of softmax probabilities against class
/// indices, and its gradient with respect to the pre-softmax scores.
pub fn mean_cross_entropy(probs: &Tensor4, target: &[u8]) -> (f64, Tensor4) {
    let c = probs.channels();
    let n = probs.voxels();
    debug_assert_eq!(target.len(), n);
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    let g = grad.data_mut();
    for (v, &t) in target.iter().enumerate() {
        let t = t as usize;
        loss += -probs.data()[t * n + v].max(LOG_EPS).ln();
        g[t * n + v] -= 1.0;
    }
    for k in 0..c {
        for x in &mut g[k * n..(k + 1) * n] {
            *x *= scale;
        }
    }
    (loss * scale, grad)
}
