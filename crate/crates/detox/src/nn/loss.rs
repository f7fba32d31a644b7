//! Softmax cross-entropy. Losses are reported in nats; the entropy used by
//! the sample filter (bits) lives in the filter module.

use ndarray::{Array1, Array2, ArrayView2};

/// Row-wise softmax, numerically stabilized.
pub fn softmax(logits: ArrayView2<f32>) -> Array2<f32> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Per-sample cross-entropy losses (nats) and the softmax probabilities.
pub fn cross_entropy(logits: ArrayView2<f32>, labels: &[usize]) -> (Array1<f32>, Array2<f32>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "logits/labels length mismatch");
    let mut losses = Array1::<f32>::zeros(n);
    let probs = softmax(logits);
    for i in 0..n {
        // -log softmax, recomputed stably from the logits row
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln() + max;
        losses[i] = lse - row[labels[i]];
    }
    (losses, probs)
}

/// Gradient of mean cross-entropy w.r.t. logits: `(softmax - onehot) * scale`.
pub fn cross_entropy_grad(probs: &Array2<f32>, labels: &[usize], scale: f32) -> Array2<f32> {
    let mut g = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        g[[i, y]] -= 1.0;
    }
    g *= scale;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = array![[1.0f32, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax(l.view());
        for row in p.rows() {
            let s: f32 = row.sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_c() {
        let l = Array2::<f32>::zeros((2, 4));
        let (losses, _) = cross_entropy(l.view(), &[0, 3]);
        for &v in losses.iter() {
            assert!((v - (4.0f32).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn grad_is_probs_minus_onehot() {
        let l = array![[0.5f32, -0.5]];
        let (_, p) = cross_entropy(l.view(), &[1]);
        let g = cross_entropy_grad(&p, &[1], 1.0);
        assert!((g[[0, 0]] - p[[0, 0]]).abs() < 1e-7);
        assert!((g[[0, 1]] - (p[[0, 1]] - 1.0)).abs() < 1e-7);
    }
}
