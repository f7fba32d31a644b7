//! Matrix-multiply helpers with a fixed chunking scheme.
//!
//! Chunks are a constant size, so results are bitwise identical no matter how
//! many worker threads execute them.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

const ROW_CHUNK: usize = 2048;

/// `a (m,k) · b (k,n)`, parallel over fixed row chunks of `a`.
pub fn matmul(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Array2<f32> {
    let (m, _k) = a.dim();
    let n = b.dim().1;
    let mut out = Array2::<f32>::zeros((m, n));
    let chunks: Vec<(usize, usize)> = (0..m)
        .step_by(ROW_CHUNK)
        .map(|r0| (r0, (r0 + ROW_CHUNK).min(m)))
        .collect();
    let results: Vec<Array2<f32>> = chunks
        .par_iter()
        .map(|&(r0, r1)| a.slice(s![r0..r1, ..]).dot(&b))
        .collect();
    for (&(r0, r1), block) in chunks.iter().zip(results) {
        out.slice_mut(s![r0..r1, ..]).assign(&block);
    }
    out
}

/// `aᵀ (k,m) · b (m,n)` where `m` is the large (reduction) dimension.
///
/// Partial products over fixed chunks of `m` are combined in chunk order, so
/// the floating-point result does not depend on thread scheduling.
pub fn matmul_acc_t(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Array2<f32> {
    let m = a.dim().0;
    let (k, n) = (a.dim().1, b.dim().1);
    let chunks: Vec<(usize, usize)> = (0..m)
        .step_by(ROW_CHUNK * 4)
        .map(|r0| (r0, (r0 + ROW_CHUNK * 4).min(m)))
        .collect();
    let partials: Vec<Array2<f32>> = chunks
        .par_iter()
        .map(|&(r0, r1)| {
            let at = a.slice(s![r0..r1, ..]);
            let bt = b.slice(s![r0..r1, ..]);
            at.t().dot(&bt)
        })
        .collect();
    let mut out = Array2::<f32>::zeros((k, n));
    for p in partials {
        out += &p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn matmul_matches_ndarray_dot() {
        let a = Array::from_shape_fn((70, 13), |(i, j)| ((i * 31 + j * 7) % 11) as f32 - 5.0);
        let b = Array::from_shape_fn((13, 9), |(i, j)| ((i * 5 + j * 3) % 7) as f32 - 3.0);
        let got = matmul(a.view(), b.view());
        let want = a.dot(&b);
        assert_eq!(got, want);
    }

    #[test]
    fn transposed_accumulate_matches_dot() {
        let a = Array::from_shape_fn((50, 6), |(i, j)| (i as f32 * 0.1) - (j as f32 * 0.3));
        let b = Array::from_shape_fn((50, 4), |(i, j)| (j as f32 * 0.2) - (i as f32 * 0.05));
        let got = matmul_acc_t(a.view(), b.view());
        let want = a.t().dot(&b);
        for (x, y) in got.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }
}
