use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::Scalar;

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax_row<T: Scalar>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row<T: Scalar>(row: ArrayView1<'_, T>) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s: T = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Mean cross-entropy of `softmax(logits + offsets)` against `labels`, and
/// its gradient with respect to `logits`.
///
/// The offsets are constants: ERM passes zeros, logit adjustment passes
/// `η·log p̂(y|·)`.
pub fn ce_loss_with_offset<T: Scalar>(
    logits: ArrayView2<'_, T>,
    offsets: ArrayView2<'_, T>,
    labels: &[usize],
) -> Result<(T, Array2<T>)> {
    let (b, k) = logits.dim();
    if offsets.dim() != (b, k) {
        return Err(Error::Dimension {
            context: "logit offsets",
            expected: b * k,
            got: offsets.len(),
        });
    }
    if labels.len() != b {
        return Err(Error::Dimension {
            context: "label vector",
            expected: b,
            got: labels.len(),
        });
    }
    if b == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = Array2::zeros((b, k));
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "logits",
                index: i,
            });
        }
        if label >= k {
            return Err(Error::Config(format!(
                "label {label} at batch index {i} outside [0, {k})"
            )));
        }
        let adjusted = &row + &offsets.row(i);
        let max = adjusted.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut denom = T::zero();
        for &v in adjusted.iter() {
            denom += (v - max).exp();
        }
        let lse = denom.ln() + max;
        total += lse - adjusted[label];
        let mut g = grad.row_mut(i);
        for j in 0..k {
            g[j] = (adjusted[j] - lse).exp() * inv_b;
        }
        g[label] -= inv_b;
    }
    Ok((total * inv_b, grad))
}
