use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numgrad::ce_loss_with_offset;
use crate::Scalar;

const NORM_TOL: f64 = 1e-6;

fn check_unit<T: Scalar>(v: ArrayView1<'_, T>, index: usize) -> Result<()> {
    let norm = v.dot(&v).as_f64().sqrt();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized { index, norm });
    }
    Ok(())
}

/// `−log( e^{q·k⁺/τ} / (e^{q·k⁺/τ} + Σᵢ e^{q·k⁻ᵢ/τ}) )` and its gradient with
/// respect to `q`. Keys are constants.
///
/// All vectors must already be unit-norm; index 0 in a
/// [`Error::NotNormalized`] refers to `q`, 1 to `k⁺`, `2 + i` to negative `i`.
pub fn infonce_loss<T: Scalar>(
    q: ArrayView1<'_, T>,
    k_pos: ArrayView1<'_, T>,
    negatives: ArrayView2<'_, T>,
    tau: T,
) -> Result<(T, Array1<T>)> {
    if negatives.nrows() == 0 {
        return Err(Error::Usage("InfoNCE needs at least one negative".into()));
    }
    if tau <= T::zero() {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let d = q.len();
    if k_pos.len() != d || negatives.ncols() != d {
        return Err(Error::Dimension {
            context: "InfoNCE key width",
            expected: d,
            got: if k_pos.len() != d { k_pos.len() } else { negatives.ncols() },
        });
    }
    check_unit(q, 0)?;
    check_unit(k_pos, 1)?;
    for (i, row) in negatives.rows().into_iter().enumerate() {
        check_unit(row, 2 + i)?;
    }
    let mut sims = Vec::with_capacity(negatives.nrows() + 1);
    sims.push(q.dot(&k_pos) / tau);
    sims.extend(negatives.rows().into_iter().map(|k| q.dot(&k) / tau));
    let max = sims.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let denom: T = sims.iter().map(|&s| (s - max).exp()).sum();
    let lse = denom.ln() + max;
    let loss = lse - sims[0];
    // dL/dq = (Σⱼ pⱼ kⱼ − k⁺) / τ
    let mut grad = k_pos.mapv(|v| v * ((sims[0] - lse).exp() - T::one()));
    for (k, &s) in negatives.rows().into_iter().zip(&sims[1..]) {
        grad.scaled_add((s - lse).exp(), &k);
    }
    grad.mapv_inplace(|v| v / tau);
    Ok((loss, grad))
}

/// Mean InfoNCE over a batch where row `i` of `keys` is the positive for row
/// `i` of `queries`, the other rows of `keys` and all rows of `queue` are
/// its negatives. Returns the gradient with respect to `queries`.
pub fn infonce_batch<T: Scalar>(
    queries: ArrayView2<'_, T>,
    keys: ArrayView2<'_, T>,
    queue: Option<ArrayView2<'_, T>>,
    tau: T,
) -> Result<(T, Array2<T>)> {
    let b = queries.nrows();
    if keys.dim() != queries.dim() {
        return Err(Error::Dimension {
            context: "InfoNCE batch keys",
            expected: queries.len(),
            got: keys.len(),
        });
    }
    let all_keys = match queue {
        Some(qu) if qu.nrows() > 0 => ndarray::concatenate(Axis(0), &[keys, qu])
            .map_err(|_| Error::Dimension {
                context: "InfoNCE queue width",
                expected: keys.ncols(),
                got: qu.ncols(),
            })?,
        _ => keys.to_owned(),
    };
    if all_keys.nrows() < 2 {
        return Err(Error::Usage("InfoNCE needs at least one negative".into()));
    }
    let inv_tau = T::one() / tau;
    let logits = queries.dot(&all_keys.t()).mapv(|v| v * inv_tau);
    let zeros = Array2::zeros(logits.dim());
    let labels: Vec<usize> = (0..b).collect();
    let (loss, dlogits) = ce_loss_with_offset(logits.view(), zeros.view(), &labels)?;
    let dq = dlogits.dot(&all_keys).mapv(|v| v * inv_tau);
    Ok((loss, dq))
}

/// Row-wise L2 normalization and the matching backward map.
pub fn l2_normalize_rows<T: Scalar>(z: ArrayView2<'_, T>) -> (Array2<T>, Array1<T>) {
    let norms: Array1<T> = z
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt().max(T::of(1e-12)))
        .collect();
    let mut out = z.to_owned();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    (out, norms)
}

/// Gradient through `q = z/‖z‖`: `dz = (dq − q·(q·dq)) / ‖z‖`.
pub fn l2_normalize_backward<T: Scalar>(
    q: ArrayView2<'_, T>,
    norms: ArrayView1<'_, T>,
    dq: ArrayView2<'_, T>,
) -> Array2<T> {
    let mut dz = dq.to_owned();
    for ((mut g, qr), &n) in dz.rows_mut().into_iter().zip(q.rows()).zip(norms.iter()) {
        let proj = qr.dot(&g);
        g.scaled_add(-proj, &qr);
        g.mapv_inplace(|v| v / n);
    }
    dz
}
