//! Minibatch helpers shared by the probe, pretraining and finetuning loops.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{
    adamw_step, argmax_row, ce_loss_with_offset, lr_at, Activation, LrSchedule, MlpModel,
    OptimState,
};
use crate::rng::{substream, Stream};
use crate::Scalar;

/// Rows are processed in chunks of this size when only inference is needed.
pub const EVAL_CHUNK: usize = 1024;

pub fn to_scalar<T: Scalar>(x: ArrayView2<'_, f32>) -> Array2<T> {
    x.mapv(|v| T::of(v as f64))
}

/// Forward pass over a large matrix in chunks.
pub fn forward_chunked<T: Scalar>(model: &MlpModel<T>, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let mut out = Array2::zeros((x.nrows(), model.output_dim()));
    for (start, chunk) in (0..x.nrows()).step_by(EVAL_CHUNK).zip(x.axis_chunks_iter(Axis(0), EVAL_CHUNK)) {
        let y = model.forward(chunk)?;
        out.slice_mut(ndarray::s![start..start + chunk.nrows(), ..]).assign(&y);
    }
    Ok(out)
}

/// Forward pass on `f32` features, converting chunk by chunk.
pub fn forward_features<T: Scalar>(model: &MlpModel<T>, x: ArrayView2<'_, f32>) -> Result<Array2<T>> {
    let mut out = Array2::zeros((x.nrows(), model.output_dim()));
    for (start, chunk) in (0..x.nrows()).step_by(EVAL_CHUNK).zip(x.axis_chunks_iter(Axis(0), EVAL_CHUNK)) {
        let y = model.forward(to_scalar::<T>(chunk).view())?;
        out.slice_mut(ndarray::s![start..start + chunk.nrows(), ..]).assign(&y);
    }
    Ok(out)
}

/// Argmax of each row (lowest index on ties).
pub fn argmax_rows<T: Scalar>(logits: ArrayView2<'_, T>) -> Vec<usize> {
    logits.rows().into_iter().map(argmax_row).collect()
}

pub fn predict_features<T: Scalar>(model: &MlpModel<T>, x: ArrayView2<'_, f32>) -> Result<Vec<usize>> {
    Ok(argmax_rows(forward_features(model, x)?.view()))
}

pub fn accuracy(pred: &[usize], labels: &[u16]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| p == y as usize)
        .count();
    hits as f64 / pred.len() as f64
}

/// Shuffled minibatch index lists for one epoch.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut crate::rng::Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

pub fn batches_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// Unit of a training budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopUnit {
    #[default]
    Epochs,
    Steps,
}

impl StopUnit {
    /// Optimizer steps in a budget of `amount` units over `n` rows.
    pub fn total_steps(self, amount: usize, n: usize, batch: usize) -> usize {
        match self {
            Self::Epochs => amount * batches_per_epoch(n, batch),
            Self::Steps => amount,
        }
    }
}

/// Budget and optimizer settings for a linear head on frozen features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Budget, counted in `unit`.
    pub epochs: usize,
    #[serde(default)]
    pub unit: StopUnit,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            unit: StopUnit::Epochs,
            batch: 256,
            lr: 1e-2,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Fresh He-uniform linear layer `dim → k`.
pub fn init_linear_head<T: Scalar>(dim: usize, k: usize, seed: u64, tag: &str) -> Result<MlpModel<T>> {
    let mut rng = substream(seed, Stream::Init, tag);
    MlpModel::he_uniform(&[dim, k], &[Activation::Identity], &mut rng)
}

/// Cross-entropy training of a linear head on precomputed features.
pub fn train_linear_head<T: Scalar>(
    features: ArrayView2<'_, T>,
    labels: &[usize],
    k: usize,
    cfg: &HeadConfig,
    tag: &str,
) -> Result<MlpModel<T>> {
    let mut head = init_linear_head::<T>(features.ncols(), k, cfg.seed, tag)?;
    if cfg.epochs == 0 || features.nrows() == 0 {
        return Ok(head);
    }
    let n = features.nrows();
    let total = cfg.unit.total_steps(cfg.epochs, n, cfg.batch) as u64;
    let schedule = LrSchedule::cosine(cfg.lr, total);
    let mut state = OptimState::<T>::new(head.num_params(), cfg.lr, cfg.weight_decay);
    let mut rng = substream(cfg.seed, Stream::Shuffle, tag);
    let mut step = 0u64;
    let mut epoch = 0;
    while step < total {
        for idx in epoch_batches(n, cfg.batch, &mut rng) {
            if step == total {
                break;
            }
            let xb = features.select(Axis(0), &idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let pass = head.forward_pass(xb.view())?;
            let zeros = Array2::zeros(pass.output().dim());
            let (loss, dlogits) = ce_loss_with_offset(pass.output().view(), zeros.view(), &yb)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: step as usize,
                    reason: "non-finite probe loss".into(),
                });
            }
            let grad = head.backward(&pass, dlogits.view())?;
            let lr = T::of(lr_at(&schedule, step));
            adamw_step(head.params_mut(), &mut state, &grad, lr)?;
            step += 1;
        }
        epoch += 1;
    }
    Ok(head)
}
