use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugConfig};
use super::infonce::{infonce_batch, l2_normalize_backward, l2_normalize_rows};
use crate::error::{Error, Result};
use crate::numgrad::{
    adamw_step, lr_at, read_checkpoint, write_checkpoint, Activation, LrSchedule, MlpModel,
    OptimState,
};
use crate::rng::{substream, Stream};
use crate::synthdata::ImageShape;
use crate::train::{batches_per_epoch, epoch_batches};
use crate::Scalar;

/// Hidden widths of the relu encoder; the last entry is the feature width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub hidden: Vec<usize>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
        }
    }
}

impl EncoderSpec {
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("encoder has at least one layer")
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim).chain(self.hidden.iter().copied()).collect()
    }

    pub fn init<T: Scalar>(&self, input_dim: usize, seed: u64) -> Result<MlpModel<T>> {
        if self.hidden.is_empty() {
            return Err(Error::Config("encoder needs at least one hidden layer".into()));
        }
        let sizes = self.layer_sizes(input_dim);
        let acts = vec![Activation::Relu; sizes.len() - 1];
        MlpModel::he_uniform(&sizes, &acts, &mut substream(seed, Stream::Init, "encoder"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub batch: usize,
    pub checkpoint_every: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub use_momentum_encoder: bool,
    pub momentum: f64,
    pub queue_size: usize,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            proj_hidden: 128,
            proj_dim: 64,
            temperature: 0.1,
            epochs: 20,
            batch: 256,
            checkpoint_every: 5,
            lr: 1e-3,
            weight_decay: 1e-4,
            use_momentum_encoder: false,
            momentum: 0.99,
            queue_size: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_dim < 2 {
            return Err(Error::Config("projection dimension must be at least 2".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("contrastive temperature must be positive".into()));
        }
        if self.batch < 2 {
            return Err(Error::Config("contrastive batch needs at least 2 samples".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Encoder parameters after `epoch` pretraining epochs (the projector is dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint<T> {
    pub epoch: usize,
    pub steps: u64,
    pub encoder: MlpModel<T>,
}

const COLLAPSE_STD: f64 = 1e-4;
const COLLAPSE_PATIENCE: usize = 50;

fn augment_batch<T: Scalar>(
    features: &ArrayView2<'_, f32>,
    idx: &[usize],
    shape: ImageShape,
    aug: &AugConfig,
    rng: &mut crate::rng::Rng,
) -> Array2<T> {
    let d = features.ncols();
    let mut out = Array2::zeros((idx.len(), d));
    for (mut row, &i) in out.rows_mut().into_iter().zip(idx) {
        let src = features.row(i);
        let view = augment(src.as_slice().expect("contiguous rows"), shape, aug, rng);
        for (o, v) in row.iter_mut().zip(view) {
            *o = T::of(v as f64);
        }
    }
    out
}

fn mean_coordinate_std<T: Scalar>(q: &Array2<T>) -> f64 {
    let b = q.nrows() as f64;
    let mean = q.mean_axis(Axis(0)).expect("non-empty batch");
    let mut total = 0.0;
    for (j, &m) in mean.iter().enumerate() {
        let var: f64 = q.column(j).iter().map(|&v| (v - m).as_f64().powi(2)).sum::<f64>() / b;
        total += var.sqrt();
    }
    total / q.ncols() as f64
}

/// Contrastive pretraining on unlabeled features.
///
/// Each step draws two views per batch element. Queries and keys are the
/// L2-normalized projector outputs; the loss is the symmetrized in-batch
/// InfoNCE (plus queued keys when `queue_size > 0`) with gradients flowing
/// through queries only. With `use_momentum_encoder`, keys come from an
/// exponential moving average of the network.
pub fn pretrain_encoder<T: Scalar>(
    features: ArrayView2<'_, f32>,
    shape: ImageShape,
    encoder_spec: &EncoderSpec,
    ssl: &SslConfig,
    aug: &AugConfig,
    seed: u64,
) -> Result<Vec<EncoderCheckpoint<T>>> {
    ssl.validate()?;
    aug.validate()?;
    if features.nrows() == 0 {
        return Err(Error::Usage("pretraining on an empty dataset".into()));
    }
    if features.ncols() != shape.len() {
        return Err(Error::Dimension {
            context: "pretraining features",
            expected: shape.len(),
            got: features.ncols(),
        });
    }
    let encoder = encoder_spec.init::<T>(features.ncols(), seed)?;
    let enc_layers = encoder.num_layers();
    let projector = MlpModel::he_uniform(
        &[encoder_spec.feature_dim(), ssl.proj_hidden, ssl.proj_dim],
        &[Activation::Relu, Activation::Identity],
        &mut substream(seed, Stream::Init, "projector"),
    )?;
    let mut net = encoder.stack(&projector)?;
    let mut key_net = ssl.use_momentum_encoder.then(|| net.clone());

    let mut checkpoints = vec![EncoderCheckpoint {
        epoch: 0,
        steps: 0,
        encoder,
    }];
    if ssl.epochs == 0 {
        return Ok(checkpoints);
    }

    let n = features.nrows();
    let batch = ssl.batch.min(n).max(2);
    let per_epoch = batches_per_epoch(n, batch);
    let schedule = LrSchedule::cosine(ssl.lr, (ssl.epochs * per_epoch) as u64);
    let mut state = OptimState::<T>::new(net.num_params(), ssl.lr, ssl.weight_decay);
    let mut shuffle = substream(seed, Stream::Shuffle, "ssl");
    let mut aug_rng = substream(seed, Stream::Augment, "ssl");
    let tau = T::of(ssl.temperature);
    let mut queue: VecDeque<Vec<T>> = VecDeque::new();
    let mut low_std_steps = 0usize;
    let mut step = 0u64;

    for epoch in 1..=ssl.epochs {
        for idx in epoch_batches(n, batch, &mut shuffle) {
            if idx.len() < 2 {
                continue;
            }
            let va = augment_batch::<T>(&features, &idx, shape, aug, &mut aug_rng);
            let vb = augment_batch::<T>(&features, &idx, shape, aug, &mut aug_rng);
            let pass_a = net.forward_pass(va.view())?;
            let pass_b = net.forward_pass(vb.view())?;
            let (qa, na) = l2_normalize_rows(pass_a.output().view());
            let (qb, nb) = l2_normalize_rows(pass_b.output().view());
            let (ka, kb) = match &key_net {
                Some(kn) => (
                    l2_normalize_rows(kn.forward(va.view())?.view()).0,
                    l2_normalize_rows(kn.forward(vb.view())?.view()).0,
                ),
                None => (qa.clone(), qb.clone()),
            };
            let queued = (!queue.is_empty()).then(|| {
                let flat: Vec<T> = queue.iter().flatten().copied().collect();
                Array2::from_shape_vec((queue.len(), ssl.proj_dim), flat).expect("queue rows")
            });
            let (la, dqa) = infonce_batch(qa.view(), kb.view(), queued.as_ref().map(|q| q.view()), tau)?;
            let (lb, dqb) = infonce_batch(qb.view(), ka.view(), queued.as_ref().map(|q| q.view()), tau)?;
            let loss = (la + lb) * T::of(0.5);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: step as usize,
                    reason: "non-finite contrastive loss".into(),
                });
            }
            let half = T::of(0.5);
            let dza = l2_normalize_backward(qa.view(), na.view(), dqa.view()).mapv(|v| v * half);
            let dzb = l2_normalize_backward(qb.view(), nb.view(), dqb.view()).mapv(|v| v * half);
            let mut grad = net.backward(&pass_a, dza.view())?;
            for (g, h) in grad.iter_mut().zip(net.backward(&pass_b, dzb.view())?) {
                *g += h;
            }
            let lr = T::of(lr_at(&schedule, step));
            adamw_step(net.params_mut(), &mut state, &grad, lr)?;
            step += 1;

            if let Some(kn) = key_net.as_mut() {
                let m = T::of(ssl.momentum);
                for (k, &p) in kn.params_mut().iter_mut().zip(net.params()) {
                    *k = m * *k + (T::one() - m) * p;
                }
            }
            if ssl.queue_size > 0 {
                for row in kb.rows() {
                    queue.push_back(row.to_vec());
                }
                while queue.len() > ssl.queue_size {
                    queue.pop_front();
                }
            }

            let std = mean_coordinate_std(&qa);
            if std < COLLAPSE_STD {
                low_std_steps += 1;
                if low_std_steps >= COLLAPSE_PATIENCE {
                    return Err(Error::Collapse {
                        std,
                        steps: low_std_steps,
                    });
                }
            } else {
                low_std_steps = 0;
            }
        }
        log::debug!("ssl epoch {epoch}: step {step}");
        if epoch % ssl.checkpoint_every == 0 || epoch == ssl.epochs {
            let (enc, _) = net.split(enc_layers)?;
            checkpoints.push(EncoderCheckpoint {
                epoch,
                steps: step,
                encoder: enc,
            });
        }
    }
    Ok(checkpoints)
}

/// Checkpoint file name for pretraining epoch `epoch`.
pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("ssl_epoch_{epoch}.ck")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslIndex {
    pub epochs: Vec<usize>,
    pub files: Vec<String>,
}

pub const SSL_INDEX_FILE: &str = "ssl_index.json";

/// Writes every checkpoint plus `ssl_index.json` listing the available epochs.
pub fn save_checkpoints<T: Scalar>(dir: &Path, checkpoints: &[EncoderCheckpoint<T>]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut index = SslIndex {
        epochs: Vec::new(),
        files: Vec::new(),
    };
    for ck in checkpoints {
        let name = checkpoint_file_name(ck.epoch);
        write_checkpoint(&ck.encoder, ck.steps, &dir.join(&name))?;
        index.epochs.push(ck.epoch);
        index.files.push(name);
    }
    let path = dir.join(SSL_INDEX_FILE);
    crate::fsutil::atomic_write(&path, &serde_json::to_vec_pretty(&index)?)?;
    Ok(path)
}

pub fn load_checkpoints<T: Scalar>(dir: &Path) -> Result<Vec<EncoderCheckpoint<T>>> {
    let index: SslIndex = serde_json::from_slice(&std::fs::read(dir.join(SSL_INDEX_FILE))?)?;
    index
        .epochs
        .iter()
        .zip(&index.files)
        .map(|(&epoch, file)| {
            let (encoder, header) = read_checkpoint::<T>(&dir.join(file))?;
            Ok(EncoderCheckpoint {
                epoch,
                steps: header.step_count,
                encoder,
            })
        })
        .collect()
}

/// Checkpoint whose epoch is closest to `epoch` (earlier one on ties).
pub fn select_checkpoint<T>(checkpoints: &[EncoderCheckpoint<T>], epoch: usize) -> Option<&EncoderCheckpoint<T>> {
    checkpoints
        .iter()
        .min_by_key(|c| (c.epoch as i64 - epoch as i64).unsigned_abs())
}

/// Encoder features of `f32` inputs.
pub fn encode<T: Scalar>(encoder: &MlpModel<T>, features: ArrayView2<'_, f32>) -> Result<Array2<T>> {
    crate::train::forward_features(encoder, features)
}
