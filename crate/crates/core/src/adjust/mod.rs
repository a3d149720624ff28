//! Logit-adjusted training and adjustment-free inference.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::biasproxy::JointEstimate;
use crate::error::{Error, Result};
use crate::metrics::{ValidationPartition, ValidatorKind};
use crate::numgrad::{adamw_step, ce_loss_with_offset, lr_at, LrSchedule, MlpModel, OptimState};
use crate::rng::{substream, Rng, Stream};
use crate::synthdata::TrainView;
use crate::train::{accuracy, batches_per_epoch, epoch_batches, init_linear_head, predict_features, to_scalar};
use crate::Scalar;

pub const DEFAULT_LOG_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Erm,
    Sla,
    Ula,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::Sla => "sla",
            Self::Ula => "ula",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Self::Erm),
            "sla" => Ok(Self::Sla),
            "ula" => Ok(Self::Ula),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustSpec {
    pub mode: Mode,
    pub eta: f64,
    pub log_floor: f64,
}

impl AdjustSpec {
    pub fn erm() -> Self {
        Self {
            mode: Mode::Erm,
            eta: 0.0,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }

    pub fn sla() -> Self {
        Self {
            mode: Mode::Sla,
            eta: 1.0,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }

    pub fn ula(eta: f64) -> Self {
        Self {
            mode: Mode::Ula,
            eta,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be finite and non-negative, got {}", self.eta)));
        }
        if !(self.log_floor < 0.0) {
            return Err(Error::Config("log_floor must be negative".into()));
        }
        Ok(())
    }

    /// Per-sample training offsets, one row per training sample.
    ///
    /// ERM and `eta == 0` give exact zeros whatever the source. Supervised
    /// adjustment scales `log p(y | z)` by `eta` too, so `eta = 1` is the plain form.
    pub fn train_offsets<T: Scalar>(&self, source: &OffsetSource<'_>, n: usize, k: usize) -> Result<Array2<T>> {
        self.validate()?;
        if self.mode == Mode::Erm || self.eta == 0.0 {
            return Ok(Array2::zeros((n, k)));
        }
        let (table, keys): (ArrayView2<'_, f64>, Vec<usize>) = match (self.mode, source) {
            (Mode::Sla, OffsetSource::GroupLabels { y_given_z, z }) => {
                (y_given_z.view(), z.iter().map(|&v| v as usize).collect())
            }
            (Mode::Ula, OffsetSource::Proxy { estimate, predictions }) => {
                (estimate.conditional.view(), predictions.to_vec())
            }
            (mode, _) => {
                return Err(Error::Usage(format!("mode `{}` needs its matching offset source", mode.name())));
            }
        };
        if keys.len() != n || table.nrows() != k {
            return Err(Error::Dimension {
                context: "offset source",
                expected: n,
                got: keys.len(),
            });
        }
        let mut columns = Vec::with_capacity(table.ncols());
        for c in 0..table.ncols() {
            columns.push(log_column(table, c, self.log_floor)?);
        }
        let mut out = Array2::zeros((n, k));
        for (mut row, &key) in out.rows_mut().into_iter().zip(&keys) {
            let col = columns.get(key).ok_or_else(|| Error::Usage(format!("offset key {key} out of range")))?;
            for (o, &v) in row.iter_mut().zip(col) {
                *o = T::of(self.eta * v);
            }
        }
        Ok(out)
    }
}

/// Where offsets come from during training.
#[derive(Debug, Clone, Copy)]
pub enum OffsetSource<'a> {
    None,
    /// `K×L` table `p(y | z)` with the true bias of every training sample.
    GroupLabels { y_given_z: &'a Array2<f64>, z: &'a [u16] },
    /// Joint estimate with cached proxy predictions on the training set.
    Proxy { estimate: &'a JointEstimate, predictions: &'a [usize] },
}

fn log_column(table: ArrayView2<'_, f64>, col: usize, log_floor: f64) -> Result<Vec<f64>> {
    if col >= table.ncols() {
        return Err(Error::Usage(format!("column {col} outside [0, {})", table.ncols())));
    }
    Ok(table
        .column(col)
        .iter()
        .map(|&p| if p > 0.0 { p.ln().max(log_floor) } else { log_floor })
        .collect())
}

/// `max(log p(y | z), log_floor)` for every `y`.
pub fn sla_offsets(y_given_z: ArrayView2<'_, f64>, z: usize, log_floor: f64) -> Result<Vec<f64>> {
    log_column(y_given_z, z, log_floor)
}

/// `eta · max(log p(y | b), log_floor)`; exact zeros when `eta == 0`.
pub fn ula_offsets(je: &JointEstimate, y_bias_hat: usize, eta: f64, log_floor: f64) -> Result<Vec<f64>> {
    let col = log_column(je.conditional.view(), y_bias_hat, log_floor)?;
    if eta == 0.0 {
        return Ok(vec![0.0; col.len()]);
    }
    Ok(col.into_iter().map(|v| eta * v).collect())
}

/// Encoder followed by a linear head, finetuned end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedModel<T> {
    net: MlpModel<T>,
    encoder_layers: usize,
}

impl<T: Scalar> DebiasedModel<T> {
    /// Copies `encoder` and appends a freshly seeded `feature_dim → k` head.
    pub fn new(encoder: &MlpModel<T>, k: usize, seed: u64) -> Result<Self> {
        let head = init_linear_head::<T>(encoder.output_dim(), k, seed, "debiased-head")?;
        Ok(Self {
            net: encoder.stack(&head)?,
            encoder_layers: encoder.num_layers(),
        })
    }

    pub fn from_parts(net: MlpModel<T>, encoder_layers: usize) -> Result<Self> {
        if encoder_layers >= net.num_layers() {
            return Err(Error::Usage("debiased model needs at least one head layer".into()));
        }
        Ok(Self { net, encoder_layers })
    }

    pub fn net(&self) -> &MlpModel<T> {
        &self.net
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder_layers
    }

    pub fn encoder(&self) -> Result<MlpModel<T>> {
        Ok(self.net.split(self.encoder_layers)?.0)
    }

    pub fn logits(&self, x: ArrayView2<'_, f32>) -> Result<Array2<T>> {
        crate::train::forward_features(&self.net, x)
    }

    /// Argmax of the raw logits; no offsets at inference.
    pub fn predict(&self, x: ArrayView2<'_, f32>) -> Result<Vec<usize>> {
        predict_features(&self.net, x)
    }
}

pub fn predict_debiased<T: Scalar>(model: &DebiasedModel<T>, x: ArrayView2<'_, f32>) -> Result<Vec<usize>> {
    model.predict(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub head_only: bool,
    /// Learning-rate multiplier for encoder layers during full finetuning.
    pub encoder_lr_scale: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch: 128,
            max_epochs: 10,
            head_only: false,
            encoder_lr_scale: 1.0,
            seed: 0,
        }
    }
}

const DIVERGENCE_LOSS: f64 = 1e3;

/// Minibatch loop over offset-adjusted cross-entropy.
pub struct AdjustedTrainer<'a, T: Scalar> {
    model: DebiasedModel<T>,
    encoder_state: Option<OptimState<T>>,
    head_state: OptimState<T>,
    encoder_lr_scale: f64,
    schedule: LrSchedule,
    offsets: Array2<T>,
    features: ArrayView2<'a, f32>,
    labels: Vec<usize>,
    trainable_layer: usize,
    head_from: usize,
    rng: Rng,
    batch: usize,
    step: u64,
    epoch: usize,
}

impl<'a, T: Scalar> AdjustedTrainer<'a, T> {
    pub fn new(model: DebiasedModel<T>, train: &TrainView<'a>, offsets: Array2<T>, cfg: &FinetuneConfig) -> Result<Self> {
        if offsets.dim() != (train.len(), model.net.output_dim()) {
            return Err(Error::Dimension {
                context: "training offsets",
                expected: train.len() * model.net.output_dim(),
                got: offsets.len(),
            });
        }
        if train.is_empty() {
            return Err(Error::Usage("finetuning on an empty training set".into()));
        }
        if !(cfg.encoder_lr_scale >= 0.0 && cfg.encoder_lr_scale.is_finite()) {
            return Err(Error::Config(format!("encoder_lr_scale must be finite and >= 0 (got {})", cfg.encoder_lr_scale)));
        }
        let trainable_layer = if cfg.head_only { model.encoder_layers } else { 0 };
        let head_from = model.net.layer_offset(model.encoder_layers);
        let total = (cfg.max_epochs.max(1) * batches_per_epoch(train.len(), cfg.batch)) as u64;
        Ok(Self {
            encoder_state: (!cfg.head_only).then(|| OptimState::new(head_from, cfg.lr, cfg.weight_decay)),
            head_state: OptimState::new(model.net.num_params() - head_from, cfg.lr, cfg.weight_decay),
            encoder_lr_scale: cfg.encoder_lr_scale,
            schedule: LrSchedule::cosine(cfg.lr, total),
            offsets,
            features: train.features,
            labels: train.labels_usize(),
            trainable_layer,
            head_from,
            rng: substream(cfg.seed, Stream::Shuffle, "finetune"),
            batch: cfg.batch.max(1),
            step: 0,
            epoch: 0,
            model,
        })
    }

    pub fn model(&self) -> &DebiasedModel<T> {
        &self.model
    }

    pub fn into_model(self) -> DebiasedModel<T> {
        self.model
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One optimizer step on the given training rows; returns the batch loss.
    pub fn step(&mut self, idx: &[usize]) -> Result<T> {
        let xb = to_scalar::<T>(self.features.select(Axis(0), idx).view());
        let ob = self.offsets.select(Axis(0), idx);
        let yb: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let pass = self.model.net.forward_pass(xb.view())?;
        let diverged = |reason: String| Error::Diverged {
            epoch: self.epoch,
            step: self.step as usize,
            reason,
        };
        let (loss, dlogits) = ce_loss_with_offset(pass.output().view(), ob.view(), &yb)
            .map_err(|e| diverged(e.to_string()))?;
        if !loss.is_finite() || loss.as_f64() > DIVERGENCE_LOSS {
            return Err(diverged(format!("loss {loss}")));
        }
        let grads = self.model.net.backward_partial(&pass, dlogits.view(), self.trainable_layer, false)?;
        let lr = lr_at(&self.schedule, self.step);
        let (encoder, head) = self.model.net.params_mut().split_at_mut(self.head_from);
        if let Some(state) = self.encoder_state.as_mut() {
            let enc_lr = T::of(lr * self.encoder_lr_scale);
            adamw_step(encoder, state, &grads.params[..self.head_from], enc_lr).map_err(|e| diverged(e.to_string()))?;
        }
        adamw_step(head, &mut self.head_state, &grads.params[self.head_from..], T::of(lr)).map_err(|e| diverged(e.to_string()))?;
        self.step += 1;
        Ok(loss)
    }

    /// One shuffled pass over the training set; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let batches = epoch_batches(self.labels.len(), self.batch, &mut self.rng);
        let mut total = 0.0;
        for idx in &batches {
            total += self.step(idx)?.as_f64();
        }
        Ok(total / batches.len() as f64)
    }
}

/// Validation outcome of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEval {
    pub val_score: f64,
    pub iid_val_acc: f64,
}

/// Label-free validation: cells by true label and cached proxy prediction.
pub struct ProxyValidator<'a> {
    features: ArrayView2<'a, f32>,
    labels: &'a [u16],
    partition: Option<ValidationPartition>,
    kind: ValidatorKind,
    min_count: usize,
}

impl<'a> ProxyValidator<'a> {
    pub fn new(valid: &TrainView<'a>, proxy_predictions: &[usize], kind: ValidatorKind, min_count: usize) -> Result<Self> {
        Ok(Self {
            features: valid.features,
            labels: valid.labels,
            partition: Some(ValidationPartition::new(valid.labels, proxy_predictions, valid.num_classes)?),
            kind,
            min_count,
        })
    }

    /// Plain accuracy on the validation view, for runs without a proxy.
    pub fn iid(valid: &TrainView<'a>) -> Self {
        Self {
            features: valid.features,
            labels: valid.labels,
            partition: None,
            kind: ValidatorKind::Balanced,
            min_count: 1,
        }
    }

    pub fn evaluate<T: Scalar>(&self, model: &DebiasedModel<T>) -> Result<EpochEval> {
        let pred = model.predict(self.features)?;
        let iid = accuracy(&pred, self.labels);
        let val_score = match &self.partition {
            Some(p) => p.score(&pred, self.kind, self.min_count)?,
            None => iid,
        };
        Ok(EpochEval {
            val_score,
            iid_val_acc: iid,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Mean batch loss of the epoch; `None` for the initialization row.
    pub train_loss: Option<f64>,
    pub val_score: f64,
    pub iid_val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T> {
    pub best: DebiasedModel<T>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub curve: Vec<CurvePoint>,
}

/// Trains with fixed offsets and keeps the epoch with the highest validation
/// score, counting the initialization as epoch 0. Ties keep the earliest.
pub fn finetune<T: Scalar>(
    init: DebiasedModel<T>,
    train: &TrainView<'_>,
    offsets: Array2<T>,
    validator: &ProxyValidator<'_>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<T>> {
    let first = validator.evaluate(&init)?;
    let mut curve = vec![CurvePoint {
        epoch: 0,
        train_loss: None,
        val_score: first.val_score,
        iid_val_acc: first.iid_val_acc,
    }];
    let mut best = init.clone();
    let mut best_epoch = 0;
    let mut best_score = first.val_score;
    let mut trainer = AdjustedTrainer::new(init, train, offsets, cfg)?;
    for epoch in 1..=cfg.max_epochs {
        let loss = trainer.run_epoch()?;
        let eval = validator.evaluate(trainer.model())?;
        log::debug!("epoch {epoch}: loss {loss:.4} val {:.4} iid {:.4}", eval.val_score, eval.iid_val_acc);
        curve.push(CurvePoint {
            epoch,
            train_loss: Some(loss),
            val_score: eval.val_score,
            iid_val_acc: eval.iid_val_acc,
        });
        if eval.val_score > best_score {
            best_score = eval.val_score;
            best_epoch = epoch;
            best = trainer.model().clone();
        }
    }
    Ok(FinetuneOutcome {
        best,
        best_epoch,
        best_score,
        curve,
    })
}

/// `epoch,train_loss,val_score,iid_val_acc` rows.
pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_score", "iid_val_acc"])?;
    for p in curve {
        w.write_record([
            p.epoch.to_string(),
            p.train_loss.map(|l| format!("{l:.6}")).unwrap_or_default(),
            format!("{:.6}", p.val_score),
            format!("{:.6}", p.iid_val_acc),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::fsutil::atomic_write(path, &bytes)
}
