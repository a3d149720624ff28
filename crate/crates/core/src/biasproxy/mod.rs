//! Bias proxy: a linear probe on frozen base features, its calibrated
//! conditional, and the soft confusion matrix over the training set.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{read_checkpoint, write_checkpoint, MlpModel};
use crate::synthdata::TrainView;
use crate::train::{argmax_rows, forward_chunked, forward_features, train_linear_head, HeadConfig, StopUnit};
use crate::Scalar;

/// Frozen encoder plus a linear head trained on target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProxy<T> {
    encoder: MlpModel<T>,
    encoder_epoch: usize,
    head: MlpModel<T>,
    tau: f64,
    t_stop: usize,
    t_stop_unit: StopUnit,
}

impl<T: Scalar> BiasProxy<T> {
    pub fn new(
        encoder: MlpModel<T>,
        encoder_epoch: usize,
        head: MlpModel<T>,
        tau: f64,
        t_stop: usize,
        t_stop_unit: StopUnit,
    ) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("calibration temperature must be positive, got {tau}")));
        }
        if head.input_dim() != encoder.output_dim() {
            return Err(Error::Dimension {
                context: "probe head input",
                expected: encoder.output_dim(),
                got: head.input_dim(),
            });
        }
        Ok(Self {
            encoder,
            encoder_epoch,
            head,
            tau,
            t_stop,
            t_stop_unit,
        })
    }

    pub fn encoder(&self) -> &MlpModel<T> {
        &self.encoder
    }

    pub fn encoder_epoch(&self) -> usize {
        self.encoder_epoch
    }

    pub fn head(&self) -> &MlpModel<T> {
        &self.head
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_stop(&self) -> usize {
        self.t_stop
    }

    pub fn t_stop_unit(&self) -> StopUnit {
        self.t_stop_unit
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// Same proxy with a different calibration temperature.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(
            self.encoder.clone(),
            self.encoder_epoch,
            self.head.clone(),
            tau,
            self.t_stop,
            self.t_stop_unit,
        )
    }

    /// Uncalibrated head logits, converted to `f64`.
    pub fn logits(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
        let features = forward_features(&self.encoder, x)?;
        Ok(forward_chunked(&self.head, features.view())?.mapv(|v| v.as_f64()))
    }

    /// Rows of `softmax(logits / τ)`.
    pub fn calibrated(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
        Ok(calibrate_rows(self.logits(x)?.view(), self.tau))
    }

    pub fn predict(&self, x: ArrayView2<'_, f32>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(x)?.view()))
    }

    /// Soft confusion matrix over a labeled view; reads only features and target labels.
    pub fn soft_confusion(&self, train: &TrainView<'_>) -> Result<Array2<f64>> {
        soft_confusion(self.calibrated(train.features)?.view(), &train.labels_usize(), train.num_classes)
    }

    /// Writes encoder and head checkpoints plus `proxy.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let manifest = ProxyManifest {
            encoder_checkpoint: "encoder.ck".into(),
            encoder_epoch: self.encoder_epoch,
            head_checkpoint: "head.ck".into(),
            tau: self.tau,
            t_stop: self.t_stop,
            t_stop_unit: self.t_stop_unit,
        };
        write_checkpoint(&self.encoder, self.encoder_epoch as u64, &dir.join(&manifest.encoder_checkpoint))?;
        write_checkpoint(&self.head, self.t_stop as u64, &dir.join(&manifest.head_checkpoint))?;
        let path = dir.join(PROXY_MANIFEST);
        crate::fsutil::atomic_write(&path, toml::to_string(&manifest)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(PROXY_MANIFEST))?;
        let manifest: ProxyManifest = toml::from_str(&text)?;
        let (encoder, _) = read_checkpoint::<T>(&dir.join(&manifest.encoder_checkpoint))?;
        let (head, _) = read_checkpoint::<T>(&dir.join(&manifest.head_checkpoint))?;
        Self::new(
            encoder,
            manifest.encoder_epoch,
            head,
            manifest.tau,
            manifest.t_stop,
            manifest.t_stop_unit,
        )
    }
}

pub const PROXY_MANIFEST: &str = "proxy.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyManifest {
    pub encoder_checkpoint: String,
    pub encoder_epoch: usize,
    pub head_checkpoint: String,
    pub tau: f64,
    pub t_stop: usize,
    #[serde(default)]
    pub t_stop_unit: StopUnit,
}

/// Trains the probe head for `t_stop` units of `cfg.unit` on frozen features.
/// The encoder is untouched.
pub fn train_probe<T: Scalar>(
    encoder: &MlpModel<T>,
    encoder_epoch: usize,
    train: &TrainView<'_>,
    t_stop: usize,
    cfg: &HeadConfig,
    tau: f64,
) -> Result<BiasProxy<T>> {
    let features = forward_features(encoder, train.features)?;
    let head_cfg = HeadConfig {
        epochs: t_stop,
        ..*cfg
    };
    let head = train_linear_head(features.view(), &train.labels_usize(), train.num_classes, &head_cfg, "bias-probe")?;
    BiasProxy::new(encoder.clone(), encoder_epoch, head, tau, t_stop, cfg.unit)
}

/// `softmax(logits / τ)` of a single row.
pub fn calibrated_conditional(logits: ArrayView1<'_, f64>, tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&v| v / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn calibrate_rows(logits: ArrayView2<'_, f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (mut row, src) in out.rows_mut().into_iter().zip(logits.rows()) {
        for (o, p) in row.iter_mut().zip(calibrated_conditional(src, tau)) {
            *o = p;
        }
    }
    out
}

/// One-hot rows at the argmax of each logit row; the zero-temperature limit.
pub fn hard_assignments(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (i, j) in argmax_rows(logits).into_iter().enumerate() {
        out[[i, j]] = 1.0;
    }
    out
}

/// `joint[y][b] = (1/n) Σ_i p_i(b) · 1(y_i = y)`.
pub fn soft_confusion(probs: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Result<Array2<f64>> {
    if probs.nrows() != labels.len() {
        return Err(Error::Dimension {
            context: "soft confusion labels",
            expected: probs.nrows(),
            got: labels.len(),
        });
    }
    if probs.ncols() != k {
        return Err(Error::Dimension {
            context: "soft confusion classes",
            expected: k,
            got: probs.ncols(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Usage("soft confusion over an empty set".into()));
    }
    let mut sums = Array2::<f64>::zeros((k, k));
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        if y >= k {
            return Err(Error::Usage(format!("label {y} outside [0, {k})")));
        }
        for (s, &p) in sums.row_mut(y).iter_mut().zip(row) {
            *s += p;
        }
    }
    let n = labels.len() as f64;
    Ok(sums.mapv(|s| s / n))
}

/// Column-normalized `p(y | b)` with additive smoothing `alpha`.
pub fn conditional_from_joint(joint: ArrayView2<'_, f64>, alpha: f64) -> Result<Array2<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("smoothing must be non-negative, got {alpha}")));
    }
    let k = joint.nrows() as f64;
    let mut out = joint.to_owned();
    for (b, mut col) in out.columns_mut().into_iter().enumerate() {
        let mass: f64 = col.sum();
        let denom = mass + k * alpha;
        if denom <= 0.0 {
            return Err(Error::ZeroColumn { column: b });
        }
        col.mapv_inplace(|v| (v + alpha) / denom);
    }
    Ok(out)
}

/// Joint estimate and its smoothed conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub joint: Array2<f64>,
    pub conditional: Array2<f64>,
    pub alpha: f64,
}

impl JointEstimate {
    /// `alpha = None` picks the default `1 / (K · n)`.
    pub fn from_joint(joint: Array2<f64>, alpha: Option<f64>, n: usize) -> Result<Self> {
        let alpha = alpha.unwrap_or_else(|| default_alpha(joint.nrows(), n));
        let conditional = conditional_from_joint(joint.view(), alpha)?;
        Ok(Self {
            joint,
            conditional,
            alpha,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.joint.nrows()
    }
}

pub fn default_alpha(k: usize, n: usize) -> f64 {
    1.0 / (k.max(1) * n.max(1)) as f64
}
