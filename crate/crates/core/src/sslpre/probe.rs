use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::numgrad::MlpModel;
use crate::synthdata::TrainView;
use crate::train::{argmax_rows, forward_features, forward_chunked, train_linear_head, HeadConfig};
use crate::Scalar;

/// Accuracy of a linear head trained on frozen encoder features.
///
/// `train_labels` and `valid_labels` may be any categorical target with
/// `num_labels` values, which is how bias retention is measured.
pub fn linear_probe_accuracy<T: Scalar>(
    encoder: &MlpModel<T>,
    train_x: ArrayView2<'_, f32>,
    train_labels: &[usize],
    valid_x: ArrayView2<'_, f32>,
    valid_labels: &[usize],
    num_labels: usize,
    cfg: &HeadConfig,
) -> Result<f64> {
    if train_x.nrows() != train_labels.len() || valid_x.nrows() != valid_labels.len() {
        return Err(Error::Usage("probe features and labels differ in length".into()));
    }
    if valid_labels.is_empty() {
        return Err(Error::Usage("probe validation set is empty".into()));
    }
    let ftrain = forward_features(encoder, train_x)?;
    let head = train_linear_head(ftrain.view(), train_labels, num_labels, cfg, "probe")?;
    let fvalid = forward_features(encoder, valid_x)?;
    let pred = argmax_rows(forward_chunked(&head, fvalid.view())?.view());
    let hits = pred.iter().zip(valid_labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / valid_labels.len() as f64)
}

/// I.i.d. validation accuracy of a short-budget linear head on frozen features.
pub fn online_probe_score<T: Scalar>(
    encoder: &MlpModel<T>,
    train: &TrainView<'_>,
    valid: &TrainView<'_>,
    cfg: &HeadConfig,
) -> Result<f64> {
    linear_probe_accuracy(
        encoder,
        train.features,
        &train.labels_usize(),
        valid.features,
        &valid.labels_usize(),
        train.num_classes,
        cfg,
    )
}
