use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Finetune, Pretrain, TrialConfig};
use super::pipeline::{TrialResult, TrialStatus};
use crate::adjust::Mode;
use crate::error::{Error, Result};
use crate::metrics::ValidatorKind;
use crate::train::StopUnit;

/// One line of `results.csv`; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: String,
    pub task: String,
    pub seed: u64,
    pub mode: Mode,
    pub pretrain: Pretrain,
    pub finetune: Finetune,
    pub encoder_lr_scale: f64,
    pub validator: ValidatorKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub eta: f64,
    pub tau: f64,
    pub t_ssl: usize,
    pub t_stop: usize,
    pub t_stop_unit: StopUnit,
    pub batch: usize,
    pub max_epochs: usize,
    pub status: TrialStatus,
    pub best_val_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub test_balanced: Option<f64>,
    pub test_worst: Option<f64>,
    pub test_iid: Option<f64>,
    pub wall_seconds: f64,
    pub error: String,
}

pub const RESULT_COLUMNS: [&str; 25] = [
    "trial",
    "task",
    "seed",
    "mode",
    "pretrain",
    "finetune",
    "encoder_lr_scale",
    "validator",
    "lr",
    "weight_decay",
    "eta",
    "tau",
    "t_ssl",
    "t_stop",
    "t_stop_unit",
    "batch",
    "max_epochs",
    "status",
    "best_val_score",
    "best_epoch",
    "test_balanced",
    "test_worst",
    "test_iid",
    "wall_seconds",
    "error",
];

impl From<&TrialResult> for ResultRow {
    fn from(r: &TrialResult) -> Self {
        let c = &r.config;
        Self {
            trial: r.name.clone(),
            task: c.task.clone(),
            seed: c.seed,
            mode: c.mode,
            pretrain: c.pretrain,
            finetune: c.finetune,
            encoder_lr_scale: c.encoder_lr_scale,
            validator: c.validator,
            lr: c.lr,
            weight_decay: c.weight_decay,
            eta: c.eta,
            tau: c.tau,
            t_ssl: c.t_ssl,
            t_stop: c.t_stop,
            t_stop_unit: c.t_stop_unit,
            batch: c.batch,
            max_epochs: c.max_epochs,
            status: r.status,
            best_val_score: r.best_val_score,
            best_epoch: r.best_epoch,
            test_balanced: r.test_balanced,
            test_worst: r.test_worst,
            test_iid: r.test_iid,
            wall_seconds: r.wall_seconds,
            error: r.error.clone().unwrap_or_default(),
        }
    }
}

impl From<ResultRow> for TrialResult {
    fn from(row: ResultRow) -> Self {
        Self {
            name: row.trial,
            config: TrialConfig {
                task: row.task,
                seed: row.seed,
                lr: row.lr,
                weight_decay: row.weight_decay,
                eta: row.eta,
                tau: row.tau,
                t_ssl: row.t_ssl,
                t_stop: row.t_stop,
                t_stop_unit: row.t_stop_unit,
                batch: row.batch,
                max_epochs: row.max_epochs,
                validator: row.validator,
                mode: row.mode,
                pretrain: row.pretrain,
                finetune: row.finetune,
                encoder_lr_scale: row.encoder_lr_scale,
            },
            status: row.status,
            error: (!row.error.is_empty()).then_some(row.error),
            best_val_score: row.best_val_score,
            best_epoch: row.best_epoch,
            test_balanced: row.test_balanced,
            test_worst: row.test_worst,
            test_iid: row.test_iid,
            wall_seconds: row.wall_seconds,
        }
    }
}

pub fn write_results(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(ResultRow::from(r))?;
    }
    if results.is_empty() {
        w.write_record(RESULT_COLUMNS)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::fsutil::atomic_write(path, &bytes)
}

pub fn read_results(path: &Path) -> Result<Vec<TrialResult>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(RESULT_COLUMNS) {
        return Err(Error::format(Some(path), "unexpected results.csv columns"));
    }
    r.deserialize::<ResultRow>()
        .map(|row| Ok(TrialResult::from(row?)))
        .collect()
}

/// `trial,best_val_score,test_balanced` for every successful trial.
pub fn write_scatter(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "best_val_score", "test_balanced"])?;
    for r in results.iter().filter(|r| r.is_ok()) {
        w.write_record([
            r.name.clone(),
            format!("{:.6}", r.best_val_score.unwrap_or(f64::NAN)),
            format!("{:.6}", r.test_balanced.unwrap_or(f64::NAN)),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::fsutil::atomic_write(path, &bytes)
}
