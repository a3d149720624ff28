use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSpec, ExperimentConfig, Finetune, Pretrain, TrialConfig};
use crate::adjust::{
    finetune, write_curve_csv, AdjustSpec, AdjustedTrainer, DebiasedModel, FinetuneConfig, Mode,
    OffsetSource, ProxyValidator,
};
use crate::biasproxy::{conditional_from_joint, default_alpha, train_probe, BiasProxy, JointEstimate};
use crate::error::{Error, Result};
use crate::metrics::{group_balanced_accuracy, GroupReport};
use crate::numgrad::write_checkpoint;
use crate::sslpre::{
    load_checkpoints, pretrain_encoder, save_checkpoints, select_checkpoint, EncoderCheckpoint,
    SSL_INDEX_FILE,
};
use crate::synthdata::{
    empirical_group_table, gen_colored_patterns, gen_systematic_split, read_dataset, write_dataset,
    Dataset, Split, GENERATOR_VERSION,
};
use crate::train::HeadConfig;

/// Bumped whenever a cached stage would produce different bytes.
pub const CODE_TAG: &str = "ulab-stages-1";

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn content_key<S: Serialize>(value: &S) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(value)?);
    Ok(digest.iter().take(12).map(|b| format!("{b:02x}")).collect())
}

pub struct TaskData {
    pub key: String,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Cache key and checkpoints of one pretrained encoder family.
type EncoderSet = (String, Arc<Vec<EncoderCheckpoint<f32>>>);

/// Experiment state: configuration, output root, and memoized shared stages.
pub struct Lab {
    cfg: ExperimentConfig,
    root: PathBuf,
    data: Mutex<Option<Arc<TaskData>>>,
    encoders: Mutex<HashMap<Pretrain, EncoderSet>>,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig, root: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            root: root.into(),
            data: Mutex::new(None),
            encoders: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    /// Generates the three splits, or reads them from the cache.
    pub fn data(&self) -> Result<Arc<TaskData>> {
        let mut slot = self.data.lock().expect("data lock");
        if let Some(d) = slot.as_ref() {
            return Ok(d.clone());
        }
        let task = &self.cfg.task;
        let key = content_key(&("data", CODE_TAG, GENERATOR_VERSION, task))?;
        let dir = self.cache_dir().join(format!("data-{key}"));
        let paths = ["train", "valid", "test"].map(|s| dir.join(format!("{s}.ulad")));
        let loaded = if paths.iter().all(|p| p.exists()) {
            log::info!("datagen: cache hit {}", dir.display());
            let [a, b, c] = &paths;
            (read_dataset(a)?, read_dataset(b)?, read_dataset(c)?)
        } else {
            log::info!("datagen: generating `{}`", task.name);
            let (train, valid, test) = generate(task.data_seed, &task.data)?;
            for (d, p) in [&train, &valid, &test].into_iter().zip(&paths) {
                write_dataset(d, p)?;
            }
            (train, valid, test)
        };
        let d = Arc::new(TaskData {
            key,
            train: loaded.0,
            valid: loaded.1,
            test: loaded.2,
        });
        *slot = Some(d.clone());
        Ok(d)
    }

    /// Encoder checkpoints for a pretraining choice, with their cache key.
    pub fn encoders(&self, pretrain: Pretrain) -> Result<(String, Arc<Vec<EncoderCheckpoint<f32>>>)> {
        if let Some(hit) = self.encoders.lock().expect("encoder lock").get(&pretrain) {
            return Ok(hit.clone());
        }
        let data = self.data()?;
        let p = &self.cfg.pretrain;
        let train = data.train.view();
        let (key, cks) = match pretrain {
            Pretrain::Random => {
                let key = content_key(&("random", CODE_TAG, &data.key, &p.encoder, p.seed))?;
                let enc = p.encoder.init::<f32>(train.features.ncols(), p.seed)?;
                (key, vec![EncoderCheckpoint { epoch: 0, steps: 0, encoder: enc }])
            }
            Pretrain::Ssl => {
                let key = content_key(&("ssl", CODE_TAG, &data.key, &p.encoder, &p.ssl, &p.aug, p.seed))?;
                let dir = self.cache_dir().join(format!("ssl-{key}"));
                let cks = if dir.join(SSL_INDEX_FILE).exists() {
                    log::info!("pretrain: cache hit {}", dir.display());
                    load_checkpoints(&dir)?
                } else {
                    log::info!("pretrain: contrastive, {} epochs", p.ssl.epochs);
                    let cks = pretrain_encoder::<f32>(train.features, data.train.shape(), &p.encoder, &p.ssl, &p.aug, p.seed)?;
                    save_checkpoints(&dir, &cks)?;
                    cks
                };
                (key, cks)
            }
            Pretrain::Supervised => {
                let key = content_key(&(
                    "supervised",
                    CODE_TAG,
                    &data.key,
                    &p.encoder,
                    p.ssl.epochs,
                    p.ssl.checkpoint_every,
                    p.ssl.batch,
                    p.supervised_lr,
                    p.seed,
                ))?;
                let dir = self.cache_dir().join(format!("sup-{key}"));
                let cks = if dir.join(SSL_INDEX_FILE).exists() {
                    log::info!("pretrain: cache hit {}", dir.display());
                    load_checkpoints(&dir)?
                } else {
                    log::info!("pretrain: supervised, {} epochs", p.ssl.epochs);
                    let cks = self.supervised_pretrain(&data)?;
                    save_checkpoints(&dir, &cks)?;
                    cks
                };
                (key, cks)
            }
        };
        let entry = (key, Arc::new(cks));
        self.encoders.lock().expect("encoder lock").insert(pretrain, entry.clone());
        Ok(entry)
    }

    fn supervised_pretrain(&self, data: &TaskData) -> Result<Vec<EncoderCheckpoint<f32>>> {
        let p = &self.cfg.pretrain;
        let train = data.train.view();
        let enc = p.encoder.init::<f32>(train.features.ncols(), p.seed)?;
        let k = train.num_classes;
        let model = DebiasedModel::new(&enc, k, p.seed)?;
        let cfg = FinetuneConfig {
            lr: p.supervised_lr,
            weight_decay: p.ssl.weight_decay,
            batch: p.ssl.batch,
            max_epochs: p.ssl.epochs,
            head_only: false,
            encoder_lr_scale: 1.0,
            seed: p.seed,
        };
        let zeros = ndarray::Array2::zeros((train.len(), k));
        let mut trainer = AdjustedTrainer::new(model, &train, zeros, &cfg)?;
        let mut out = vec![EncoderCheckpoint { epoch: 0, steps: 0, encoder: enc }];
        for epoch in 1..=p.ssl.epochs {
            trainer.run_epoch()?;
            if epoch % p.ssl.checkpoint_every == 0 || epoch == p.ssl.epochs {
                out.push(EncoderCheckpoint {
                    epoch,
                    steps: trainer.steps(),
                    encoder: trainer.model().encoder()?,
                });
            }
        }
        Ok(out)
    }

    /// Probe on the encoder selected by `t_ssl`, trained for `t_stop` units,
    /// calibrated with the trial's `tau`.
    pub fn proxy(&self, cfg: &TrialConfig) -> Result<BiasProxy<f32>> {
        let data = self.data()?;
        let (enc_key, cks) = self.encoders(cfg.pretrain)?;
        let ck = select_checkpoint(&cks, cfg.t_ssl).ok_or_else(|| Error::Usage("no encoder checkpoints".into()))?;
        let probe = &self.cfg.probe;
        let head_cfg = HeadConfig {
            epochs: cfg.t_stop,
            unit: cfg.t_stop_unit,
            batch: probe.batch,
            lr: probe.lr,
            weight_decay: probe.weight_decay,
            seed: cfg.seed,
        };
        let key = content_key(&("probe", CODE_TAG, &data.key, &enc_key, ck.epoch, cfg.t_stop, &head_cfg))?;
        let dir = self.cache_dir().join(format!("probe-{key}"));
        let proxy = if dir.join(crate::biasproxy::PROXY_MANIFEST).exists() {
            BiasProxy::load(&dir)?
        } else {
            let proxy = train_probe(&ck.encoder, ck.epoch, &data.train.view(), cfg.t_stop, &head_cfg, 1.0)?;
            proxy.save(&dir)?;
            proxy
        };
        proxy.with_tau(cfg.tau)
    }

    /// Runs one trial end to end, writing `curve_{name}.csv`, `groups_{name}.csv`
    /// and `best_{name}.ck` into `out_dir`. Divergence yields a failed result;
    /// other failures are returned tagged with the stage that raised them.
    pub fn run_pipeline(&self, cfg: &TrialConfig, name: &str, out_dir: &Path) -> Result<TrialResult> {
        let start = Instant::now();
        cfg.validate()?;
        if cfg.task != self.cfg.task.name {
            return Err(Error::Config(format!("trial task `{}` is not `{}`", cfg.task, self.cfg.task.name)));
        }
        std::fs::create_dir_all(out_dir)?;
        let data = self.data().map_err(|e| e.in_stage("datagen"))?;
        let (_, cks) = self.encoders(cfg.pretrain).map_err(|e| e.in_stage("pretrain"))?;
        let ck = select_checkpoint(&cks, cfg.t_ssl).ok_or_else(|| Error::Usage("no encoder checkpoints".into()))?;
        let train = data.train.view();
        let valid = data.valid.view();
        let k = train.num_classes;

        let spec = AdjustSpec {
            mode: cfg.mode,
            eta: cfg.eta,
            log_floor: crate::adjust::DEFAULT_LOG_FLOOR,
        };
        let min_count = self.cfg.min_count;
        let (offsets, validator) = match cfg.mode {
            Mode::Erm => (spec.train_offsets(&OffsetSource::None, train.len(), k)?, ProxyValidator::iid(&valid)),
            Mode::Ula => {
                let stage = |e: Error| e.in_stage("probe");
                let proxy = self.proxy(cfg).map_err(stage)?;
                let ptrain = proxy.predict(train.features).map_err(stage)?;
                let pvalid = proxy.predict(valid.features).map_err(stage)?;
                let joint = proxy.soft_confusion(&train).map_err(stage)?;
                let je = JointEstimate::from_joint(joint, None, train.len()).map_err(stage)?;
                let src = OffsetSource::Proxy {
                    estimate: &je,
                    predictions: &ptrain,
                };
                let offsets = spec.train_offsets(&src, train.len(), k)?;
                (offsets, ProxyValidator::new(&valid, &pvalid, cfg.validator, min_count)?)
            }
            Mode::Sla => {
                // Bias-supervised reference: true groups drive both offsets and selection.
                let table = empirical_group_table(&data.train)?;
                let y_given_z = conditional_from_joint(table.view(), default_alpha(k, train.len()))?;
                let z = data.train.reveal_bias();
                let src = OffsetSource::GroupLabels {
                    y_given_z: &y_given_z,
                    z: z.values,
                };
                let offsets = spec.train_offsets(&src, train.len(), k)?;
                let vz: Vec<usize> = data.valid.reveal_bias().values.iter().map(|&v| v as usize).collect();
                (offsets, ProxyValidator::new(&valid, &vz, cfg.validator, min_count)?)
            }
        };

        let model = DebiasedModel::new(&ck.encoder, k, cfg.seed)?;
        let ft = FinetuneConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            batch: cfg.batch,
            max_epochs: cfg.max_epochs,
            // Random encoders are always trained in full.
            head_only: cfg.finetune == Finetune::Head && cfg.pretrain != Pretrain::Random,
            encoder_lr_scale: cfg.encoder_lr_scale,
            seed: cfg.seed,
        };
        let outcome = match finetune(model, &train, offsets, &validator, &ft) {
            Ok(o) => o,
            Err(e @ Error::Diverged { .. }) => {
                log::warn!("trial {name} failed: {e}");
                return Ok(TrialResult::failed(name, cfg, e.to_string(), start.elapsed().as_secs_f64()));
            }
            Err(e) => return Err(e.in_stage("finetune")),
        };
        let curve_path = out_dir.join(format!("curve_{name}.csv"));
        write_curve_csv(&curve_path, &outcome.curve)?;
        let ck_path = out_dir.join(format!("best_{name}.ck"));
        write_checkpoint(outcome.best.net(), outcome.best_epoch as u64, &ck_path)?;

        let report = evaluate_test(&outcome.best, &data.test).map_err(|e| e.in_stage("eval"))?;
        report.save_csv(&out_dir.join(format!("groups_{name}.csv")))?;
        Ok(TrialResult {
            name: name.to_string(),
            config: cfg.clone(),
            status: TrialStatus::Ok,
            error: None,
            best_val_score: Some(outcome.best_score),
            best_epoch: Some(outcome.best_epoch),
            test_balanced: Some(report.balanced),
            test_worst: Some(report.worst),
            test_iid: Some(report.iid),
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Final evaluation against the hidden groups of the test split.
pub fn evaluate_test(model: &DebiasedModel<f32>, test: &Dataset) -> Result<GroupReport> {
    let pred = model.predict(test.view().features)?;
    group_balanced_accuracy(&pred, test.view().labels, &test.reveal_bias(), test.num_classes())
}

/// Train, validation and test splits for a task.
pub fn generate(seed: u64, spec: &DataSpec) -> Result<(Dataset, Dataset, Dataset)> {
    match *spec {
        DataSpec::Colored {
            num_classes,
            beta,
            n_train,
            n_valid,
            n_test,
            ..
        } => {
            let style = spec.style();
            let uniform = (num_classes - 1) as f64 / num_classes as f64;
            let train = gen_colored_patterns(num_classes, beta, n_train, style, seed)?.with_split(Split::Train);
            let valid = gen_colored_patterns(num_classes, beta, n_valid, style, seed ^ 0x5a11d)?.with_split(Split::Valid);
            let test = gen_colored_patterns(num_classes, uniform, n_test, style, seed ^ 0x7e57)?.with_split(Split::Test);
            Ok((train, valid, test))
        }
        DataSpec::Grid {
            num_classes,
            colors_per_shape,
            n_train,
            n_valid,
            n_test,
            ..
        } => {
            let s = gen_systematic_split(
                num_classes,
                num_classes,
                colors_per_shape,
                n_train,
                n_valid,
                n_test,
                spec.style(),
                seed,
            )?;
            Ok((s.train, s.valid, s.test))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub name: String,
    pub config: TrialConfig,
    pub status: TrialStatus,
    pub error: Option<String>,
    pub best_val_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub test_balanced: Option<f64>,
    pub test_worst: Option<f64>,
    pub test_iid: Option<f64>,
    pub wall_seconds: f64,
}

impl TrialResult {
    pub fn failed(name: &str, cfg: &TrialConfig, error: String, wall_seconds: f64) -> Self {
        Self {
            name: name.to_string(),
            config: cfg.clone(),
            status: TrialStatus::Failed,
            error: Some(error),
            best_val_score: None,
            best_epoch: None,
            test_balanced: None,
            test_worst: None,
            test_iid: None,
            wall_seconds,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }
}
