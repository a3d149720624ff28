use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adjust::Mode;
use crate::error::{Error, Result};
use crate::metrics::ValidatorKind;
use crate::sslpre::{AugConfig, EncoderSpec, SslConfig};
use crate::synthdata::RenderStyle;
use crate::train::StopUnit;

/// Synthetic task definition; `data_seed` fixes every split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub data_seed: u64,
    #[serde(flatten)]
    pub data: DataSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSpec {
    /// Glyph class `y` tinted with color `z`; `beta` is the bias-conflicting rate
    /// of the training and validation splits, test colors are uniform.
    Colored {
        num_classes: usize,
        beta: f64,
        noise: f64,
        /// Background brightness relative to the glyph; see `RenderStyle`.
        #[serde(default = "colored_background")]
        background: f64,
        n_train: usize,
        n_valid: usize,
        n_test: usize,
    },
    /// Shape × color grid with `colors_per_shape` allowed colors per shape in training.
    Grid {
        num_classes: usize,
        colors_per_shape: usize,
        noise: f64,
        #[serde(default = "grid_background")]
        background: f64,
        n_train: usize,
        n_valid: usize,
        n_test: usize,
    },
}

// A darker background on the colored task keeps the glyph learnable beside
// the color; the grid keeps the color dominant.
fn colored_background() -> f64 {
    0.25
}

fn grid_background() -> f64 {
    RenderStyle::DEFAULT_BACKGROUND
}

impl DataSpec {
    pub fn num_classes(&self) -> usize {
        match *self {
            Self::Colored { num_classes, .. } | Self::Grid { num_classes, .. } => num_classes,
        }
    }

    pub fn style(&self) -> RenderStyle {
        match *self {
            Self::Colored { noise, background, .. } | Self::Grid { noise, background, .. } => {
                RenderStyle::new(noise, background)
            }
        }
    }
}

impl TaskSpec {
    pub fn colored(beta: f64) -> Self {
        Self {
            name: format!("colored-{}", beta * 100.0),
            data_seed: 0,
            data: DataSpec::Colored {
                num_classes: 10,
                beta,
                noise: 0.3,
                background: colored_background(),
                n_train: 10_000,
                n_valid: 2_000,
                n_test: 4_000,
            },
        }
    }

    pub fn grid(colors_per_shape: usize) -> Self {
        Self {
            name: format!("grid-c{colors_per_shape}"),
            data_seed: 0,
            data: DataSpec::Grid {
                num_classes: 6,
                colors_per_shape,
                noise: 0.3,
                background: grid_background(),
                n_train: 6_000,
                n_valid: 1_200,
                n_test: 3_600,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pretrain {
    #[default]
    Ssl,
    Random,
    Supervised,
}

impl Pretrain {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ssl => "ssl",
            Self::Random => "random",
            Self::Supervised => "supervised",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finetune {
    #[default]
    Full,
    Head,
}

impl Finetune {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Head => "head",
        }
    }
}

/// Every knob of one trial, recorded verbatim in the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub task: String,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub eta: f64,
    pub tau: f64,
    /// Pretraining epoch whose encoder is used (closest saved checkpoint).
    pub t_ssl: usize,
    /// Probe training budget, counted in `t_stop_unit`.
    pub t_stop: usize,
    #[serde(default)]
    pub t_stop_unit: StopUnit,
    pub batch: usize,
    pub max_epochs: usize,
    pub validator: ValidatorKind,
    pub mode: Mode,
    #[serde(default)]
    pub pretrain: Pretrain,
    #[serde(default)]
    pub finetune: Finetune,
    /// Encoder learning rate relative to `lr` under full finetuning.
    #[serde(default = "unit_scale")]
    pub encoder_lr_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            task: String::new(),
            seed: 0,
            lr: 1e-3,
            weight_decay: 1e-4,
            eta: 1.0,
            tau: 1.0,
            t_ssl: 20,
            t_stop: 10,
            t_stop_unit: StopUnit::Epochs,
            batch: 128,
            max_epochs: 15,
            validator: ValidatorKind::Balanced,
            mode: Mode::Ula,
            pretrain: Pretrain::Ssl,
            finetune: Finetune::Full,
            encoder_lr_scale: 1.0,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("trial config: {what}")));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.encoder_lr_scale >= 0.0 && self.encoder_lr_scale.is_finite()) {
            return bad("encoder_lr_scale must be finite and non-negative");
        }
        if !(self.eta >= 0.0) {
            return bad("eta must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if self.mode == Mode::Ula && self.t_stop == 0 {
            return bad("t_stop must be positive for ula");
        }
        Ok(())
    }
}

/// Probe optimizer settings; the epoch budget comes from `t_stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 1e-4,
            batch: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub seed: u64,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub ssl: SslConfig,
    #[serde(default)]
    pub aug: AugConfig,
    /// Optimizer for the end-to-end supervised encoder baseline.
    #[serde(default = "default_supervised_lr")]
    pub supervised_lr: f64,
}

fn default_supervised_lr() -> f64 {
    1e-3
}

impl Default for PretrainSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder: EncoderSpec::default(),
            ssl: SslConfig::default(),
            aug: AugConfig::default(),
            supervised_lr: default_supervised_lr(),
        }
    }
}

/// Value lists sampled uniformly and independently per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub eta: Vec<f64>,
    pub tau: Vec<f64>,
    pub t_ssl: Vec<usize>,
    pub t_stop: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3],
            weight_decay: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
            eta: vec![1.0, 1.25, 1.5, 2.0],
            tau: vec![0.5, 1.0, 2.0],
            t_ssl: vec![10, 20],
            t_stop: vec![10, 20, 40],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let lens = [
            ("lr", self.lr.len()),
            ("weight_decay", self.weight_decay.len()),
            ("eta", self.eta.len()),
            ("tau", self.tau.len()),
            ("t_ssl", self.t_ssl.len()),
            ("t_stop", self.t_stop.len()),
        ];
        for (name, n) in lens {
            if n == 0 {
                return Err(Error::Config(format!("search space `{name}` is empty")));
            }
        }
        Ok(())
    }

    /// A space containing only the values of `cfg`.
    pub fn point(cfg: &TrialConfig) -> Self {
        Self {
            lr: vec![cfg.lr],
            weight_decay: vec![cfg.weight_decay],
            eta: vec![cfg.eta],
            tau: vec![cfg.tau],
            t_ssl: vec![cfg.t_ssl],
            t_stop: vec![cfg.t_stop],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub n_trials: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub space: SearchSpace,
}

fn one() -> usize {
    1
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            n_trials: 16,
            seed: 0,
            parallelism: 1,
            space: SearchSpace::default(),
        }
    }
}

/// Axes of the ablation cross-product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAxes {
    pub pretrain: Vec<Pretrain>,
    pub mode: Vec<Mode>,
    pub finetune: Vec<Finetune>,
    pub seeds: Vec<u64>,
}

impl Default for AblationAxes {
    fn default() -> Self {
        Self {
            pretrain: vec![Pretrain::Ssl, Pretrain::Random],
            mode: vec![Mode::Erm, Mode::Sla, Mode::Ula],
            finetune: vec![Finetune::Full],
            seeds: vec![0],
        }
    }
}

/// Whole experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub pretrain: PretrainSettings,
    #[serde(default)]
    pub probe: ProbeSettings,
    pub trial: TrialConfig,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default)]
    pub ablation: AblationAxes,
    /// Validation cells with fewer samples are ignored.
    #[serde(default = "one")]
    pub min_count: usize,
}

impl ExperimentConfig {
    /// Defaults for `task`. The grid task pretrains with color-heavy
    /// augmentation and finetunes only the head of pretrained encoders.
    pub fn new(task: TaskSpec) -> Self {
        let mut trial = TrialConfig {
            task: task.name.clone(),
            ..TrialConfig::default()
        };
        let mut pretrain = PretrainSettings::default();
        let mut ablation = AblationAxes::default();
        if let DataSpec::Grid { .. } = task.data {
            pretrain.aug = AugConfig::color_heavy();
            trial.finetune = Finetune::Head;
            trial.lr = 1e-2;
            ablation.finetune = vec![Finetune::Head];
        }
        Self {
            task,
            pretrain,
            probe: ProbeSettings::default(),
            trial,
            search: SearchSettings::default(),
            ablation,
            min_count: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trial.task != self.task.name {
            return Err(Error::Config(format!(
                "trial task `{}` does not match task `{}`",
                self.trial.task, self.task.name
            )));
        }
        self.trial.validate()?;
        self.pretrain.ssl.validate()?;
        self.pretrain.aug.validate()?;
        self.search.space.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::TomlDe(inner) => Error::format(Some(path), inner.to_string()),
            other => other,
        })
    }
}
