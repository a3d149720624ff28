use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ulab::harness::{
    ablation_suite, evaluate_test, report, run_search, write_results, ExperimentConfig, Lab, Pretrain, TaskSpec,
    TrialResult, OUTPUT_ROOT_ENV,
};
use ulab::numgrad::read_checkpoint;
use ulab::sslpre::save_checkpoints;
use ulab::synthdata::write_dataset;
use ulab::train::accuracy;

#[derive(Parser)]
#[command(name = "ulab", version, about = "Group-robust classification without group labels")]
struct Cli {
    /// Output root; stage caches live under `<out>/cache`.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "ulab-out")]
    out: PathBuf,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a complete default experiment file for a task preset.
    Config {
        #[arg(long, value_enum, default_value_t = TaskPreset::Colored)]
        task: TaskPreset,
    },
    /// Generate (or load) the train, valid and test splits and export them.
    Datagen(Common),
    /// Pretrain an encoder and export its checkpoints.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = PretrainArg::Ssl)]
        kind: PretrainArg,
    },
    /// Train the bias proxy of the configured trial and report its accuracy.
    Probe(Common),
    /// Run one trial end to end.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "trial")]
        name: String,
    },
    /// Evaluate a saved debiased model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`, `search` or `ablate`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Random hyperparameter search selected by the validation criterion.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Pretraining × mode × finetuning cross-product.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Summaries, scatter data and a markdown report for a results directory.
    Report {
        /// Directory holding `results.csv`.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML); `ulab config` prints the schema with defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, value_enum, default_value_t = TaskPreset::Colored)]
    task: TaskPreset,
    /// Overrides the trial seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskPreset {
    /// Ten glyph classes, 1% bias-conflicting samples.
    Colored,
    /// Six shapes by six colors, three colors per shape in training.
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum PretrainArg {
    Ssl,
    Random,
    Supervised,
}

impl From<PretrainArg> for Pretrain {
    fn from(p: PretrainArg) -> Self {
        match p {
            PretrainArg::Ssl => Pretrain::Ssl,
            PretrainArg::Random => Pretrain::Random,
            PretrainArg::Supervised => Pretrain::Supervised,
        }
    }
}

fn preset(task: TaskPreset) -> ExperimentConfig {
    match task {
        TaskPreset::Colored => ExperimentConfig::new(TaskSpec::colored(0.01)),
        TaskPreset::Grid => ExperimentConfig::new(TaskSpec::grid(3)),
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => preset(self.task),
        };
        if let Some(seed) = self.seed {
            cfg.trial.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn lab(&self, out: &Path) -> Result<Lab> {
        Ok(Lab::new(self.load()?, out)?)
    }
}

/// Success only when every trial finished.
fn trial_status(results: &[TrialResult]) -> ExitCode {
    let failed = results.iter().filter(|r| !r.is_ok()).count();
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        log::error!("{failed} of {} trials failed", results.len());
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let out = cli.out;
    match cli.command {
        Command::Config { task } => {
            print!("{}", preset(task).to_toml()?);
        }
        Command::Datagen(common) => {
            let lab = common.lab(&out)?;
            let data = lab.data()?;
            let dir = out.join("data");
            std::fs::create_dir_all(&dir)?;
            for (name, d) in [("train", &data.train), ("valid", &data.valid), ("test", &data.test)] {
                let path = dir.join(format!("{name}.ulad"));
                write_dataset(d, &path)?;
                println!("{name}: {} samples -> {}", d.len(), path.display());
            }
        }
        Command::Pretrain { common, kind } => {
            let lab = common.lab(&out)?;
            let kind = Pretrain::from(kind);
            let (key, cks) = lab.encoders(kind)?;
            let dir = out.join("pretrain").join(kind.name());
            save_checkpoints(&dir, &cks)?;
            let epochs: Vec<usize> = cks.iter().map(|c| c.epoch).collect();
            println!("{} encoder {key}: epochs {epochs:?} -> {}", kind.name(), dir.display());
        }
        Command::Probe(common) => {
            let lab = common.lab(&out)?;
            let cfg = lab.config().trial.clone();
            let proxy = lab.proxy(&cfg)?;
            let data = lab.data()?;
            let valid = data.valid.view();
            let acc = accuracy(&proxy.predict(valid.features)?, valid.labels);
            let dir = out.join("probe");
            proxy.save(&dir)?;
            println!(
                "probe t_ssl={} t_stop={} tau={}: valid accuracy {acc:.4} -> {}",
                proxy.encoder_epoch(),
                proxy.t_stop(),
                proxy.tau(),
                dir.display()
            );
        }
        Command::Train { common, name } => {
            let lab = common.lab(&out)?;
            let cfg = lab.config().trial.clone();
            let dir = out.join("train");
            let result = lab.run_pipeline(&cfg, &name, &dir)?;
            write_results(&dir.join("results.csv"), std::slice::from_ref(&result))?;
            match (&result.error, result.test_balanced) {
                (Some(e), _) => println!("{name}: failed: {e}"),
                (None, Some(bal)) => println!(
                    "{name}: val {:.4} at epoch {}, test balanced {bal:.4} worst {:.4} iid {:.4}",
                    result.best_val_score.unwrap_or(f64::NAN),
                    result.best_epoch.unwrap_or_default(),
                    result.test_worst.unwrap_or(f64::NAN),
                    result.test_iid.unwrap_or(f64::NAN),
                ),
                (None, None) => {}
            }
            return Ok(trial_status(std::slice::from_ref(&result)));
        }
        Command::Eval { common, model } => {
            let lab = common.lab(&out)?;
            let (net, header) = read_checkpoint::<f32>(&model).with_context(|| format!("reading {}", model.display()))?;
            let layers = lab.config().pretrain.encoder.hidden.len();
            let debiased = ulab::DebiasedModel::from_parts(net, layers)?;
            let data = lab.data()?;
            let rep = evaluate_test(&debiased, &data.test)?;
            let path = model.with_extension("groups.csv");
            rep.save_csv(&path)?;
            println!(
                "epoch {}: test balanced {:.4} worst {:.4} iid {:.4} -> {}",
                header.step_count,
                rep.balanced,
                rep.worst,
                rep.iid,
                path.display()
            );
        }
        Command::Search {
            common,
            trials,
            parallelism,
        } => {
            let lab = common.lab(&out)?;
            let cfg = lab.config().clone();
            let dir = out.join("search");
            let outcome = run_search(
                &lab,
                &cfg.trial,
                &cfg.search.space,
                trials.unwrap_or(cfg.search.n_trials),
                cfg.search.seed,
                parallelism.unwrap_or(cfg.search.parallelism),
                &dir,
            )?;
            let w = &outcome.results[outcome.winner];
            println!(
                "winner {}: val {:.4}, test balanced {:.4} -> {}",
                w.name,
                w.best_val_score.unwrap_or(f64::NAN),
                w.test_balanced.unwrap_or(f64::NAN),
                dir.display()
            );
            return Ok(trial_status(&outcome.results));
        }
        Command::Ablate { common, parallelism } => {
            let lab = common.lab(&out)?;
            let cfg = lab.config().clone();
            let dir = out.join("ablation");
            let outcome = ablation_suite(
                &lab,
                &cfg.trial,
                &cfg.ablation,
                parallelism.unwrap_or(cfg.search.parallelism),
                &dir,
            )?;
            for row in &outcome.table {
                println!(
                    "{:10} {:5} {:4}  balanced {:.4}  (n={})",
                    row.pretrain.name(),
                    row.finetune.name(),
                    row.mode.name(),
                    row.balanced_mean,
                    row.n
                );
            }
            return Ok(trial_status(&outcome.results));
        }
        Command::Report { dir } => {
            if !dir.join("results.csv").exists() {
                bail!("no results.csv in {}", dir.display());
            }
            let outcome = report(&dir)?;
            println!("{} summary rows, {} scatter rows", outcome.summary.len(), outcome.scatter_rows);
            if let Some(r) = outcome.correlation {
                println!("pearson(best validation score, balanced test accuracy) = {r:.4}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
