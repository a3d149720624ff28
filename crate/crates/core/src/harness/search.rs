use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::IndexedRandom;

use super::config::{AblationAxes, SearchSpace, TrialConfig};
use super::pipeline::{Lab, TrialResult};
use super::report::{summarize, write_ablation_markdown, SummaryRow};
use super::results::{write_results, write_scatter};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// `n` independent uniform draws from `space`; trial `i` gets seed `base.seed + i`.
pub fn draw_configs(base: &TrialConfig, space: &SearchSpace, n: usize, search_seed: u64) -> Result<Vec<TrialConfig>> {
    space.validate()?;
    let mut rng = substream(search_seed, Stream::Search, "space");
    Ok((0..n)
        .map(|i| {
            let mut c = base.clone();
            c.seed = base.seed + i as u64;
            c.lr = *space.lr.choose(&mut rng).expect("non-empty");
            c.weight_decay = *space.weight_decay.choose(&mut rng).expect("non-empty");
            c.eta = *space.eta.choose(&mut rng).expect("non-empty");
            c.tau = *space.tau.choose(&mut rng).expect("non-empty");
            c.t_ssl = *space.t_ssl.choose(&mut rng).expect("non-empty");
            c.t_stop = *space.t_stop.choose(&mut rng).expect("non-empty");
            c
        })
        .collect())
}

/// Runs `configs` with up to `parallelism` worker threads. Every trial yields
/// a result; errors become failed rows.
pub fn run_trials(lab: &Lab, configs: &[(String, TrialConfig)], parallelism: usize, out_dir: &Path) -> Vec<TrialResult> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<TrialResult>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..parallelism.max(1).min(configs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((name, cfg)) = configs.get(i) else { break };
                let start = std::time::Instant::now();
                let result = lab.run_pipeline(cfg, name, out_dir).unwrap_or_else(|e| {
                    log::warn!("trial {name} failed: {e}");
                    TrialResult::failed(name, cfg, e.to_string(), start.elapsed().as_secs_f64())
                });
                log::info!(
                    "trial {name}: {:?} val {:?} test {:?}",
                    result.status,
                    result.best_val_score,
                    result.test_balanced
                );
                *slots[i].lock().expect("slot") = Some(result);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot").expect("every trial ran")).collect()
}

/// Index of the best successful trial by validation score; ties keep the earliest.
pub fn select_winner(results: &[TrialResult]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        let Some(score) = r.best_val_score.filter(|_| r.is_ok()) else { continue };
        match best {
            Some((_, b)) if score <= b => {
                if score == b {
                    log::info!("search tie between trials {} and {i}; keeping the earlier", best.unwrap().0);
                }
            }
            _ => best = Some((i, score)),
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub results: Vec<TrialResult>,
    pub winner: usize,
}

/// Random search: draws, runs, writes `results.csv` and `scatter.csv`, picks the winner.
pub fn run_search(
    lab: &Lab,
    base: &TrialConfig,
    space: &SearchSpace,
    n_trials: usize,
    search_seed: u64,
    parallelism: usize,
    out_dir: &Path,
) -> Result<SearchOutcome> {
    std::fs::create_dir_all(out_dir)?;
    // Shared stages run once, before workers start.
    lab.data()?;
    lab.encoders(base.pretrain)?;
    let configs: Vec<(String, TrialConfig)> = draw_configs(base, space, n_trials, search_seed)?
        .into_iter()
        .enumerate()
        .map(|(i, c)| (format!("{i:03}"), c))
        .collect();
    let results = run_trials(lab, &configs, parallelism, out_dir);
    write_results(&out_dir.join("results.csv"), &results)?;
    write_scatter(&out_dir.join("scatter.csv"), &results)?;
    let winner = select_winner(&results).ok_or(Error::AllTrialsFailed(results.len()))?;
    log::info!("search winner: trial {}", results[winner].name);
    Ok(SearchOutcome { results, winner })
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub results: Vec<TrialResult>,
    pub table: Vec<SummaryRow>,
}

/// Cross-product of pretraining × mode × finetuning × seeds around `base`.
pub fn ablation_suite(lab: &Lab, base: &TrialConfig, axes: &AblationAxes, parallelism: usize, out_dir: &Path) -> Result<AblationOutcome> {
    std::fs::create_dir_all(out_dir)?;
    lab.data()?;
    let mut configs = Vec::new();
    for &pretrain in &axes.pretrain {
        lab.encoders(pretrain)?;
        for &finetune in &axes.finetune {
            for &mode in &axes.mode {
                for &seed in &axes.seeds {
                    let cfg = TrialConfig {
                        pretrain,
                        finetune,
                        mode,
                        seed,
                        ..base.clone()
                    };
                    let name = format!("{}-{}-{}-s{seed}", pretrain.name(), finetune.name(), mode.name());
                    configs.push((name, cfg));
                }
            }
        }
    }
    let results = run_trials(lab, &configs, parallelism, out_dir);
    write_results(&out_dir.join("results.csv"), &results)?;
    if results.iter().all(|r| !r.is_ok()) {
        return Err(Error::AllTrialsFailed(results.len()));
    }
    let table = summarize(&results);
    write_ablation_markdown(&out_dir.join("ablation.md"), &table, &axes.mode)?;
    Ok(AblationOutcome { results, table })
}
