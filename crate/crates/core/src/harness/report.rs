use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::{Finetune, Pretrain};
use super::pipeline::TrialResult;
use super::results::{read_results, write_scatter};
use crate::adjust::Mode;
use crate::error::{Error, Result};
use crate::metrics::pearson;

/// Mean and sample standard deviation per method over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub task: String,
    pub mode: Mode,
    pub pretrain: Pretrain,
    pub finetune: Finetune,
    pub n: usize,
    pub balanced_mean: f64,
    pub balanced_std: Option<f64>,
    pub worst_mean: f64,
    pub worst_std: Option<f64>,
    pub iid_mean: f64,
    pub iid_std: Option<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Groups successful trials by (task, mode, pretrain, finetune).
pub fn summarize(results: &[TrialResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, &str, &str, &str), Vec<&TrialResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.is_ok()) {
        let c = &r.config;
        groups
            .entry((c.task.clone(), c.pretrain.name(), c.finetune.name(), c.mode.name()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let pick = |f: fn(&TrialResult) -> Option<f64>| rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let (balanced_mean, balanced_std) = mean_std(&pick(|r| r.test_balanced));
            let (worst_mean, worst_std) = mean_std(&pick(|r| r.test_worst));
            let (iid_mean, iid_std) = mean_std(&pick(|r| r.test_iid));
            let c = &rs[0].config;
            SummaryRow {
                task: c.task.clone(),
                mode: c.mode,
                pretrain: c.pretrain,
                finetune: c.finetune,
                n: rs.len(),
                balanced_mean,
                balanced_std,
                worst_mean,
                worst_std,
                iid_mean,
                iid_std,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::fsutil::atomic_write(path, &bytes)
}

fn pct(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * s),
        None => format!("{:.2}", 100.0 * mean),
    }
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub summary: Vec<SummaryRow>,
    pub scatter_rows: usize,
    pub correlation: Option<f64>,
}

/// Reads `results.csv` in `dir` and writes `summary.csv`, `scatter.csv` and `report.md`.
pub fn report(dir: &Path) -> Result<ReportOutcome> {
    let results = read_results(&dir.join("results.csv"))?;
    let ok: Vec<&TrialResult> = results.iter().filter(|r| r.is_ok()).collect();
    if ok.is_empty() {
        return Err(Error::AllTrialsFailed(results.len()));
    }
    let summary = summarize(&results);
    write_summary(&dir.join("summary.csv"), &summary)?;
    write_scatter(&dir.join("scatter.csv"), &results)?;
    let vals: Vec<f64> = ok.iter().filter_map(|r| r.best_val_score).collect();
    let tests: Vec<f64> = ok.iter().filter_map(|r| r.test_balanced).collect();
    let correlation = pearson(&vals, &tests).ok();

    let mut md = String::from("# Results\n\n");
    let _ = writeln!(md, "{} trials, {} ok.\n", results.len(), ok.len());
    md.push_str("| task | pretrain | finetune | mode | n | balanced | worst | i.i.d. |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &summary {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.task,
            r.pretrain.name(),
            r.finetune.name(),
            r.mode.name(),
            r.n,
            pct(r.balanced_mean, r.balanced_std),
            pct(r.worst_mean, r.worst_std),
            pct(r.iid_mean, r.iid_std),
        );
    }
    if let Some(c) = correlation {
        let _ = writeln!(md, "\nPearson(validation score, balanced test accuracy) = {c:.3}");
    }
    let failed: Vec<&TrialResult> = results.iter().filter(|r| !r.is_ok()).collect();
    if !failed.is_empty() {
        md.push_str("\n## Failed trials\n\n");
        for r in failed {
            let _ = writeln!(md, "- {}: {}", r.name, r.error.as_deref().unwrap_or("unknown"));
        }
    }
    crate::fsutil::atomic_write(&dir.join("report.md"), md.as_bytes())?;
    Ok(ReportOutcome {
        summary,
        scatter_rows: ok.len(),
        correlation,
    })
}

/// Balanced accuracy grouped by pretraining/finetuning rows and mode columns.
pub fn write_ablation_markdown(path: &Path, rows: &[SummaryRow], modes: &[Mode]) -> Result<()> {
    let mut md = String::from("| pretrain | finetune |");
    for m in modes {
        let _ = write!(md, " {} |", m.name());
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(modes.len()));
    md.push('\n');
    let mut keys: Vec<(Pretrain, Finetune)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.pretrain, r.finetune)) {
            keys.push((r.pretrain, r.finetune));
        }
    }
    for (p, f) in keys {
        let _ = write!(md, "| {} | {} |", p.name(), f.name());
        for m in modes {
            let cell = rows
                .iter()
                .find(|r| r.pretrain == p && r.finetune == f && r.mode == *m)
                .map(|r| pct(r.balanced_mean, r.balanced_std))
                .unwrap_or_else(|| "n/a".into());
            let _ = write!(md, " {cell} |");
        }
        md.push('\n');
    }
    crate::fsutil::atomic_write(path, md.as_bytes())
}
