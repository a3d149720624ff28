//! Evaluation: group accuracy reports, label-free validation scores,
//! correlation, and exact oracles for enumerable toys.

mod toy;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::BiasLabels;

pub use toy::{
    balanced_accuracy_of_table, factorized_scores, multilabel_balanced_accuracy, oracle_bayes_toy,
    BayesOracle, EnumerableToy,
};

/// Per-group accuracies of a prediction vector against hidden groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    /// Accuracy per `(y, z)` cell; empty cells hold 0 and are listed in `empty_cells`.
    pub per_group_acc: Array2<f64>,
    pub counts: Array2<usize>,
    pub balanced: f64,
    pub worst: f64,
    pub iid: f64,
    pub empty_cells: Vec<(usize, usize)>,
}

impl GroupReport {
    /// CSV rows `y,z,count,accuracy` followed by the summary rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y", "z", "count", "accuracy"])?;
        for ((y, z), &c) in self.counts.indexed_iter() {
            let acc = if c == 0 { String::new() } else { format!("{:.6}", self.per_group_acc[[y, z]]) };
            w.write_record([y.to_string(), z.to_string(), c.to_string(), acc])?;
        }
        let n: usize = self.counts.sum();
        for (name, v) in [("balanced", self.balanced), ("worst", self.worst), ("iid", self.iid)] {
            w.write_record([name.to_string(), String::new(), n.to_string(), format!("{v:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::fsutil::atomic_write(path, &buf)
    }
}

/// Mean of cell accuracies summed in ascending order, so that any relabeling
/// of the cells gives a bit-identical result.
fn sorted_mean(accs: &mut [f64]) -> f64 {
    accs.sort_by(f64::total_cmp);
    accs.iter().sum::<f64>() / accs.len() as f64
}

/// Group-balanced accuracy: unweighted mean over non-empty `(y, z)` cells.
pub fn group_balanced_accuracy(
    pred: &[usize],
    labels: &[u16],
    bias: &BiasLabels<'_>,
    k: usize,
) -> Result<GroupReport> {
    if pred.is_empty() {
        return Err(Error::Usage("group accuracy of an empty test set".into()));
    }
    if pred.len() != labels.len() || pred.len() != bias.values.len() {
        return Err(Error::Usage("predictions, labels and groups differ in length".into()));
    }
    let l = bias.num_values;
    let mut hits = Array2::<usize>::zeros((k, l));
    let mut counts = Array2::<usize>::zeros((k, l));
    for ((&p, &y), &z) in pred.iter().zip(labels).zip(bias.values) {
        let cell = [y as usize, z as usize];
        counts[cell] += 1;
        hits[cell] += usize::from(p == y as usize);
    }
    let total_hits: usize = hits.sum();
    let mut per_group_acc = Array2::zeros((k, l));
    let mut empty_cells = Vec::new();
    let mut accs = Vec::new();
    for ((cell, &c), &h) in counts.indexed_iter().zip(hits.iter()) {
        if c == 0 {
            empty_cells.push(cell);
        } else {
            let a = h as f64 / c as f64;
            per_group_acc[cell] = a;
            accs.push(a);
        }
    }
    Ok(GroupReport {
        per_group_acc,
        counts,
        balanced: sorted_mean(&mut accs),
        worst: accs.iter().copied().fold(f64::INFINITY, f64::min),
        iid: total_hits as f64 / pred.len() as f64,
        empty_cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidatorKind {
    #[default]
    Balanced,
    Worst,
}

impl ValidatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Balanced => "balanced",
            Self::Worst => "worst",
        }
    }
}

/// Validation samples grouped by true label and proxy prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPartition {
    k: usize,
    cells: Vec<Vec<usize>>,
}

impl ValidationPartition {
    pub fn new(labels: &[u16], proxy_pred: &[usize], k: usize) -> Result<Self> {
        if labels.len() != proxy_pred.len() {
            return Err(Error::Usage("labels and proxy predictions differ in length".into()));
        }
        if labels.is_empty() {
            return Err(Error::Usage("validation set is empty".into()));
        }
        let mut cells = vec![Vec::new(); k * k];
        for (i, (&y, &b)) in labels.iter().zip(proxy_pred).enumerate() {
            let (y, b) = (y as usize, b);
            if y >= k || b >= k {
                return Err(Error::Usage(format!("cell ({y}, {b}) outside {k}x{k}")));
            }
            cells[y * k + b].push(i);
        }
        Ok(Self { k, cells })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn cell(&self, y: usize, b: usize) -> &[usize] {
        &self.cells[y * self.k + b]
    }

    pub fn counts(&self) -> Array2<usize> {
        Array2::from_shape_fn((self.k, self.k), |(y, b)| self.cell(y, b).len())
    }

    /// Per-cell accuracies of cells holding at least `min_count` samples.
    pub fn cell_accuracies(&self, pred: &[usize], min_count: usize) -> Vec<f64> {
        let mut accs = Vec::new();
        let mut skipped = 0usize;
        for (c, idx) in self.cells.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            if idx.len() < min_count.max(1) {
                skipped += 1;
                continue;
            }
            let y = c / self.k;
            let hits = idx.iter().filter(|&&i| pred[i] == y).count();
            accs.push(hits as f64 / idx.len() as f64);
        }
        if skipped > 0 {
            log::info!("validation: {skipped} cells below min_count {min_count} excluded");
        }
        if accs.len() == 1 {
            log::warn!("validation score computed from a single cell");
        }
        accs
    }

    pub fn score(&self, pred: &[usize], kind: ValidatorKind, min_count: usize) -> Result<f64> {
        let mut accs = self.cell_accuracies(pred, min_count);
        if accs.is_empty() {
            return Err(Error::Undefined("no validation cell reaches min_count".into()));
        }
        Ok(match kind {
            ValidatorKind::Balanced => sorted_mean(&mut accs),
            ValidatorKind::Worst => accs.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

/// Mean accuracy over label × proxy-prediction cells.
pub fn unsupervised_balanced_val(pred: &[usize], labels: &[u16], proxy_pred: &[usize], k: usize, min_count: usize) -> Result<f64> {
    ValidationPartition::new(labels, proxy_pred, k)?.score(pred, ValidatorKind::Balanced, min_count)
}

/// Minimum accuracy over label × proxy-prediction cells.
pub fn unsupervised_worst_group_val(pred: &[usize], labels: &[u16], proxy_pred: &[usize], k: usize, min_count: usize) -> Result<f64> {
    ValidationPartition::new(labels, proxy_pred, k)?.score(pred, ValidatorKind::Worst, min_count)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Usage("pearson inputs differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(Error::Undefined("pearson needs at least 3 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crafted() -> (Vec<u16>, Vec<usize>, Vec<usize>) {
        // S00: 2 samples, 1 hit; S01: 1 hit; S10: 1 miss; S11: 2 hits.
        let labels = vec![0, 0, 0, 1, 1, 1];
        let proxy = vec![0, 0, 1, 0, 1, 1];
        let pred = vec![0, 1, 0, 0, 1, 1];
        (labels, proxy, pred)
    }

    #[test]
    fn eq_cells_by_hand() {
        let (labels, proxy, pred) = crafted();
        assert!((unsupervised_balanced_val(&pred, &labels, &proxy, 2, 1).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(unsupervised_worst_group_val(&pred, &labels, &proxy, 2, 1).unwrap(), 0.0);
        // Cells with fewer than 2 samples drop out.
        let s = unsupervised_balanced_val(&pred, &labels, &proxy, 2, 2).unwrap();
        assert!((s - 0.75).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let labels = vec![0u16, 1, 2, 1];
        let pred: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
        assert_eq!(unsupervised_balanced_val(&pred, &labels, &pred, 3, 1).unwrap(), 1.0);
        let bias = BiasLabels { values: &labels, num_values: 3 };
        let r = group_balanced_accuracy(&pred, &labels, &bias, 3).unwrap();
        assert_eq!((r.balanced, r.worst, r.iid), (1.0, 1.0, 1.0));
    }

    #[test]
    fn group_report_by_hand() {
        // Cells (0,0): 1/1, (0,1): 1/2, (1,0): 0/1, (1,1): 1/2.
        let labels = [0u16, 0, 0, 1, 1, 1];
        let z = [0u16, 1, 1, 0, 1, 1];
        let pred = [0usize, 0, 1, 0, 1, 0];
        let bias = BiasLabels { values: &z, num_values: 2 };
        let r = group_balanced_accuracy(&pred, &labels, &bias, 2).unwrap();
        assert!((r.balanced - 0.5).abs() < 1e-15);
        assert_eq!(r.worst, 0.0);
        assert!(r.empty_cells.is_empty());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("y,z,count,accuracy\n0,0,1,1.000000\n"));
        assert!(text.contains("balanced,,6,0.500000"));
    }

    #[test]
    fn pearson_hand_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&xs, &xs.map(|x| 2.0 * x + 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &xs.map(|x| -x)).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(pearson(&xs, &[1.0; 4]), Err(Error::Undefined(_))));
    }
}
