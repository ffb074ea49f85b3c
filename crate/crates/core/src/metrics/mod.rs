//! Confusion matrices, class-wise rates, agreement scores and the
//! transition/non-transition breakdown.
//!
//! Rates that would divide by zero are `None`, never zero.

mod report;

pub use report::{EvalReport, Strata};

use crate::error::{Error, Result};
use crate::signal_io::StageLabel;

/// Counts with rows = ground truth and columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let y = rows.len();
        if y == 0 || rows.iter().any(|r| r.len() != y) {
            return Err(Error::shape("confusion matrix must be square and non-empty"));
        }
        Ok(ConfusionMatrix {
            n_classes: y,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n_classes + pred] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::shape("cannot merge confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, c)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion(truth: &[StageLabel], pred: &[StageLabel]) -> Result<ConfusionMatrix> {
    let t: Vec<usize> = truth.iter().map(|l| l.index()).collect();
    let p: Vec<usize> = pred.iter().map(|l| l.index()).collect();
    confusion_indices(&t, &p, StageLabel::ALL.len())
}

pub fn confusion_indices(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} ground-truth labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::invalid(format!("class index outside 0..{n_classes}")));
        }
        cm.add(t, p);
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRates {
    pub sensitivity: Vec<Option<f64>>,
    pub selectivity: Vec<Option<f64>>,
    pub specificity: Vec<Option<f64>>,
}

/// Sensitivity = diag / row sum, selectivity = diag / column sum,
/// specificity = TN / (TN + FP).
pub fn class_rates(cm: &ConfusionMatrix) -> ClassRates {
    let total = cm.total();
    let y = cm.n_classes();
    let mut r = ClassRates {
        sensitivity: Vec::with_capacity(y),
        selectivity: Vec::with_capacity(y),
        specificity: Vec::with_capacity(y),
    };
    for c in 0..y {
        let tp = cm.get(c, c);
        let (row, col) = (cm.row_sum(c), cm.col_sum(c));
        let fp = col - tp;
        let tn = total - row - fp;
        r.sensitivity.push(ratio(tp, row));
        r.selectivity.push(ratio(tp, col));
        r.specificity.push(ratio(tn, tn + fp));
    }
    r
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.trace(), cm.total())
}

/// Cohen's kappa; `None` when chance agreement is 1 or the matrix is empty.
pub fn kappa(cm: &ConfusionMatrix) -> Option<f64> {
    let n = cm.total() as f64;
    if n == 0.0 {
        return None;
    }
    let po = cm.trace() as f64 / n;
    let pe: f64 = (0..cm.n_classes())
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    ((1.0 - pe).abs() > 1e-15).then(|| (po - pe) / (1.0 - pe))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroF1 {
    pub value: f64,
    pub per_class: Vec<f64>,
    /// Classes never present in the truth or never predicted; their F1
    /// enters the mean as whatever the counts give (0 when nothing matched).
    pub flagged: Vec<usize>,
}

/// Unweighted mean of per-class `2 TP / (2 TP + FP + FN)`.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<MacroF1> {
    if cm.total() == 0 {
        return Err(Error::invalid("macro F1 of an empty confusion matrix"));
    }
    let y = cm.n_classes();
    let mut per_class = Vec::with_capacity(y);
    let mut flagged = Vec::new();
    for c in 0..y {
        let tp = cm.get(c, c);
        let (row, col) = (cm.row_sum(c), cm.col_sum(c));
        if row == 0 || col == 0 {
            flagged.push(c);
        }
        let den = row + col;
        per_class.push(if den == 0 { 0.0 } else { 2.0 * tp as f64 / den as f64 });
    }
    Ok(MacroF1 {
        value: per_class.iter().sum::<f64>() / y as f64,
        per_class,
        flagged,
    })
}

/// Unweighted mean, undefined if any member is.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// `true` for epochs whose left and right neighbours both exist and carry the
/// same label; every other epoch, recording edges included, is a transition.
pub fn stratify_transitions(labels: &[StageLabel]) -> Vec<bool> {
    (0..labels.len())
        .map(|n| n > 0 && n + 1 < labels.len() && labels[n - 1] == labels[n] && labels[n + 1] == labels[n])
        .collect()
}

#[cfg(test)]
mod tests;
