use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SeverityGrade;

/// Rows are true severity, columns predicted severity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    /// `(TP + TN) / (TP + FP + TN + FN)`.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.tp + self.fp + self.fn_ + self.tn;
        if total == 0 {
            return Err(Error::UndefinedMetric("accuracy of an empty matrix".into()));
        }
        Ok((self.tp + self.tn) as f64 / total as f64)
    }
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, truth: SeverityGrade, predicted: SeverityGrade) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn class_counts(&self, class: SeverityGrade) -> BinaryCounts {
        let c = class.index();
        let tp = self.counts[c][c];
        let col: u64 = (0..3).map(|r| self.counts[r][c]).sum();
        let row: u64 = self.counts[c].iter().sum();
        let fp = col - tp;
        let fn_ = row - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1);
        for row in &self.counts {
            writeln!(f, "[{:>w$} {:>w$} {:>w$}]", row[0], row[1], row[2], w = width)?;
        }
        Ok(())
    }
}

/// Multiclass accuracy: trace over total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy of an empty matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

pub fn confusion_from_labels(truth: &[SeverityGrade], predicted: &[SeverityGrade]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Validation(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("no labels".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        cm.add(*t, *p);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SeverityGrade::*;

    #[test]
    fn trace_over_total() {
        let cm = ConfusionMatrix::new([[5, 0, 0], [0, 3, 0], [0, 0, 1]]);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert!(matches!(accuracy(&ConfusionMatrix::default()), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn from_labels() {
        let cm = confusion_from_labels(&[Healthy, Medium, Severe], &[Healthy, Severe, Severe]).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 0, 1], [0, 0, 1]]);
        let cm = confusion_from_labels(&[Healthy; 4], &[Severe; 4]).unwrap();
        assert_eq!(cm.counts[0][2], 4);
        assert_eq!(cm.total(), 4);
        assert!(confusion_from_labels(&[Healthy], &[]).is_err());
        assert!(confusion_from_labels(&[], &[]).is_err());
    }

    #[test]
    fn one_vs_rest() {
        let cm = ConfusionMatrix::new([[2900, 8, 1], [72, 790, 20], [17, 175, 16]]);
        let c = cm.class_counts(Medium);
        assert_eq!(c.tp, 790);
        assert_eq!(c.fp, 8 + 175);
        assert_eq!(c.fn_, 72 + 20);
        assert_eq!(c.tp + c.fp + c.fn_ + c.tn, cm.total());
    }
}
