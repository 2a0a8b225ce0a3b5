//! Confusion matrix and per-class precision / recall / F1 over the 13 classifier classes.

use serde::{Deserialize, Serialize};

use crate::taxonomy::ClfClass;

use super::EvalError;

/// Rows are true classes, columns predicted classes, both in [`ClfClass::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClfClass>,
    pub counts: Vec<Vec<u64>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self {
            classes: ClfClass::ALL.to_vec(),
            counts: vec![vec![0; ClfClass::COUNT]; ClfClass::COUNT],
        }
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }
}

pub fn confusion_matrix(true_labels: &[ClfClass], pred_labels: &[ClfClass]) -> Result<ConfusionMatrix, EvalError> {
    if true_labels.len() != pred_labels.len() {
        return Err(EvalError::LengthMismatch(true_labels.len(), pred_labels.len()));
    }
    let mut m = ConfusionMatrix::default();
    for (t, p) in true_labels.iter().zip(pred_labels) {
        m.counts[t.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: ClfClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True samples of this class (row sum).
    pub support: u64,
    /// Samples predicted as this class (column sum).
    pub predicted: u64,
    /// Set when nothing was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// Set when the class has no true samples; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub total: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    /// Means over the classes that occur as a true or predicted label.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_classes: Vec<ClfClass>,
}

pub fn classification_report(m: &ConfusionMatrix) -> Result<ClassificationReport, EvalError> {
    let total = m.total();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let per_class: Vec<ClassScores> = m
        .classes
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let tp = m.counts[i][i] as f64;
            let support = m.row_sum(i);
            let predicted = m.column_sum(i);
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                class,
                precision,
                recall,
                f1,
                support,
                predicted,
                precision_undefined: predicted == 0,
                recall_undefined: support == 0,
            }
        })
        .collect();

    let present: Vec<&ClassScores> = per_class.iter().filter(|c| c.support > 0 || c.predicted > 0).collect();
    let n = present.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / n;
    Ok(ClassificationReport {
        total,
        accuracy: m.trace() as f64 / total as f64,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        macro_classes: present.iter().map(|c| c.class).collect(),
        per_class,
    })
}
