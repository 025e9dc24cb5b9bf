//! Confusion matrices and per-class precision / recall / F1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// One evaluated sample: dataset index, true label, predicted label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: usize,
    /// Mean cross-entropy, when logits were available.
    pub loss: Option<f64>,
}

impl EvalReport {
    pub fn from_predictions(predictions: &[Prediction], class_names: &[String]) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Validation(
                "cannot evaluate an empty sample set".into(),
            ));
        }
        let k = class_names.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for p in predictions {
            if p.label >= k || p.predicted >= k {
                return Err(Error::Validation(format!(
                    "sample {} has label {} / prediction {} with {k} classes",
                    p.index, p.label, p.predicted
                )));
            }
            confusion[p.label][p.predicted] += 1;
        }
        let total = predictions.len();
        let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
        let classes = (0..k)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let ratio = |den: usize| if den > 0 { tp / den as f64 } else { 0.0 };
                let (precision, recall) = (ratio(predicted), ratio(support));
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    support,
                }
            })
            .collect();
        Ok(EvalReport {
            class_names: class_names.to_vec(),
            confusion,
            classes,
            accuracy: trace as f64 / total as f64,
            total,
            loss: None,
        })
    }

    /// Unweighted mean of per-class values.
    pub fn macro_average(&self) -> (f64, f64, f64) {
        let k = self.classes.len().max(1) as f64;
        let sum = |f: fn(&ClassMetrics) -> f64| self.classes.iter().map(f).sum::<f64>() / k;
        (sum(|m| m.precision), sum(|m| m.recall), sum(|m| m.f1))
    }

    /// Aligned table: one row per class in index order, then accuracy and
    /// macro averages.
    pub fn render_text(&self) -> String {
        let name_w = self
            .class_names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(12);
        let mut s = format!(
            "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "class", "precision", "recall", "f1-score", "support"
        );
        for (name, m) in self.class_names.iter().zip(&self.classes) {
            s += &format!(
                "{:<name_w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                name, m.precision, m.recall, m.f1, m.support
            );
        }
        let (p, r, f) = self.macro_average();
        s += &format!(
            "{:<name_w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
            "macro avg", p, r, f, self.total
        );
        s += &format!(
            "{:<name_w$}  {:>9}  {:>9}  {:>9.4}  {:>7}\n",
            "accuracy", "", "", self.accuracy, self.total
        );
        if let Some(loss) = self.loss {
            s += &format!("{:<name_w$}  {:>9}  {:>9}  {:>9.4}\n", "loss", "", "", loss);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.txt` and `<stem>.json` next to each other.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let txt = stem.with_extension("txt");
        let json = stem.with_extension("json");
        std::fs::write(&txt, self.render_text()).map_err(|e| Error::io(&txt, e))?;
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}

pub fn write_predictions(predictions: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("index,label,predicted\n");
    for p in predictions {
        s += &format!("{},{},{}\n", p.index, p.label, p.predicted);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
