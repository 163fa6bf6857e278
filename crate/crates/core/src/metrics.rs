//! Confusion matrix and the per-class, macro and weighted metric report.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|p| self.get(k, p)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, k)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn write_csv<W: Write>(&self, names: &[&str], writer: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self.rows().iter().map(|r| r.iter().map(u64::to_string).collect()).collect();
        write_matrix_csv(names, &rows, writer)
    }
}

fn write_matrix_csv<W: Write>(names: &[&str], rows: &[Vec<String>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| Error::Format(format!("writing matrix: {e}"));
    let header: Vec<&str> = std::iter::once("true\\pred").chain(names.iter().copied()).collect();
    w.write_record(&header).map_err(fail)?;
    for (name, row) in names.iter().zip(rows) {
        w.write_record(std::iter::once(name.to_string()).chain(row.iter().cloned())).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Format(format!("writing matrix: {e}")))
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
            return Err(Error::LabelRange { label, classes });
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Zero denominators give 0.
pub fn per_class_prf(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes())
        .map(|k| {
            let tp = cm.get(k, k);
            let precision = ratio(tp, cm.col_sum(k));
            let recall = ratio(tp, cm.row_sum(k));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.row_sum(k),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Unweighted and support-weighted means.
pub fn aggregates(per_class: &[ClassMetrics]) -> (Averages, Averages) {
    let k = per_class.len() as f64;
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| if k == 0.0 { 0.0 } else { per_class.iter().map(f).sum::<f64>() / k };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    (
        Averages {
            precision: mean(|c| c.precision),
            recall: mean(|c| c.recall),
            f1: mean(|c| c.f1),
        },
        Averages {
            precision: weighted(|c| c.precision),
            recall: weighted(|c| c.recall),
            f1: weighted(|c| c.f1),
        },
    )
}

/// Each row divided by its sum; empty rows stay zero.
pub fn row_normalize(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    (0..cm.classes())
        .map(|t| {
            let s = cm.row_sum(t);
            (0..cm.classes()).map(|p| ratio(cm.get(t, p), s)).collect()
        })
        .collect()
}

/// Round half up to 4 decimals. The tiny offset absorbs binary
/// representation error of values that are ties in decimal.
pub fn round4(x: f64) -> f64 {
    (x * 1e4 + 0.5 + 1e-9).floor() / 1e4
}

pub fn format4(x: f64) -> String {
    format!("{:.4}", round4(x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn new(confusion: ConfusionMatrix, class_names: &[&str]) -> Result<Self> {
        if class_names.len() != confusion.classes() {
            return Err(Error::Dimension(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                confusion.classes()
            )));
        }
        let per_class = per_class_prf(&confusion);
        let (macro_avg, weighted_avg) = aggregates(&per_class);
        Ok(Self {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            accuracy: ratio(confusion.trace(), confusion.total()),
            confusion,
            per_class,
            macro_avg,
            weighted_avg,
        })
    }

    /// Aligned table: one row per class, then macro, weighted and accuracy.
    pub fn to_text(&self) -> String {
        let total = self.confusion.total();
        let mut s = String::new();
        let row = |s: &mut String, name: &str, p: &str, r: &str, f: &str, n: u64| {
            let _ = writeln!(s, "{name:<14}{p:>10}{r:>10}{f:>10}{n:>10}");
        };
        let _ = writeln!(s, "{:<14}{:>10}{:>10}{:>10}{:>10}", "Class", "Precision", "Recall", "F1-Score", "Support");
        for (name, c) in self.class_names.iter().zip(&self.per_class) {
            row(&mut s, name, &format4(c.precision), &format4(c.recall), &format4(c.f1), c.support);
        }
        for (name, a) in [("Macro Avg", &self.macro_avg), ("Weighted Avg", &self.weighted_avg)] {
            row(&mut s, name, &format4(a.precision), &format4(a.recall), &format4(a.f1), total);
        }
        row(&mut s, "Overall Acc", "", &format4(self.accuracy), "", total);
        s
    }

    /// Same rows as [`MetricsReport::to_text`], values rounded to 4 places.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fail = |e: csv::Error| Error::Format(format!("writing metrics: {e}"));
        let total = self.confusion.total().to_string();
        w.write_record(["class", "precision", "recall", "f1", "support"]).map_err(fail)?;
        for (name, c) in self.class_names.iter().zip(&self.per_class) {
            w.write_record([name.clone(), format4(c.precision), format4(c.recall), format4(c.f1), c.support.to_string()])
                .map_err(fail)?;
        }
        for (name, a) in [("macro_avg", &self.macro_avg), ("weighted_avg", &self.weighted_avg)] {
            w.write_record([name.to_string(), format4(a.precision), format4(a.recall), format4(a.f1), total.clone()])
                .map_err(fail)?;
        }
        w.write_record(["accuracy".to_string(), String::new(), format4(self.accuracy), String::new(), total])
            .map_err(fail)?;
        w.flush().map_err(|e| Error::Format(format!("writing metrics: {e}")))
    }

    /// Row-normalized confusion matrix as CSV (fractions, 4 places).
    pub fn write_normalized_csv<W: Write>(&self, writer: W) -> Result<()> {
        let names: Vec<&str> = self.class_names.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = row_normalize(&self.confusion)
            .iter()
            .map(|r| r.iter().map(|v| format4(*v)).collect())
            .collect();
        write_matrix_csv(&names, &rows, writer)
    }
}
