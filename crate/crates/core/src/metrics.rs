//! Confusion matrices, per-class precision/recall/F1/binary accuracy and
//! their macro and support-weighted averages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassRegistry, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Parse(format!("confusion matrix must be square, got {k} rows")));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums.
    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.num_classes())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    /// Elementwise sum of two partial matrices.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.num_classes() != other.num_classes() {
            return Err(Error::LengthMismatch {
                left: self.num_classes(),
                right: other.num_classes(),
            });
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(ConfusionMatrix { counts })
    }

    /// Whitespace-separated grid, one row per true class, preceded by a
    /// comment line naming the columns.
    pub fn to_grid(&self, registry: &ClassRegistry) -> String {
        let codes: Vec<&str> = registry.entries().iter().map(|e| e.code.as_str()).collect();
        let mut out = format!("# rows=true cols=pred {}\n", codes.join(" "));
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_grid(text: &str) -> Result<ConfusionMatrix> {
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<u64>().map_err(|e| Error::Parse(format!("grid line {}: {e}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            counts.push(row);
        }
        ConfusionMatrix::from_counts(counts)
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionMatrix> {
    confusion_matrix_k(y_true, y_pred, NUM_CLASSES)
}

pub fn confusion_matrix_k(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if let Some(bad) = [t, p].into_iter().find(|&v| v >= k) {
            return Err(Error::BadLabel {
                line: i,
                label: bad.to_string(),
            });
        }
        cm.record(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

pub fn per_class_counts(cm: &ConfusionMatrix, class: usize) -> Result<ClassCounts> {
    if class >= cm.num_classes() {
        return Err(Error::BadClass(class));
    }
    let tp = cm.get(class, class);
    let fp = cm.column_sums()[class] - tp;
    let fn_ = cm.supports()[class] - tp;
    let tn = cm.total() - tp - fp - fn_;
    Ok(ClassCounts { tp, tn, fp, fn_ })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(c: &ClassCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ClassCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn binary_accuracy(c: &ClassCounts) -> f64 {
    ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_)
}

pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn f1(c: &ClassCounts) -> f64 {
    f1_from(precision(c), recall(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub class_id: usize,
    /// Absent when the row was built from published values.
    pub counts: Option<ClassCounts>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub binary_accuracy: Option<f64>,
    pub support: u64,
}

impl PerClassMetrics {
    pub fn from_counts(class_id: usize, c: ClassCounts) -> Self {
        PerClassMetrics {
            class_id,
            counts: Some(c),
            precision: precision(&c),
            recall: recall(&c),
            f1: f1(&c),
            binary_accuracy: Some(binary_accuracy(&c)),
            support: c.tp + c.fn_,
        }
    }

    pub fn from_values(class_id: usize, precision: f64, recall: f64, f1: f64, support: u64) -> Self {
        PerClassMetrics {
            class_id,
            counts: None,
            precision,
            recall,
            f1,
            binary_accuracy: None,
            support,
        }
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<PerClassMetrics> {
    (0..cm.num_classes())
        .map(|c| PerClassMetrics::from_counts(c, per_class_counts(cm, c).expect("class in range")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageMode {
    Macro,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// F1 formula applied to the averaged precision and recall.
    pub f1_from_averages: f64,
}

/// Averages over classes `0..NUM_CLASSES`, each of which must be present.
pub fn aggregate(per_class: &[PerClassMetrics], mode: AverageMode) -> Result<Averages> {
    aggregate_k(per_class, mode, NUM_CLASSES)
}

pub fn aggregate_k(per_class: &[PerClassMetrics], mode: AverageMode, k: usize) -> Result<Averages> {
    let mut rows = Vec::with_capacity(k);
    for c in 0..k {
        rows.push(per_class.iter().find(|m| m.class_id == c).ok_or(Error::MissingClass(c))?);
    }
    let total: u64 = rows.iter().map(|m| m.support).sum();
    let weight = |m: &PerClassMetrics| match mode {
        AverageMode::Macro => 1.0 / k as f64,
        AverageMode::Weighted => ratio(m.support, total),
    };
    let avg = |f: fn(&PerClassMetrics) -> f64| rows.iter().map(|m| weight(m) * f(m)).sum::<f64>();
    let precision = avg(|m| m.precision);
    // With known counts the weighted recall is summed in integers.
    let recall = match (mode, rows.iter().map(|m| m.counts.map(|c| c.tp)).sum::<Option<u64>>()) {
        (AverageMode::Weighted, Some(correct)) => ratio(correct, total),
        _ => avg(|m| m.recall),
    };
    Ok(Averages {
        precision,
        recall,
        f1: avg(|m| m.f1),
        f1_from_averages: f1_from(precision, recall),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    /// Correct predictions over all predictions.
    pub overall_accuracy: f64,
    pub macro_avg: Averages,
    pub weighted: Averages,
    /// Per-class one-vs-rest accuracy averaged over classes.
    pub mean_binary_accuracy: f64,
}

pub fn summarize(cm: &ConfusionMatrix) -> AggregateMetrics {
    let k = cm.num_classes();
    let rows = per_class_metrics(cm);
    let mean_binary_accuracy = rows.iter().map(|m| m.binary_accuracy.unwrap_or(0.0)).sum::<f64>() / k as f64;
    AggregateMetrics {
        overall_accuracy: ratio(cm.trace(), cm.total()),
        macro_avg: aggregate_k(&rows, AverageMode::Macro, k).expect("all classes present"),
        weighted: aggregate_k(&rows, AverageMode::Weighted, k).expect("all classes present"),
        mean_binary_accuracy,
    }
}

/// Rounds half away from zero to three decimals, tolerating binary
/// representation error at the half-way point.
pub fn round3(x: f64) -> f64 {
    let y = x * 1000.0;
    let whole = y.trunc();
    let frac = (y - whole).abs();
    let r = if frac + 1e-9 >= 0.5 { whole + y.signum() } else { whole };
    r / 1000.0
}

pub fn fmt3(x: f64) -> String {
    format!("{:.3}", round3(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class_id: usize,
    pub code: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub rows: Vec<ReportRow>,
    pub aggregate: AggregateMetrics,
    pub total: u64,
}

pub fn classification_report(cm: &ConfusionMatrix, registry: &ClassRegistry) -> ClassificationReport {
    let rows = per_class_metrics(cm)
        .into_iter()
        .map(|m| ReportRow {
            class_id: m.class_id,
            code: registry
                .code(m.class_id)
                .map(str::to_string)
                .unwrap_or_else(|| m.class_id.to_string()),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: m.support,
        })
        .collect();
    ClassificationReport {
        rows,
        aggregate: summarize(cm),
        total: cm.total(),
    }
}

impl ClassificationReport {
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.code.len()).max().unwrap_or(0).max(16);
        let mut out = String::new();
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>width$} {:>9} {:>9} {:>9} {:>9}",
                r.code,
                fmt3(r.precision),
                fmt3(r.recall),
                fmt3(r.f1),
                r.support
            );
        }
        out.push('\n');
        let a = &self.aggregate;
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "accuracy", "", "", fmt3(a.overall_accuracy), self.total);
        for (label, avg) in [("macro avg", &a.macro_avg), ("weighted avg", &a.weighted)] {
            let _ = writeln!(
                out,
                "{:>width$} {:>9} {:>9} {:>9} {:>9}",
                label,
                fmt3(avg.precision),
                fmt3(avg.recall),
                fmt3(avg.f1),
                self.total
            );
        }
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9}", "weighted f1 (P,R)", "", "", fmt3(a.weighted.f1_from_averages));
        let _ = writeln!(out, "{:>width$} {:>9} {:>9} {:>9}", "mean binary acc", "", "", fmt3(a.mean_binary_accuracy));
        out
    }

    /// One row per class and per aggregate, full precision.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.code.clone(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
                r.support.to_string(),
                String::new(),
            ])
            .expect("in-memory write");
        }
        let a = &self.aggregate;
        let total = self.total.to_string();
        let acc = a.overall_accuracy.to_string();
        w.write_record(["accuracy", &acc, &acc, &acc, &total, ""]).expect("in-memory write");
        for (label, avg) in [("macro avg", &a.macro_avg), ("weighted avg", &a.weighted)] {
            w.write_record([
                label,
                &avg.precision.to_string(),
                &avg.recall.to_string(),
                &avg.f1.to_string(),
                &total,
                &avg.f1_from_averages.to_string(),
            ])
            .expect("in-memory write");
        }
        let mba = a.mean_binary_accuracy.to_string();
        w.write_record(["mean binary acc", &mba, &mba, &mba, &total, ""]).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Inverse of [`ClassificationReport::to_csv`]. Class rows take their
    /// position as class id.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?;
        if header.iter().ne(REPORT_COLUMNS) {
            return Err(Error::Parse(format!("unexpected report header {header:?}")));
        }
        let mut rows = Vec::new();
        let mut tail = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Parse(format!("missing column {}", REPORT_COLUMNS[i])));
            let num = |i: usize| -> Result<f64> {
                field(i)?.parse().map_err(|e| Error::Parse(format!("{}: {e}", REPORT_COLUMNS[i])))
            };
            let label = field(0)?.to_string();
            let support: u64 = field(4)?.parse().map_err(|e| Error::Parse(format!("support: {e}")))?;
            let values = (num(1)?, num(2)?, num(3)?, support);
            match label.as_str() {
                "accuracy" | "mean binary acc" => {
                    tail.insert(label, (values, 0.0));
                }
                "macro avg" | "weighted avg" => {
                    tail.insert(label, (values, num(5)?));
                }
                _ if tail.is_empty() => rows.push(ReportRow {
                    class_id: rows.len(),
                    code: label,
                    precision: values.0,
                    recall: values.1,
                    f1: values.2,
                    support,
                }),
                _ => return Err(Error::Parse(format!("class row {label:?} after the aggregates"))),
            }
        }
        let mut take = |label: &str| tail.remove(label).ok_or_else(|| Error::Parse(format!("missing {label:?} row")));
        let averages = |((p, r, f, _), ff): ((f64, f64, f64, u64), f64)| Averages {
            precision: p,
            recall: r,
            f1: f,
            f1_from_averages: ff,
        };
        let ((accuracy, _, _, total), _) = take("accuracy")?;
        let macro_avg = averages(take("macro avg")?);
        let weighted = averages(take("weighted avg")?);
        let ((mean_binary_accuracy, _, _, _), _) = take("mean binary acc")?;
        Ok(ClassificationReport {
            rows,
            aggregate: AggregateMetrics {
                overall_accuracy: accuracy,
                macro_avg,
                weighted,
                mean_binary_accuracy,
            },
            total,
        })
    }
}

const REPORT_COLUMNS: [&str; 6] = ["label", "precision", "recall", "f1", "support", "f1_from_pr"];
