//! Confusion-matrix metrics with CTC as the positive class, and the
//! mean ± std tables used for reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same matrix seen with LEUKO as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch(predictions.len(), truths.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p, t) {
            (Label::Ctc, Label::Ctc) => cm.tp += 1,
            (Label::Ctc, Label::Leuko) => cm.fp += 1,
            (Label::Leuko, Label::Leuko) => cm.tn += 1,
            (Label::Leuko, Label::Ctc) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Averaging {
    #[default]
    Macro,
    PositiveClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Predicted count was zero; precision set to 0.
    pub precision_undefined: bool,
    /// Support was zero; recall set to 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    pub confusion: ConfusionMatrix,
    /// CTC first, then LEUKO.
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn class_metrics(label: Label, tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    // the count form is exact and agrees with the harmonic mean whenever both are defined
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else if precision_undefined || recall_undefined {
        harmonic(precision, recall)
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    ClassMetrics {
        label,
        precision,
        recall,
        f1,
        support: tp + fn_,
        precision_undefined,
        recall_undefined,
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let ctc = class_metrics(Label::Ctc, cm.tp, cm.fp, cm.fn_);
    let leuko = class_metrics(Label::Leuko, cm.tn, cm.fn_, cm.fp);
    let (precision, recall, f1) = match averaging {
        Averaging::PositiveClass => (ctc.precision, ctc.recall, ctc.f1),
        Averaging::Macro => (
            (ctc.precision + leuko.precision) / 2.0,
            (ctc.recall + leuko.recall) / 2.0,
            (ctc.f1 + leuko.f1) / 2.0,
        ),
    };
    Ok(MetricsReport {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
        averaging,
        confusion: *cm,
        per_class: vec![ctc, leuko],
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn any_undefined(&self) -> bool {
        self.per_class
            .iter()
            .any(|c| c.precision_undefined || c.recall_undefined)
    }
}

/// Mean and sample standard deviation; `std` is 0 for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, n })
    }

    /// `0.798 ± 0.005`
    pub fn format(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// One row of a mean ± std results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    /// Rows built from fewer runs than requested.
    #[serde(default)]
    pub incomplete: bool,
}

impl SummaryRow {
    pub fn from_reports(name: &str, reports: &[MetricsReport]) -> Option<Self> {
        let col = |f: fn(&MetricsReport) -> f64| {
            MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>())
        };
        Some(SummaryRow {
            name: name.to_string(),
            precision: col(|r| r.precision)?,
            recall: col(|r| r.recall)?,
            accuracy: col(|r| r.accuracy)?,
            f1: col(|r| r.f1)?,
            incomplete: false,
        })
    }

    fn cells(&self) -> [MeanStd; 4] {
        [self.precision, self.recall, self.accuracy, self.f1]
    }
}

pub const TABLE_COLUMNS: [&str; 4] = ["Precision", "Recall", "Accuracy", "F1-score"];

/// Markdown table, one row per entry; the best mean in each metric column
/// is bold. `first` names the row-label column.
pub fn markdown_table(first: &str, rows: &[SummaryRow]) -> String {
    let mut best = [f64::NEG_INFINITY; 4];
    for r in rows {
        for (b, c) in best.iter_mut().zip(r.cells()) {
            *b = b.max(round3(c.mean));
        }
    }
    let mut s = format!("| {first} | {} |\n", TABLE_COLUMNS.join(" | "));
    s.push_str(&format!("|---|{}\n", "---:|".repeat(4)));
    for r in rows {
        let name = if r.incomplete {
            format!("{} (incomplete)", r.name)
        } else {
            r.name.clone()
        };
        let _ = write!(s, "| {name} |");
        for (b, c) in best.iter().zip(r.cells()) {
            if rows.len() > 1 && round3(c.mean) == *b {
                let _ = write!(s, " **{}** |", c.format());
            } else {
                let _ = write!(s, " {} |", c.format());
            }
        }
        s.push('\n');
    }
    s
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// CSV with separate mean and std columns per metric.
pub fn csv_table(first: &str, rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    let mut header = vec![first.to_string()];
    for m in ["precision", "recall", "accuracy", "f1"] {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.push("n".into());
    header.push("incomplete".into());
    w.write_record(&header).map_err(ser)?;
    for r in rows {
        let mut rec = vec![r.name.clone()];
        for c in r.cells() {
            rec.push(format!("{:.6}", c.mean));
            rec.push(format!("{:.6}", c.std));
        }
        rec.push(r.f1.n.to_string());
        rec.push(r.incomplete.to_string());
        w.write_record(&rec).map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
