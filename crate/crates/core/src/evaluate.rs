//! Confusion matrix, exact and ±1 accuracy, per-class precision/recall/F1.
//!
//! Rows of the matrix are ground truth, columns are predictions. Any ratio
//! with a zero denominator is reported as 0 and flagged.

use std::fmt::Write as _;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::DamageLevel;

pub const REPORT_FORMAT: &str = "ruinscore-report-v1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid report: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; 4]; 4]);

impl ConfusionMatrix {
    pub fn record(&mut self, gt: DamageLevel, pred: DamageLevel) {
        self.0[gt.ordinal()][pred.ordinal()] += 1;
    }

    pub fn get(&self, gt: DamageLevel, pred: DamageLevel) -> u64 {
        self.0[gt.ordinal()][pred.ordinal()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn row_sum(&self, gt: DamageLevel) -> u64 {
        self.0[gt.ordinal()].iter().sum()
    }

    pub fn col_sum(&self, pred: DamageLevel) -> u64 {
        self.0.iter().map(|row| row[pred.ordinal()]).sum()
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().flatten().zip(rhs.0.iter().flatten()) {
            *a += b;
        }
        self
    }
}

pub fn confusion_matrix<I>(pairs: I) -> ConfusionMatrix
where
    I: IntoIterator<Item = (DamageLevel, DamageLevel)>,
{
    let mut m = ConfusionMatrix::default();
    for (gt, pred) in pairs {
        m.record(gt, pred);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// True when any of the three ratios was 0/0 and reported as 0.
    pub undefined_to_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format: String,
    pub n: u64,
    pub exact_accuracy: f64,
    pub plus_minus_one_accuracy: f64,
    pub per_class: [ClassMetrics; 4],
    pub matrix: ConfusionMatrix,
    /// Free-form configuration label, e.g. `v1/rule_only`.
    pub config_tag: String,
    /// Table label for the decision path, e.g. "Final Decision".
    pub method: String,
    /// Table label for the model, e.g. "Rule Fusion v1".
    pub model_type: String,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(m: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let total = m.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut diag = 0;
    let mut near = 0;
    for gt in DamageLevel::ALL {
        for pred in DamageLevel::ALL {
            let c = m.get(gt, pred);
            if gt == pred {
                diag += c;
            }
            if gt.ordinal().abs_diff(pred.ordinal()) <= 1 {
                near += c;
            }
        }
    }

    let per_class = DamageLevel::ALL.map(|c| {
        let tp = m.get(c, c);
        let support = m.row_sum(c);
        let (precision, p_undef) = ratio(tp, m.col_sum(c));
        let (recall, r_undef) = ratio(tp, support);
        let (f1, f_undef) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support,
            undefined_to_zero: p_undef || r_undef || f_undef,
        }
    });

    Ok(EvalReport {
        format: REPORT_FORMAT.to_string(),
        n: total,
        exact_accuracy: diag as f64 / total as f64,
        plus_minus_one_accuracy: near as f64 / total as f64,
        per_class,
        matrix: *m,
        config_tag: String::new(),
        method: String::new(),
        model_type: String::new(),
    })
}

impl EvalReport {
    pub fn with_labels(
        mut self,
        config_tag: impl Into<String>,
        method: impl Into<String>,
        model_type: impl Into<String>,
    ) -> Self {
        self.config_tag = config_tag.into();
        self.method = method.into();
        self.model_type = model_type.into();
        self
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: EvalReport =
            serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
        if r.format != REPORT_FORMAT {
            return Err(EvalError::Format(format!("unknown format {:?}", r.format)));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

/// Renders a report. The text form has a summary table row, a per-class
/// table and the confusion matrix, all tab-separated with single-space
/// separated per-class values.
pub fn render_report(r: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("reports always serialize");
            s.push('\n');
            s
        }
        ReportFormat::Text => render_text(r),
    }
}

fn render_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let dash = |v: &str| {
        if v.is_empty() {
            "-".to_string()
        } else {
            v.to_string()
        }
    };
    let _ = writeln!(s, "Method\tModel type\tAccuracy (%)\t± 1 Accuracy");
    let _ = writeln!(
        s,
        "{}\t{}\t{:.2}\t{:.2}",
        dash(&r.method),
        dash(&r.model_type),
        r.exact_accuracy * 100.0,
        r.plus_minus_one_accuracy * 100.0
    );
    let _ = writeln!(s, "n = {}\tconfig = {}", r.n, dash(&r.config_tag));
    let _ = writeln!(s);

    let names: Vec<&str> = DamageLevel::ALL.iter().map(|l| l.title()).collect();
    let row = |label: &str, f: &dyn Fn(&ClassMetrics) -> String| {
        let vals: Vec<String> = r.per_class.iter().map(f).collect();
        format!("{label}\t{}\n", vals.join(" "))
    };
    let _ = writeln!(s, "Metrics\t{}", names.join(" "));
    s.push_str(&row("Precision", &|c| format!("{:.3}", c.precision)));
    s.push_str(&row("Recall", &|c| format!("{:.3}", c.recall)));
    s.push_str(&row("F1 Score", &|c| format!("{:.3}", c.f1)));
    s.push_str(&row("Support", &|c| c.support.to_string()));
    let undefined: Vec<&str> = DamageLevel::ALL
        .iter()
        .zip(&r.per_class)
        .filter(|(_, c)| c.undefined_to_zero)
        .map(|(l, _)| l.title())
        .collect();
    if !undefined.is_empty() {
        let _ = writeln!(s, "undefined→0: {}", undefined.join(" "));
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "gt\\pred\t{}", names.join(" "));
    for (name, row) in names.iter().zip(&r.matrix.0) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "{name}\t{}", cells.join(" "));
    }
    s
}
