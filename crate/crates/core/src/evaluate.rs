//! Strict entity-level scoring and the ablation summary table.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pipeline::AblationFlags;
use crate::tagging::{Scheme, Span};

/// Confusion counts with the derived ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        EvalReport {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // equal to the harmonic mean of precision and recall
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    /// Micro-averaged combination of two reports.
    pub fn merge(&self, other: &EvalReport) -> Self {
        Self::from_counts(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        )
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "tp={}\nfp={}\nfn={}\nprecision={:.6}\nrecall={:.6}\nf1={:.6}\n",
            self.true_positives, self.false_positives, self.false_negatives, self.precision, self.recall, self.f1
        )
    }

    /// Aligned human-readable summary.
    pub fn to_text(&self) -> String {
        format!(
            "{:<10}{:>8}\n{:<10}{:>8}\n{:<10}{:>8}\n{:<10}{:>7.2}%\n{:<10}{:>7.2}%\n{:<10}{:>7.2}%\n",
            "TP",
            self.true_positives,
            "FP",
            self.false_positives,
            "FN",
            self.false_negatives,
            "precision",
            100.0 * self.precision,
            "recall",
            100.0 * self.recall,
            "F1",
            100.0 * self.f1
        )
    }
}

/// Scores predicted spans against gold spans, sentence by sentence. A
/// prediction counts only when start, end and type all match.
pub fn score_entities(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let g: BTreeSet<&Span> = g.iter().collect();
        let p: BTreeSet<&Span> = p.iter().collect();
        let hit = g.intersection(&p).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    Ok(EvalReport::from_counts(tp, fp, fn_))
}

/// One configuration's result in an ablation study.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub dataset: String,
    pub scheme: Scheme,
    pub flags: AblationFlags,
    pub report: EvalReport,
}

fn mark(b: bool) -> &'static str {
    if b {
        "✓"
    } else {
        "x"
    }
}

/// Formats rows grouped by dataset (first-seen order), then scheme, then
/// ascending flag tuple.
pub fn ablation_report(rows: &[AblationRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut sorted: Vec<&AblationRow> = rows.iter().collect();
    sorted.sort_by_key(|r| {
        (
            datasets.iter().position(|d| *d == r.dataset).expect("collected"),
            r.scheme,
            r.flags,
        )
    });
    let width = datasets.iter().map(|d| d.chars().count()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<6}  V1  V2  V3  V4  {:>10}",
        "Dataset", "SR", "f1-measure"
    );
    for r in sorted {
        let f = r.flags.as_array();
        let _ = writeln!(
            out,
            "{:<width$}  {:<6}  {:<2}  {:<2}  {:<2}  {:<2}  {:>9.2}%",
            r.dataset,
            r.scheme.to_string(),
            mark(f[0]),
            mark(f[1]),
            mark(f[2]),
            mark(f[3]),
            100.0 * r.report.f1
        );
    }
    out
}
