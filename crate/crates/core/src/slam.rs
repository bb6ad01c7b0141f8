//! Schema linking accuracy: precision, recall and F1 of predicted tables and
//! columns against the gold references.
//!
//! Identifiers are compared case-insensitively. An empty table prediction
//! scores precision 1 and recall 0 and is flagged. Aggregates are unweighted
//! means over questions.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ident;
use crate::schema::ColumnRef;
use crate::table_linker::LinkMode;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub missed: Vec<String>,
    pub extra: Vec<String>,
    pub fully_correct: bool,
    pub empty_prediction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnScore {
    pub recall: f64,
    pub precision: f64,
    pub missed: Vec<ColumnRef>,
    /// Number of distinct predicted columns.
    pub considered_count: usize,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Keyed by normalized name; the first spelling seen is kept for reporting.
fn table_set(names: &[String]) -> Vec<(String, String)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in names {
        let k = ident::normalize(n);
        if seen.insert(k.clone()) {
            out.push((k, n.clone()));
        }
    }
    out.sort();
    out
}

pub fn score_tables(pred: &[String], gold: &[String]) -> TableScore {
    let pred = table_set(pred);
    let gold = table_set(gold);
    let in_pred = |k: &str| pred.iter().any(|(p, _)| p == k);
    let in_gold = |k: &str| gold.iter().any(|(g, _)| g == k);
    let hits = pred.iter().filter(|(k, _)| in_gold(k)).count();
    let missed: Vec<String> = gold.iter().filter(|(k, _)| !in_pred(k)).map(|(_, n)| n.clone()).collect();
    let extra: Vec<String> = pred.iter().filter(|(k, _)| !in_gold(k)).map(|(_, n)| n.clone()).collect();
    let precision = if pred.is_empty() { 1.0 } else { hits as f64 / pred.len() as f64 };
    let recall = if gold.is_empty() { 1.0 } else { hits as f64 / gold.len() as f64 };
    TableScore {
        precision,
        recall,
        f1: f1(precision, recall),
        fully_correct: missed.is_empty() && extra.is_empty(),
        missed,
        extra,
        empty_prediction: pred.is_empty(),
    }
}

fn column_set(cols: &[ColumnRef]) -> Vec<((String, String), ColumnRef)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for c in cols {
        if seen.insert(c.key()) {
            out.push((c.key(), c.clone()));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub fn score_columns(pred: &[ColumnRef], gold: &[ColumnRef]) -> ColumnScore {
    let pred = column_set(pred);
    let gold = column_set(gold);
    let pred_keys: BTreeSet<_> = pred.iter().map(|(k, _)| k.clone()).collect();
    let gold_keys: BTreeSet<_> = gold.iter().map(|(k, _)| k.clone()).collect();
    let hits = pred_keys.intersection(&gold_keys).count();
    ColumnScore {
        recall: if gold.is_empty() { 1.0 } else { hits as f64 / gold.len() as f64 },
        precision: if pred.is_empty() { 1.0 } else { hits as f64 / pred.len() as f64 },
        missed: gold.iter().filter(|(k, _)| !pred_keys.contains(k)).map(|(_, c)| c.clone()).collect(),
        considered_count: pred.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionScore {
    pub question_id: i64,
    pub tables: TableScore,
    pub columns: ColumnScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlamReport {
    pub per_question: Vec<QuestionScore>,
    pub table_avg_precision: f64,
    pub table_avg_recall: f64,
    pub table_avg_f1: f64,
    pub fully_correct_rate: f64,
    pub column_avg_recall: f64,
    pub column_avg_precision: f64,
    pub empty_predictions: usize,
    pub mode: Option<LinkMode>,
    pub k: Option<usize>,
}

/// Unweighted means over `scores`, which must be non-empty.
pub fn aggregate(scores: Vec<QuestionScore>, mode: Option<LinkMode>, k: Option<usize>) -> Result<SlamReport> {
    if scores.is_empty() {
        return Err(Error::Eval("cannot aggregate an empty score list".into()));
    }
    let n = scores.len() as f64;
    let mean = |f: &dyn Fn(&QuestionScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(SlamReport {
        table_avg_precision: mean(&|s| s.tables.precision),
        table_avg_recall: mean(&|s| s.tables.recall),
        table_avg_f1: mean(&|s| s.tables.f1),
        fully_correct_rate: mean(&|s| if s.tables.fully_correct { 1.0 } else { 0.0 }),
        column_avg_recall: mean(&|s| s.columns.recall),
        column_avg_precision: mean(&|s| s.columns.precision),
        empty_predictions: scores.iter().filter(|s| s.tables.empty_prediction).count(),
        per_question: scores,
        mode,
        k,
    })
}
