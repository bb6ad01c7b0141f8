//! Gold reference extraction and SLAM scoring of link files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::focus::{Failure, LinkRecord};
use super::io;
use super::Pipeline;
use crate::error::{Error, Result};
use crate::schema::ColumnRef;
use crate::slam::{aggregate, score_columns, score_tables, QuestionScore, SlamReport};
use crate::sql::extract_refs;

pub const GOLD_FILE: &str = "gold.jsonl";
pub const GOLD_FAILURES_FILE: &str = "gold_failures.jsonl";
pub const SLAM_FILE: &str = "slam.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub question_id: i64,
    pub db_id: String,
    pub tables: Vec<String>,
    pub columns: Vec<ColumnRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldSummary {
    pub extracted: usize,
    pub failures: Vec<Failure>,
}

impl Pipeline {
    /// Extracts gold table and column sets for every question and writes
    /// them to `out` (default `<output_dir>/gold.jsonl`).
    pub fn extract_gold(&self, out: Option<&Path>) -> Result<GoldSummary> {
        let questions = self.questions()?;
        let schemas = self.load_schemas(questions.iter().map(|q| q.db_id.as_str()), false)?;
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for q in &questions {
            match extract_refs(&q.gold_sql, &schemas[&q.db_id]) {
                Ok(r) => records.push(GoldRecord {
                    question_id: q.question_id,
                    db_id: q.db_id.clone(),
                    tables: r.tables.into_iter().collect(),
                    columns: r.columns.into_iter().collect(),
                }),
                Err(e) => {
                    log::warn!("question {}: gold extraction failed: {e}", q.question_id);
                    failures.push(Failure { question_id: q.question_id, error: e.to_string() });
                }
            }
        }
        let default = self.output_path(GOLD_FILE);
        let path = out.unwrap_or(&default);
        io::write_jsonl(path, &records)?;
        let fail_path = path.with_file_name(GOLD_FAILURES_FILE);
        io::write_jsonl(&fail_path, &failures)?;
        Ok(GoldSummary { extracted: records.len(), failures })
    }
}

pub fn load_gold(path: &Path) -> Result<BTreeMap<i64, GoldRecord>> {
    super::require_file(path, "run `dfin extract-gold` first")?;
    Ok(io::read_jsonl::<GoldRecord>(path, false)?.into_iter().map(|g| (g.question_id, g)).collect())
}

pub fn load_links(path: &Path) -> Result<Vec<LinkRecord>> {
    super::require_file(path, "run `dfin focus` first")?;
    let mut v = io::read_jsonl::<LinkRecord>(path, false)?;
    v.sort_by_key(|l| l.question_id);
    Ok(v)
}

/// Scores each link against its gold record. Links without gold are
/// skipped with a warning.
pub fn score_links(links: &[LinkRecord], gold: &BTreeMap<i64, GoldRecord>) -> Result<SlamReport> {
    let mut scores = Vec::new();
    for l in links {
        let Some(g) = gold.get(&l.question_id) else {
            log::warn!("question {}: no gold reference; not scored", l.question_id);
            continue;
        };
        scores.push(QuestionScore {
            question_id: l.question_id,
            tables: score_tables(&l.tables, &g.tables),
            columns: score_columns(&l.columns, &g.columns),
        });
    }
    if scores.is_empty() {
        return Err(Error::Eval("no link record has a gold reference".into()));
    }
    let mode = links.first().map(|l| l.mode).filter(|m| links.iter().all(|l| l.mode == *m));
    let k = links.first().map(|l| l.k).filter(|k| links.iter().all(|l| l.k == *k));
    aggregate(scores, mode, k)
}

#[derive(Serialize)]
struct SlamRow {
    question_id: i64,
    table_p: String,
    table_r: String,
    table_f1: String,
    fully_correct: bool,
    col_r: String,
    col_p: String,
    missed_tables: String,
    extra_tables: String,
    missed_columns: String,
}

pub fn write_slam_csv(path: &Path, report: &SlamReport) -> Result<()> {
    let rows: Vec<SlamRow> = report
        .per_question
        .iter()
        .map(|s| SlamRow {
            question_id: s.question_id,
            table_p: io::fmt6(s.tables.precision),
            table_r: io::fmt6(s.tables.recall),
            table_f1: io::fmt6(s.tables.f1),
            fully_correct: s.tables.fully_correct,
            col_r: io::fmt6(s.columns.recall),
            col_p: io::fmt6(s.columns.precision),
            missed_tables: s.tables.missed.join(";"),
            extra_tables: s.tables.extra.join(";"),
            missed_columns: s.columns.missed.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
        })
        .collect();
    io::write_csv(path, &rows)
}

/// One-line aggregate for terminals and logs.
pub fn slam_summary_line(r: &SlamReport) -> String {
    format!(
        "tables: P {:.3} R {:.3} F1 {:.3} fully-correct {:.1}% | columns: R {:.3} P {:.3} | n={} empty={}",
        r.table_avg_precision,
        r.table_avg_recall,
        r.table_avg_f1,
        100.0 * r.fully_correct_rate,
        r.column_avg_recall,
        r.column_avg_precision,
        r.per_question.len(),
        r.empty_predictions
    )
}
