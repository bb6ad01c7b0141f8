//! Execution evaluation of a predictions file.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use super::generate::PredRecord;
use super::io;
use crate::error::Result;
use crate::exec::{self, ExecOptions, ExecOutcome};
use crate::schema::{self, Difficulty, QuestionRecord};

pub const EVAL_FILE: &str = "eval.csv";
pub const EVAL_TIMING_FILE: &str = "eval_timing.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierScore {
    pub difficulty: Difficulty,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub outcomes: Vec<ExecOutcome>,
    pub ex: f64,
    pub correct: usize,
    pub total: usize,
    pub tiers: Vec<TierScore>,
    pub ves: Option<f64>,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        let pct = |c: usize, t: usize| if t == 0 { 0.0 } else { 100.0 * c as f64 / t as f64 };
        let mut s = format!("EX {:.2}% ({}/{})", pct(self.correct, self.total), self.correct, self.total);
        for t in &self.tiers {
            s.push_str(&format!(" | {} {:.2}% ({}/{})", t.difficulty.as_str(), pct(t.correct, t.total), t.correct, t.total));
        }
        if let Some(v) = self.ves {
            s.push_str(&format!(" | VES {v:.2}"));
        }
        s
    }
}

/// Evaluates predictions against the questions' gold SQL. Questions without
/// a prediction count as empty predictions. Databases are processed in
/// parallel; efficiency timing then runs serially.
pub fn evaluate(
    preds: &[PredRecord],
    questions: &[QuestionRecord],
    db_root: &Path,
    opts: &ExecOptions,
    concurrency: usize,
) -> Result<EvalReport> {
    let pred: BTreeMap<i64, &str> = preds.iter().map(|p| (p.question_id, p.sql.as_str())).collect();
    let mut by_db: BTreeMap<&str, Vec<&QuestionRecord>> = BTreeMap::new();
    for q in questions {
        by_db.entry(q.db_id.as_str()).or_default().push(q);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| crate::Error::Eval(format!("cannot start workers: {e}")))?;
    let groups: Vec<(&str, &Vec<&QuestionRecord>)> = by_db.iter().map(|(k, v)| (*k, v)).collect();
    let ex_opts = ExecOptions { timing_runs: 0, ..*opts };
    let per_db: Vec<Result<Vec<ExecOutcome>>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(db_id, qs)| {
                let path = schema::database_file(&schema::database_dir(db_root, db_id))?;
                let conn = exec::open_database(&path)?;
                qs.iter()
                    .map(|q| {
                        let p = pred.get(&q.question_id).copied().unwrap_or("");
                        exec::execution_accuracy(&conn, q.question_id, p, &q.gold_sql, &ex_opts)
                    })
                    .collect()
            })
            .collect()
    });
    let mut outcomes = Vec::with_capacity(questions.len());
    for r in per_db {
        outcomes.extend(r?);
    }
    outcomes.sort_by_key(|o| o.question_id);

    let timed = opts.timing_runs > 0;
    if timed {
        let qmap: BTreeMap<i64, &QuestionRecord> = questions.iter().map(|q| (q.question_id, q)).collect();
        let mut conns = BTreeMap::new();
        for o in outcomes.iter_mut().filter(|o| o.correct) {
            let q = qmap[&o.question_id];
            if !conns.contains_key(q.db_id.as_str()) {
                let path = schema::database_file(&schema::database_dir(db_root, &q.db_id))?;
                conns.insert(q.db_id.as_str(), exec::open_database(&path)?);
            }
            let p = pred.get(&o.question_id).copied().unwrap_or("");
            exec::measure(&conns[q.db_id.as_str()], o, p, &q.gold_sql, opts);
        }
    }

    let correct = outcomes.iter().filter(|o| o.correct).count();
    let diff: BTreeMap<i64, Difficulty> = questions.iter().map(|q| (q.question_id, q.difficulty)).collect();
    let tiers = Difficulty::ALL
        .iter()
        .map(|d| {
            let of: Vec<&ExecOutcome> = outcomes.iter().filter(|o| diff[&o.question_id] == *d).collect();
            TierScore { difficulty: *d, correct: of.iter().filter(|o| o.correct).count(), total: of.len() }
        })
        .collect();
    Ok(EvalReport {
        ex: exec::ex_rate(&outcomes),
        correct,
        total: outcomes.len(),
        tiers,
        ves: timed.then(|| exec::valid_efficiency_score(&outcomes)),
        outcomes,
    })
}

pub fn exec_options(timeout_secs: f64, timing_runs: usize) -> ExecOptions {
    ExecOptions { timeout: Duration::from_secs_f64(timeout_secs), timing_runs }
}

#[derive(Serialize)]
struct EvalRow<'a> {
    question_id: i64,
    db_id: &'a str,
    difficulty: &'static str,
    correct: bool,
    pred_error: &'a str,
    gold_rows_hash: &'a str,
    pred_rows_hash: &'a str,
}

#[derive(Serialize)]
struct TimingRow {
    question_id: i64,
    gold_time: String,
    pred_time: String,
}

/// Writes `eval.csv` (deterministic) and the timing CSV beside it.
pub fn write_eval(path: &Path, timing_path: &Path, report: &EvalReport, questions: &[QuestionRecord]) -> Result<()> {
    let q: BTreeMap<i64, &QuestionRecord> = questions.iter().map(|q| (q.question_id, q)).collect();
    let rows: Vec<EvalRow> = report
        .outcomes
        .iter()
        .map(|o| EvalRow {
            question_id: o.question_id,
            db_id: &q[&o.question_id].db_id,
            difficulty: q[&o.question_id].difficulty.as_str(),
            correct: o.correct,
            pred_error: o.pred_error.as_deref().unwrap_or(""),
            gold_rows_hash: &o.gold_rows_hash,
            pred_rows_hash: &o.pred_rows_hash,
        })
        .collect();
    io::write_csv(path, &rows)?;
    let t = |x: Option<f64>| x.map(|v| format!("{v:.9}")).unwrap_or_default();
    let timing: Vec<TimingRow> = report
        .outcomes
        .iter()
        .map(|o| TimingRow { question_id: o.question_id, gold_time: t(o.gold_time), pred_time: t(o.pred_time) })
        .collect();
    io::write_csv(timing_path, &timing)
}
