//! Execution accuracy (EX) and valid efficiency score (VES).
//!
//! Results compare as multisets of rows. Comparison becomes order-sensitive
//! only when both queries end in an outermost `ORDER BY`, which keeps the
//! relation symmetric. Reals match within a relative tolerance of 1e-6 and
//! integer-valued reals equal the corresponding integers.

use std::cmp::Ordering;
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::provider::sha256_hex;
use crate::sql::parse_query;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_TIMING_RUNS: usize = 5;
/// Floor applied to measured times before taking VES ratios.
pub const TIME_FLOOR: f64 = 1e-6;
const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Value {
    fn from_ref(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Int(i),
            ValueRef::Real(r) => Value::Real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::Blob(b.to_vec()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
            Value::Blob(_) => 3,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Canonical text used for hashing; integer-valued reals print as integers.
    fn canonical(&self) -> String {
        match self {
            Value::Null => "N".into(),
            Value::Int(i) => format!("I{i}"),
            Value::Real(r) if r.fract() == 0.0 && r.abs() < 9.0e15 => format!("I{}", *r as i64),
            Value::Real(r) => format!("R{r:.9e}"),
            Value::Text(t) => format!("T{t}"),
            Value::Blob(b) => format!("B{}", hex::encode(b)),
        }
    }
}

/// Total order used to sort rows before multiset comparison.
fn value_order(a: &Value, b: &Value) -> Ordering {
    a.rank().cmp(&b.rank()).then_with(|| match (a, b) {
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        (Value::Blob(x), Value::Blob(y)) => x.cmp(y),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn row_order(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match value_order(x, y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Text(x), Value::Text(y)) => x == y,
        (Value::Blob(x), Value::Blob(y)) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x == y || (x - y).abs() <= REL_TOL * x.abs().max(y.abs()),
            _ => false,
        },
    }
}

fn rows_equal(a: &[Vec<Value>], b: &[Vec<Value>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(u, v)| values_equal(u, v)))
}

/// Compares two result sets, as lists when `ordered`, else as multisets.
pub fn results_match(a: &[Vec<Value>], b: &[Vec<Value>], ordered: bool) -> bool {
    if a.len() != b.len() {
        return false;
    }
    if ordered {
        return rows_equal(a, b);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| row_order(x, y));
    b.sort_by(|x, y| row_order(x, y));
    rows_equal(&a, &b)
}

/// Hash of a result set; order-insensitive unless `ordered`.
pub fn rows_hash(rows: &[Vec<Value>], ordered: bool) -> String {
    let mut lines: Vec<String> = rows
        .iter()
        .map(|r| r.iter().map(Value::canonical).collect::<Vec<_>>().join("\u{1f}"))
        .collect();
    if !ordered {
        lines.sort();
    }
    let parts: Vec<&[u8]> = lines.iter().map(|l| l.as_bytes()).collect();
    sha256_hex(&parts)[..16].to_string()
}

/// True when the statement's outermost query carries an `ORDER BY`.
pub fn has_outer_order_by(sql: &str) -> bool {
    parse_query(sql).map(|q| !q.order_by.is_empty()).unwrap_or(false)
}

/// Opens a database file read-only.
pub fn open_database(path: &Path) -> Result<Connection> {
    if !path.is_file() {
        return Err(Error::Eval(format!("database file {} does not exist", path.display())));
    }
    Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(|e| Error::sqlite(path, e))
}

/// Runs `sql` and collects every row. Errors (including the timeout) are
/// returned as text.
pub fn run_query(conn: &Connection, sql: &str, timeout: Duration) -> std::result::Result<(Vec<Vec<Value>>, Duration), String> {
    let start = Instant::now();
    conn.progress_handler(1000, Some(move || start.elapsed() > timeout));
    let result = (|| {
        let mut stmt = conn.prepare(sql)?;
        let n = stmt.column_count();
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let mut vals = Vec::with_capacity(n);
            for i in 0..n {
                vals.push(Value::from_ref(row.get_ref(i)?));
            }
            out.push(vals);
        }
        Ok::<_, rusqlite::Error>(out)
    })();
    let elapsed = start.elapsed();
    conn.progress_handler(0, None::<fn() -> bool>);
    match result {
        Ok(rows) => Ok((rows, elapsed)),
        Err(rusqlite::Error::SqliteFailure(e, _)) if e.code == rusqlite::ErrorCode::OperationInterrupted => {
            Err(format!("timed out after {:.1}s", timeout.as_secs_f64()))
        }
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    pub timeout: Duration,
    /// Executions per query for VES timing; the first is a discarded warm-up.
    /// Zero skips timing.
    pub timing_runs: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self { timeout: DEFAULT_TIMEOUT, timing_runs: DEFAULT_TIMING_RUNS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecOutcome {
    pub question_id: i64,
    pub correct: bool,
    pub pred_error: Option<String>,
    pub gold_rows_hash: String,
    pub pred_rows_hash: String,
    /// Median seconds over the timed runs.
    pub gold_time: Option<f64>,
    pub pred_time: Option<f64>,
}

/// Compares the results of `pred` and `gold` on `conn`.
///
/// A failing gold query is an error (the fixture is broken); a failing or
/// timed-out prediction is simply incorrect.
pub fn execution_accuracy(
    conn: &Connection,
    question_id: i64,
    pred: &str,
    gold: &str,
    opts: &ExecOptions,
) -> Result<ExecOutcome> {
    let (gold_rows, _) = run_query(conn, gold, opts.timeout)
        .map_err(|e| Error::Eval(format!("question {question_id}: gold query failed: {e}")))?;
    let ordered = has_outer_order_by(gold) && has_outer_order_by(pred);
    let gold_rows_hash = rows_hash(&gold_rows, ordered);
    if pred.trim().is_empty() {
        return Ok(ExecOutcome {
            question_id,
            correct: false,
            pred_error: Some("empty prediction".into()),
            gold_rows_hash,
            pred_rows_hash: String::new(),
            gold_time: None,
            pred_time: None,
        });
    }
    let (correct, pred_error, pred_rows_hash) = match run_query(conn, pred, opts.timeout) {
        Ok((rows, _)) => (results_match(&gold_rows, &rows, ordered), None, rows_hash(&rows, ordered)),
        Err(e) => (false, Some(e), String::new()),
    };
    Ok(ExecOutcome { question_id, correct, pred_error, gold_rows_hash, pred_rows_hash, gold_time: None, pred_time: None })
}

/// Median execution time of `sql` over `runs` executions, discarding the
/// first when more than one run is made.
pub fn time_query(conn: &Connection, sql: &str, runs: usize, timeout: Duration) -> std::result::Result<f64, String> {
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let (_, t) = run_query(conn, sql, timeout)?;
        times.push(t.as_secs_f64());
    }
    if times.len() > 1 {
        times.remove(0);
    }
    Ok(median(&mut times))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Fills in the timing fields of a correct outcome.
pub fn measure(conn: &Connection, outcome: &mut ExecOutcome, pred: &str, gold: &str, opts: &ExecOptions) {
    if !outcome.correct || opts.timing_runs == 0 {
        return;
    }
    match (
        time_query(conn, gold, opts.timing_runs, opts.timeout),
        time_query(conn, pred, opts.timing_runs, opts.timeout),
    ) {
        (Ok(g), Ok(p)) => {
            outcome.gold_time = Some(g);
            outcome.pred_time = Some(p);
        }
        (g, p) => log::warn!(
            "question {}: timing failed (gold: {:?}, pred: {:?})",
            outcome.question_id,
            g.err(),
            p.err()
        ),
    }
}

/// `100 * mean(correct ? sqrt(gold_time / pred_time) : 0)`. Times below the
/// 1 microsecond floor are clamped. Correct outcomes without timings count
/// with ratio 1.
pub fn valid_efficiency_score(outcomes: &[ExecOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let clamp = |t: f64, qid: i64| {
        if t < TIME_FLOOR {
            log::warn!("question {qid}: measured time {t} clamped to {TIME_FLOOR}");
            TIME_FLOOR
        } else {
            t
        }
    };
    let total: f64 = outcomes
        .iter()
        .map(|o| {
            if !o.correct {
                return 0.0;
            }
            match (o.gold_time, o.pred_time) {
                (Some(g), Some(p)) => (clamp(g, o.question_id) / clamp(p, o.question_id)).sqrt(),
                _ => 1.0,
            }
        })
        .sum();
    100.0 * total / outcomes.len() as f64
}

/// Fraction of correct outcomes.
pub fn ex_rate(outcomes: &[ExecOutcome]) -> f64 {
    if outcomes.is_empty() {
        0.0
    } else {
        outcomes.iter().filter(|o| o.correct).count() as f64 / outcomes.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db() -> Connection {
        let c = Connection::open_in_memory().unwrap();
        c.execute_batch(
            "CREATE TABLE t (a INTEGER, b REAL, c TEXT);
             INSERT INTO t VALUES (1, 1.0, 'x'), (2, 2.5, 'y'), (3, NULL, 'z');",
        )
        .unwrap();
        c
    }

    fn outcome(correct: bool, g: f64, p: f64) -> ExecOutcome {
        ExecOutcome {
            question_id: 0,
            correct,
            pred_error: None,
            gold_rows_hash: String::new(),
            pred_rows_hash: String::new(),
            gold_time: Some(g),
            pred_time: Some(p),
        }
    }

    #[test]
    fn reflexive_and_order_insensitive() {
        let c = db();
        let o = ExecOptions::default();
        assert!(execution_accuracy(&c, 0, "SELECT a FROM t", "SELECT a FROM t", &o).unwrap().correct);
        assert!(execution_accuracy(&c, 0, "SELECT a FROM t ORDER BY a DESC", "SELECT a FROM t", &o).unwrap().correct);
        assert!(!execution_accuracy(&c, 0, "SELECT a FROM t ORDER BY a DESC", "SELECT a FROM t ORDER BY a", &o)
            .unwrap()
            .correct);
    }

    #[test]
    fn prediction_errors_are_incorrect() {
        let c = db();
        let r = execution_accuracy(&c, 0, "SELEC a FROM t", "SELECT a FROM t", &ExecOptions::default()).unwrap();
        assert!(!r.correct);
        assert!(r.pred_error.is_some());
        assert!(execution_accuracy(&c, 0, "SELECT a FROM t", "SELECT nope FROM t", &ExecOptions::default()).is_err());
    }

    #[test]
    fn numeric_normalization() {
        assert!(values_equal(&Value::Int(2), &Value::Real(2.0)));
        assert!(values_equal(&Value::Real(1.0), &Value::Real(1.0 + 1e-9)));
        assert!(!values_equal(&Value::Real(1.0), &Value::Real(1.001)));
        assert!(!values_equal(&Value::Text("1".into()), &Value::Int(1)));
        assert!(values_equal(&Value::Null, &Value::Null));
    }

    #[test]
    fn multiset_not_set() {
        let one = vec![vec![Value::Int(1)]];
        let two = vec![vec![Value::Int(1)], vec![Value::Int(1)]];
        assert!(!results_match(&one, &two, false));
    }

    #[test]
    fn timeout_interrupts() {
        let c = db();
        let slow = "WITH RECURSIVE r(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM r) SELECT count(*) FROM r";
        let err = run_query(&c, slow, Duration::from_millis(50)).unwrap_err();
        assert!(err.contains("timed out"), "{err}");
    }

    #[test]
    fn ves_examples() {
        assert_eq!(valid_efficiency_score(&[outcome(false, 1.0, 1.0)]), 0.0);
        assert_eq!(valid_efficiency_score(&[outcome(true, 0.3, 0.3), outcome(true, 2.0, 2.0)]), 100.0);
        let v = valid_efficiency_score(&[outcome(true, 4.0, 1.0), outcome(false, 1.0, 1.0)]);
        assert!((v - 100.0).abs() < 1e-12);
    }
}
