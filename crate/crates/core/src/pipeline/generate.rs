//! Downstream SQL generation from focused contexts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::config::{GeneratorKind, Stage};
use super::focus::{ContextRecord, Failure, CONTEXTS_FILE};
use super::io;
use super::Pipeline;
use crate::error::{Error, Result};
use crate::provider::CompletionProvider;
use crate::schema::QuestionRecord;

pub const PRED_FILE: &str = "pred.jsonl";
pub const GENERATION_TRANSCRIPTS_FILE: &str = "generation_transcripts.jsonl";
pub const GENERATION_REQUESTS_FILE: &str = "generation_requests.jsonl";

const INSTRUCTION: &str = "Generate a SQLite query that answers the question using the schema below. \
Use only the tables and columns shown. Reply with exactly one SQL statement inside a ```sql code block.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredRecord {
    pub question_id: i64,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTranscript {
    pub question_id: i64,
    pub prompt: String,
    pub raw_response: String,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub question_id: i64,
    pub db_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub generator: GeneratorKind,
    pub predictions: usize,
    pub empty_predictions: usize,
    pub failures: Vec<Failure>,
    /// Set when the external generator has not produced predictions yet.
    pub awaiting_external: bool,
}

/// The baseline generation prompt. The hint line is present only when there
/// is evidence.
pub fn generation_prompt(context: &str, question: &str, evidence: Option<&str>) -> String {
    let mut p = format!("{INSTRUCTION}\n\n{context}\n\nQuestion: {question}\n");
    if let Some(e) = evidence.map(str::trim).filter(|e| !e.is_empty()) {
        p.push_str(&format!("Hint: {e}\n"));
    }
    p.push_str("\nSQL:");
    p
}

fn fence_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```").unwrap())
}

fn clean(sql: &str) -> String {
    sql.trim().trim_end_matches(';').trim_end().to_string()
}

/// Pulls the SQL out of a model reply: the first fenced code block, else the
/// last line that starts like a query. `None` when neither exists.
pub fn extract_sql(response: &str) -> Option<String> {
    if let Some(c) = fence_regex().captures(response) {
        let sql = clean(&c[1]);
        if !sql.is_empty() {
            return Some(sql);
        }
    }
    response
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| {
            let u = l.to_ascii_uppercase();
            u.starts_with("SELECT ") || u.starts_with("WITH ") || u == "SELECT"
        })
        .map(clean)
        .filter(|s| !s.is_empty())
}

impl Pipeline {
    /// Produces `pred.jsonl` from the focus outputs.
    pub fn run_generate(&self) -> Result<GenerateSummary> {
        let contexts_path = self.output_path(CONTEXTS_FILE);
        super::require_file(&contexts_path, "run `dfin focus` first")?;
        let contexts: BTreeMap<i64, ContextRecord> = io::read_jsonl::<ContextRecord>(&contexts_path, false)?
            .into_iter()
            .map(|c| (c.question_id, c))
            .collect();
        let questions = self.questions()?;
        let questions: Vec<QuestionRecord> =
            questions.into_iter().filter(|q| contexts.contains_key(&q.question_id)).collect();
        match self.config.generator {
            GeneratorKind::BaselinePrompt => self.generate_baseline(&questions, &contexts),
            GeneratorKind::ExternalStub => self.generate_external(&questions, &contexts),
        }
    }

    fn generate_baseline(
        &self,
        questions: &[QuestionRecord],
        contexts: &BTreeMap<i64, ContextRecord>,
    ) -> Result<GenerateSummary> {
        let llm = self.llm(Stage::Generate, &self.config);
        let results = Mutex::new(Vec::new());
        let failures = Mutex::new(Vec::new());
        let consecutive = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let limit = self.config.max_consecutive_failures;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.concurrency)
            .build()
            .map_err(|e| Error::Pipeline(format!("cannot start workers: {e}")))?;
        pool.install(|| {
            questions.par_iter().for_each(|q| {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let prompt = generation_prompt(&contexts[&q.question_id].text, &q.question, q.evidence.as_deref());
                match llm.complete(&prompt) {
                    Ok(raw) => {
                        consecutive.store(0, Ordering::SeqCst);
                        let sql = extract_sql(&raw).unwrap_or_else(|| {
                            log::warn!("question {}: no SQL found in the response", q.question_id);
                            String::new()
                        });
                        results.lock().unwrap().push(GenerationTranscript { question_id: q.question_id, prompt, raw_response: raw, sql });
                    }
                    Err(e) => {
                        log::error!("question {}: generation failed: {e}", q.question_id);
                        failures.lock().unwrap().push(Failure { question_id: q.question_id, error: e.to_string() });
                        if consecutive.fetch_add(1, Ordering::SeqCst) + 1 >= limit {
                            abort.store(true, Ordering::SeqCst);
                        }
                    }
                }
            })
        });
        let mut transcripts = results.into_inner().unwrap();
        transcripts.sort_by_key(|t| t.question_id);
        let mut failures = failures.into_inner().unwrap();
        failures.sort_by_key(|f| f.question_id);
        if abort.load(Ordering::SeqCst) {
            return Err(Error::Pipeline(format!("generation aborted after {limit} consecutive provider failures")));
        }
        let by_id: BTreeMap<i64, String> = transcripts.iter().map(|t| (t.question_id, t.sql.clone())).collect();
        // Failed questions still get a (wrong) empty prediction.
        let preds: Vec<PredRecord> = questions
            .iter()
            .map(|q| PredRecord { question_id: q.question_id, sql: by_id.get(&q.question_id).cloned().unwrap_or_default() })
            .collect();
        io::write_jsonl(&self.output_path(GENERATION_TRANSCRIPTS_FILE), &transcripts)?;
        io::write_jsonl(&self.output_path(PRED_FILE), &preds)?;
        Ok(GenerateSummary {
            generator: GeneratorKind::BaselinePrompt,
            predictions: preds.len(),
            empty_predictions: preds.iter().filter(|p| p.sql.is_empty()).count(),
            failures,
            awaiting_external: false,
        })
    }

    fn generate_external(
        &self,
        questions: &[QuestionRecord],
        contexts: &BTreeMap<i64, ContextRecord>,
    ) -> Result<GenerateSummary> {
        let Some(pred_path) = self.config.external_predictions.clone() else {
            let requests: Vec<GenerationRequest> = questions
                .iter()
                .map(|q| GenerationRequest {
                    question_id: q.question_id,
                    db_id: q.db_id.clone(),
                    prompt: generation_prompt(&contexts[&q.question_id].text, &q.question, q.evidence.as_deref()),
                })
                .collect();
            let path = self.output_path(GENERATION_REQUESTS_FILE);
            io::write_jsonl(&path, &requests)?;
            log::info!("wrote {} generation requests to {}; rerun with external_predictions set", requests.len(), path.display());
            return Ok(GenerateSummary {
                generator: GeneratorKind::ExternalStub,
                predictions: 0,
                empty_predictions: 0,
                failures: vec![],
                awaiting_external: true,
            });
        };
        let external = read_predictions(&pred_path)?;
        let preds: Vec<PredRecord> = questions
            .iter()
            .map(|q| {
                let sql = external.get(&q.question_id).cloned().unwrap_or_else(|| {
                    log::warn!("question {}: no external prediction", q.question_id);
                    String::new()
                });
                PredRecord { question_id: q.question_id, sql }
            })
            .collect();
        io::write_jsonl(&self.output_path(PRED_FILE), &preds)?;
        Ok(GenerateSummary {
            generator: GeneratorKind::ExternalStub,
            predictions: preds.len(),
            empty_predictions: preds.iter().filter(|p| p.sql.is_empty()).count(),
            failures: vec![],
            awaiting_external: false,
        })
    }
}

/// Reads predictions as JSONL `{question_id, sql}` records, or as a BIRD
/// style JSON object mapping ids to `"SQL\t----- bird -----\tdb_id"`.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<i64, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(&text) {
        let mut out = BTreeMap::new();
        for (k, v) in map {
            let id: i64 = k
                .trim()
                .parse()
                .map_err(|_| Error::Pipeline(format!("{}: key {k:?} is not a question id", path.display())))?;
            let s = v
                .as_str()
                .ok_or_else(|| Error::Pipeline(format!("{}: value for {k} is not a string", path.display())))?;
            let sql = s.split("\t----- bird -----").next().unwrap_or("");
            out.insert(id, clean(sql));
        }
        return Ok(out);
    }
    Ok(io::read_jsonl::<PredRecord>(path, false)?.into_iter().map(|p| (p.question_id, p.sql)).collect())
}

/// Reads `pred.jsonl`.
pub fn load_predictions(path: &Path) -> Result<Vec<PredRecord>> {
    let mut v = io::read_jsonl::<PredRecord>(path, false)?;
    v.sort_by_key(|p| p.question_id);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_block_wins() {
        assert_eq!(extract_sql("```sql\nSELECT 1\n```").as_deref(), Some("SELECT 1"));
        assert_eq!(extract_sql("Sure:\n```\nSELECT a\nFROM t;\n```\nthen ```sql\nSELECT 2\n```").as_deref(), Some("SELECT a\nFROM t"));
    }

    #[test]
    fn falls_back_to_last_query_line() {
        assert_eq!(extract_sql("Thinking...\nSELECT 1;\nFinal: \nselect 2;").as_deref(), Some("select 2"));
        assert_eq!(extract_sql("WITH x AS (SELECT 1) SELECT * FROM x").as_deref(), Some("WITH x AS (SELECT 1) SELECT * FROM x"));
        assert_eq!(extract_sql("I do not know."), None);
    }

    #[test]
    fn prompt_hint_line() {
        let p = generation_prompt("CTX", "Q?", Some("E"));
        assert!(p.contains("CTX\n\nQuestion: Q?\nHint: E\n"));
        assert!(!generation_prompt("CTX", "Q?", None).contains("Hint"));
        assert!(p.starts_with("Generate a SQLite query"));
    }

    #[test]
    fn bird_style_prediction_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        std::fs::write(&p, r#"{"0": "SELECT 1;\t----- bird -----\tdb", "3": "SELECT 2"}"#).unwrap();
        let m = read_predictions(&p).unwrap();
        assert_eq!(m[&0], "SELECT 1");
        assert_eq!(m[&3], "SELECT 2");
    }
}
