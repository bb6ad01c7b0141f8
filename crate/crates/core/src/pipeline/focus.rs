//! The focus phase: table linking, question embedding, column linking and
//! context rendering for every question.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Stage};
use super::io::{self, JsonlAppender};
use super::Pipeline;
use crate::column_linker::{link_columns, SchemaLink};
use crate::context::{build_focused_context, ApproxTokenizer, ContextOptions, FocusedContext, Tokenizer};
use crate::embedding::{embed_question, EmbeddingIndex};
use crate::error::{Error, Result};
use crate::provider::{CompletionProvider, EmbeddingProvider};
use crate::schema::{ColumnRef, DatabaseSchema, QuestionRecord};
use crate::table_linker::{build_table_prompt, finish_link, LinkMode, TableLinkResult};

pub const LINKS_FILE: &str = "links.jsonl";
pub const CONTEXTS_FILE: &str = "contexts.jsonl";
pub const TRANSCRIPTS_FILE: &str = "table_link_transcripts.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const TOKEN_SUMMARY_FILE: &str = "token_summary.csv";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub question_id: i64,
    pub db_id: String,
    pub tables: Vec<String>,
    pub columns: Vec<ColumnRef>,
    pub forced: Vec<ColumnRef>,
    pub fallback_used: bool,
    pub mode: LinkMode,
    pub k: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub question_id: i64,
    pub db_id: String,
    pub text: String,
    pub token_count: usize,
    pub full_schema_token_count: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub question_id: i64,
    pub prompt: String,
    pub raw_response: String,
    pub parsed_tables: Vec<String>,
    pub dropped: Vec<String>,
    pub fallback_used: bool,
    pub config_hash: String,
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub question_id: i64,
    pub table_link_ms: f64,
    pub embed_ms: f64,
    pub column_link_ms: f64,
    pub context_ms: f64,
}

/// Everything the focus phase produces for one question.
#[derive(Debug, Clone)]
pub struct FocusResult {
    pub link: LinkRecord,
    pub context: ContextRecord,
    pub transcript: TranscriptRecord,
    pub timing: TimingRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub question_id: i64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusSummary {
    pub config_hash: String,
    pub mode: LinkMode,
    pub k: usize,
    pub questions: usize,
    pub completed: usize,
    pub resumed: usize,
    pub fallbacks: usize,
    pub failures: Vec<Failure>,
    pub aborted: bool,
    pub mean_context_tokens: f64,
    pub mean_full_schema_tokens: f64,
    /// Mean of per-question focused / full token ratios.
    pub mean_reduction_ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FocusOptions {
    /// Keep completed records from a previous run with the same config hash.
    pub resume: bool,
    /// Restrict the run to these question ids.
    pub only: Option<BTreeSet<i64>>,
}

/// Memo of table-link results shared across configurations that differ only
/// in `k`.
pub type TableLinkMemo = Mutex<HashMap<(LinkMode, i64), TableLinkResult>>;

/// Databases and indexes needed by a set of questions.
pub struct Resources {
    pub schemas: BTreeMap<String, DatabaseSchema>,
    pub indexes: BTreeMap<String, EmbeddingIndex>,
}

impl Resources {
    pub fn load(p: &Pipeline, questions: &[QuestionRecord]) -> Result<Self> {
        let schemas = p.load_schemas(questions.iter().map(|q| q.db_id.as_str()), true)?;
        let mut indexes = BTreeMap::new();
        for (id, s) in &schemas {
            indexes.insert(id.clone(), p.load_index(s)?);
        }
        Ok(Self { schemas, indexes })
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the focus phase for a single question.
#[allow(clippy::too_many_arguments)]
pub fn focus_question(
    schema: &DatabaseSchema,
    index: &EmbeddingIndex,
    q: &QuestionRecord,
    cfg: &PipelineConfig,
    llm: &dyn CompletionProvider,
    embedder: &dyn EmbeddingProvider,
    tokenizer: &dyn Tokenizer,
    memo: Option<&TableLinkMemo>,
) -> Result<FocusResult> {
    let config_hash = cfg.config_hash();
    let evidence = q.evidence.as_deref();

    let t = Instant::now();
    let cached = memo.and_then(|m| m.lock().unwrap().get(&(cfg.mode, q.question_id)).cloned());
    let tl = match cached {
        Some(r) => r,
        None => {
            let prompt = build_table_prompt(schema, &q.question, evidence, cfg.mode)?;
            let raw = llm.complete(&prompt)?;
            let r = finish_link(schema, prompt, raw, tokenizer);
            if let Some(m) = memo {
                m.lock().unwrap().insert((cfg.mode, q.question_id), r.clone());
            }
            r
        }
    };
    let table_link_ms = ms(t);

    let t = Instant::now();
    let qv = embed_question(&q.question, evidence, embedder)?;
    let embed_ms = ms(t);

    let t = Instant::now();
    let link = link_columns(schema, &tl.tables, &qv, index, cfg.k, cfg.top_k_scope)?;
    let column_link_ms = ms(t);

    let t = Instant::now();
    let ctx = focused_context(schema, &link, cfg, tokenizer);
    let context_ms = ms(t);

    Ok(FocusResult {
        link: LinkRecord {
            question_id: q.question_id,
            db_id: q.db_id.clone(),
            tables: link.tables.clone(),
            columns: link.columns.clone(),
            forced: link.forced_key_columns.clone(),
            fallback_used: tl.fallback_used,
            mode: cfg.mode,
            k: cfg.k,
            config_hash: config_hash.clone(),
        },
        context: ContextRecord {
            question_id: q.question_id,
            db_id: q.db_id.clone(),
            text: ctx.text,
            token_count: ctx.token_count,
            full_schema_token_count: ctx.full_schema_token_count,
            config_hash: config_hash.clone(),
        },
        transcript: TranscriptRecord {
            question_id: q.question_id,
            prompt: tl.prompt,
            raw_response: tl.raw_response,
            parsed_tables: tl.tables,
            dropped: tl.dropped,
            fallback_used: tl.fallback_used,
            config_hash,
        },
        timing: TimingRecord { question_id: q.question_id, table_link_ms, embed_ms, column_link_ms, context_ms },
    })
}

pub fn focused_context(
    schema: &DatabaseSchema,
    link: &SchemaLink,
    cfg: &PipelineConfig,
    tokenizer: &dyn Tokenizer,
) -> FocusedContext {
    let opts = ContextOptions { sample_rows: cfg.sample_rows, ..ContextOptions::default() };
    build_focused_context(schema, link, &opts, tokenizer)
}

impl Pipeline {
    /// Focus phase for the configured question set, written to the output
    /// directory.
    pub fn run_focus(&self, opts: &FocusOptions) -> Result<FocusSummary> {
        let questions = self.selected_questions(opts)?;
        let res = Resources::load(self, &questions)?;
        let out = self.config.output_dir.clone();
        self.focus_into(&self.config, &questions, &res, &out, opts.resume, None)
    }

    /// Focus phase for one question without writing anything.
    pub fn focus_one(&self, question_id: i64) -> Result<FocusResult> {
        let q = self
            .questions()?
            .into_iter()
            .find(|q| q.question_id == question_id)
            .ok_or_else(|| Error::Pipeline(format!("unknown question_id {question_id}")))?;
        let res = Resources::load(self, std::slice::from_ref(&q))?;
        let llm = self.llm(Stage::TableLink, &self.config);
        let embedder = self.embedder();
        focus_question(
            &res.schemas[&q.db_id],
            &res.indexes[&q.db_id],
            &q,
            &self.config,
            &llm,
            &embedder,
            &ApproxTokenizer,
            None,
        )
    }

    pub(crate) fn selected_questions(&self, opts: &FocusOptions) -> Result<Vec<QuestionRecord>> {
        let mut qs = self.questions()?;
        if let Some(only) = &opts.only {
            qs.retain(|q| only.contains(&q.question_id));
        }
        Ok(qs)
    }

    /// Runs the focus phase under `cfg` and writes its artifacts to `out`.
    pub(crate) fn focus_into(
        &self,
        cfg: &PipelineConfig,
        questions: &[QuestionRecord],
        res: &Resources,
        out: &std::path::Path,
        resume: bool,
        memo: Option<&TableLinkMemo>,
    ) -> Result<FocusSummary> {
        let config_hash = cfg.config_hash();
        let links_path = out.join(LINKS_FILE);
        let contexts_path = out.join(CONTEXTS_FILE);
        let transcripts_path = out.join(TRANSCRIPTS_FILE);
        let timings_path = out.join(TIMINGS_FILE);

        let mut links: BTreeMap<i64, LinkRecord> = BTreeMap::new();
        let mut contexts: BTreeMap<i64, ContextRecord> = BTreeMap::new();
        let mut transcripts: BTreeMap<i64, TranscriptRecord> = BTreeMap::new();
        let mut timings: BTreeMap<i64, TimingRecord> = BTreeMap::new();
        if resume {
            load_previous(&links_path, &config_hash, |r: LinkRecord| (r.question_id, r.config_hash.clone(), r), &mut links)?;
            load_previous(&contexts_path, &config_hash, |r: ContextRecord| (r.question_id, r.config_hash.clone(), r), &mut contexts)?;
            load_previous(&transcripts_path, &config_hash, |r: TranscriptRecord| (r.question_id, r.config_hash.clone(), r), &mut transcripts)?;
            if timings_path.is_file() {
                for t in io::read_jsonl::<TimingRecord>(&timings_path, true)? {
                    timings.insert(t.question_id, t);
                }
            }
        } else {
            for p in [&links_path, &contexts_path, &transcripts_path, &timings_path] {
                if p.exists() {
                    std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
                }
            }
        }
        // A question counts as done only when all three records survived.
        let done: BTreeSet<i64> = links
            .keys()
            .filter(|id| contexts.contains_key(id) && transcripts.contains_key(id))
            .copied()
            .collect();
        let resumed = questions.iter().filter(|q| done.contains(&q.question_id)).count();
        let pending: Vec<&QuestionRecord> = questions.iter().filter(|q| !done.contains(&q.question_id)).collect();
        if resumed > 0 {
            log::info!("resuming: {resumed} questions already complete, {} to go", pending.len());
        }

        let w_links = JsonlAppender::open(&links_path)?;
        let w_contexts = JsonlAppender::open(&contexts_path)?;
        let w_transcripts = JsonlAppender::open(&transcripts_path)?;
        let w_timings = JsonlAppender::open(&timings_path)?;

        let llm = self.llm(Stage::TableLink, cfg);
        let embedder = self.embedder();
        let consecutive = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let failures = Mutex::new(Vec::new());
        let fresh = Mutex::new(Vec::new());
        let limit = cfg.max_consecutive_failures;

        let work = |q: &&QuestionRecord| {
            if abort.load(Ordering::SeqCst) {
                return;
            }
            let outcome = focus_question(
                &res.schemas[&q.db_id],
                &res.indexes[&q.db_id],
                q,
                cfg,
                &llm,
                &embedder,
                &ApproxTokenizer,
                memo,
            )
            .and_then(|r| {
                w_links.append(&r.link)?;
                w_contexts.append(&r.context)?;
                w_transcripts.append(&r.transcript)?;
                w_timings.append(&r.timing)?;
                Ok(r)
            });
            match outcome {
                Ok(r) => {
                    consecutive.store(0, Ordering::SeqCst);
                    fresh.lock().unwrap().push(r);
                }
                Err(e) => {
                    log::error!("question {}: {e}", q.question_id);
                    failures.lock().unwrap().push(Failure { question_id: q.question_id, error: e.to_string() });
                    if consecutive.fetch_add(1, Ordering::SeqCst) + 1 >= limit {
                        abort.store(true, Ordering::SeqCst);
                    }
                }
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.concurrency)
            .build()
            .map_err(|e| Error::Pipeline(format!("cannot start workers: {e}")))?;
        pool.install(|| pending.par_iter().for_each(work));

        for r in fresh.into_inner().unwrap() {
            let id = r.link.question_id;
            links.insert(id, r.link);
            contexts.insert(id, r.context);
            transcripts.insert(id, r.transcript);
            timings.insert(id, r.timing);
        }
        let keep: BTreeSet<i64> = links
            .keys()
            .filter(|id| contexts.contains_key(id) && transcripts.contains_key(id))
            .copied()
            .collect();
        let links: Vec<LinkRecord> = pick(links, &keep);
        let contexts: Vec<ContextRecord> = pick(contexts, &keep);
        io::write_jsonl(&links_path, &links)?;
        io::write_jsonl(&contexts_path, &contexts)?;
        io::write_jsonl(&transcripts_path, &pick(transcripts, &keep))?;
        io::write_jsonl(&timings_path, &pick(timings, &keep))?;
        write_token_summary(&out.join(TOKEN_SUMMARY_FILE), &links, &contexts, &res.schemas)?;

        let mut failures = failures.into_inner().unwrap();
        failures.sort_by_key(|f| f.question_id);
        let n = contexts.len().max(1) as f64;
        let summary = FocusSummary {
            config_hash,
            mode: cfg.mode,
            k: cfg.k,
            questions: questions.len(),
            completed: links.len(),
            resumed,
            fallbacks: links.iter().filter(|l| l.fallback_used).count(),
            failures,
            aborted: abort.load(Ordering::SeqCst),
            mean_context_tokens: contexts.iter().map(|c| c.token_count as f64).sum::<f64>() / n,
            mean_full_schema_tokens: contexts.iter().map(|c| c.full_schema_token_count as f64).sum::<f64>() / n,
            mean_reduction_ratio: contexts.iter().map(ratio).sum::<f64>() / n,
        };
        io::write_json(&out.join(RUN_SUMMARY_FILE), &summary)?;
        if summary.aborted {
            return Err(Error::Pipeline(format!(
                "aborted after {limit} consecutive failures (last: {}); fix the cause and rerun with --resume",
                summary.failures.last().map(|f| f.error.as_str()).unwrap_or("?")
            )));
        }
        Ok(summary)
    }
}

fn pick<T>(m: BTreeMap<i64, T>, keep: &BTreeSet<i64>) -> Vec<T> {
    m.into_iter().filter(|(id, _)| keep.contains(id)).map(|(_, v)| v).collect()
}

fn ratio(c: &ContextRecord) -> f64 {
    if c.full_schema_token_count == 0 {
        1.0
    } else {
        c.token_count as f64 / c.full_schema_token_count as f64
    }
}

fn load_previous<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
    config_hash: &str,
    key: impl Fn(T) -> (i64, String, T),
    into: &mut BTreeMap<i64, T>,
) -> Result<()> {
    if !path.is_file() {
        return Ok(());
    }
    for r in io::read_jsonl::<T>(path, true)? {
        let (id, hash, r) = key(r);
        if hash == config_hash {
            into.insert(id, r);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TokenRow<'a> {
    question_id: i64,
    db_id: &'a str,
    tables_linked: usize,
    tables_total: usize,
    columns_linked: usize,
    columns_total: usize,
    context_tokens: usize,
    full_schema_tokens: usize,
    ratio: String,
}

fn write_token_summary(
    path: &std::path::Path,
    links: &[LinkRecord],
    contexts: &[ContextRecord],
    schemas: &BTreeMap<String, DatabaseSchema>,
) -> Result<()> {
    let rows: Vec<TokenRow> = links
        .iter()
        .zip(contexts)
        .map(|(l, c)| {
            let s = &schemas[&l.db_id];
            TokenRow {
                question_id: l.question_id,
                db_id: &l.db_id,
                tables_linked: l.tables.len(),
                tables_total: s.tables.len(),
                columns_linked: l.columns.len(),
                columns_total: s.total_columns(),
                context_tokens: c.token_count,
                full_schema_tokens: c.full_schema_token_count,
                ratio: io::fmt6(ratio(c)),
            }
        })
        .collect();
    io::write_csv(path, &rows)
}
