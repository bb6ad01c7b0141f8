//! Materializes the mini BIRD fixture into a temporary directory.
#![allow(dead_code)]

pub mod oracles;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dfin_core::pipeline::config::{CompletionBackend, EmbeddingBackend};
use dfin_core::pipeline::eval::{evaluate, exec_options, write_eval, EVAL_FILE, EVAL_TIMING_FILE};
use dfin_core::pipeline::focus::LINKS_FILE;
use dfin_core::pipeline::generate::{load_predictions, PRED_FILE};
use dfin_core::pipeline::gold::{load_gold, load_links, score_links, write_slam_csv, GOLD_FILE, SLAM_FILE};
use dfin_core::pipeline::providers::UnavailableCompletion;
use dfin_core::pipeline::{FocusOptions, Pipeline, PipelineConfig};
use dfin_core::provider::{HashEmbedder, ScriptedCompletion, TranscriptMode};
use dfin_core::schema::{self, DatabaseSchema, LoadOptions};
use tempfile::TempDir;

pub const DBS: [&str; 2] = ["california_schools", "formula_1"];

/// Outputs that must be byte-identical across replays.
pub const DETERMINISTIC: [&str; 4] = [LINKS_FILE, PRED_FILE, SLAM_FILE, EVAL_FILE];

pub fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub struct Fixture {
    pub dir: TempDir,
    pub db_root: PathBuf,
    pub questions: PathBuf,
    pub script: PathBuf,
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            fs::copy(e.path(), target).unwrap();
        }
    }
}

/// Copies the fixture and builds each `<db>.sqlite` from its `schema.sql`.
pub fn materialize() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("mini_bird");
    let db_root = dir.path().join("dev_databases");
    for db in DBS {
        let to = db_root.join(db);
        copy_dir(&src.join("dev_databases").join(db), &to);
        let sql = fs::read_to_string(to.join("schema.sql")).unwrap();
        fs::remove_file(to.join("schema.sql")).unwrap();
        let conn = rusqlite::Connection::open(to.join(format!("{db}.sqlite"))).unwrap();
        conn.execute_batch(&sql).unwrap();
    }
    let questions = dir.path().join("dev.json");
    fs::copy(src.join("dev.json"), &questions).unwrap();
    Fixture { db_root, questions, script: src.join("scripted_responses.json"), dir }
}

impl Fixture {
    pub fn schema(&self, db: &str) -> DatabaseSchema {
        schema::load_database(&self.db_root.join(db), &LoadOptions::default()).unwrap()
    }

    pub fn db_file(&self, db: &str) -> PathBuf {
        self.db_root.join(db).join(format!("{db}.sqlite"))
    }

    /// Offline configuration: scripted completions, hash embeddings.
    pub fn config(&self, out: &str) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            db_root: self.db_root.clone(),
            questions: self.questions.clone(),
            cache_dir: self.dir.path().join("cache"),
            output_dir: self.dir.path().join(out),
            transcripts: TranscriptMode::Record,
            timing_runs: 0,
            ..PipelineConfig::default()
        };
        cfg.completion.provider = CompletionBackend::Scripted;
        cfg.completion.script = Some(self.script.clone());
        cfg.embedding.provider = EmbeddingBackend::Hash;
        cfg.embedding.dimension = 256;
        cfg
    }

    pub fn pipeline(&self, cfg: PipelineConfig) -> Pipeline {
        let llm = Arc::new(ScriptedCompletion::from_file(&self.script).unwrap());
        let emb = Arc::new(HashEmbedder::new(cfg.embedding.dimension, cfg.embedding.seed));
        Pipeline::with_providers(cfg, llm, emb).unwrap()
    }

    /// A pipeline with descriptions generated and indexes built.
    pub fn prepared(&self, out: &str) -> Pipeline {
        let p = self.pipeline(self.config(out));
        for (db, r) in p.preprocess(&[], false).unwrap() {
            assert!(r.is_success(), "{db}: {:?}", r.failures);
        }
        p.embed(&[], false).unwrap();
        p
    }

    /// A replay-mode pipeline whose completion provider cannot be called.
    pub fn replay(&self, out: &str) -> Pipeline {
        let mut cfg = self.config(out);
        cfg.transcripts = TranscriptMode::Replay;
        let emb = Arc::new(HashEmbedder::new(cfg.embedding.dimension, cfg.embedding.seed));
        Pipeline::with_providers(cfg, Arc::new(UnavailableCompletion::new("scripted")), emb).unwrap()
    }

    /// Gold extraction, focus, generation, scoring and evaluation into the
    /// pipeline's output directory. Returns EX.
    pub fn run_all(&self, p: &Pipeline) -> f64 {
        p.extract_gold(None).unwrap();
        let s = p.run_focus(&FocusOptions::default()).unwrap();
        assert!(s.failures.is_empty(), "{:?}", s.failures);
        p.run_generate().unwrap();
        let links = load_links(&p.output_path(LINKS_FILE)).unwrap();
        let gold = load_gold(&p.output_path(GOLD_FILE)).unwrap();
        write_slam_csv(&p.output_path(SLAM_FILE), &score_links(&links, &gold).unwrap()).unwrap();
        let preds = load_predictions(&p.output_path(PRED_FILE)).unwrap();
        let qs = p.questions().unwrap();
        let report = evaluate(&preds, &qs, &self.db_root, &exec_options(30.0, 0), 2).unwrap();
        write_eval(&p.output_path(EVAL_FILE), &p.output_path(EVAL_TIMING_FILE), &report, &qs).unwrap();
        report.ex
    }
}
