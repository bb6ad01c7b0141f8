//! Acceptance report: one PASS/FAIL line per criterion, nonzero exit when
//! any criterion fails.
//!
//! Criteria over the real BIRD dev set read it from `DFIN_BIRD_DEV`
//! (default `data/bird/dev` under the workspace root), which must hold
//! `dev.json` and `dev_databases/`.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::oracles::{self, check_keys, check_rewrite, check_schema_subset, check_slam, check_top_k};
use common::{bytes, synth, DETERMINISTIC};
use dfin_core::column_linker::TopKScope;
use dfin_core::exec::{execution_accuracy, open_database, ExecOptions};
use dfin_core::pipeline::focus::{CONTEXTS_FILE, LINKS_FILE};
use dfin_core::pipeline::gold::{load_gold, load_links, GOLD_FILE};
use dfin_core::pipeline::io::read_jsonl;
use dfin_core::pipeline::sweep::{read_sweep_recalls, SWEEP_FILE};
use dfin_core::pipeline::{ContextRecord, FocusOptions};
use dfin_core::schema::{self, Difficulty, LoadOptions};
use dfin_core::table_linker::LinkMode;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

const TABLE_COUNTS: [(&str, usize); 11] = [
    ("california_schools", 3),
    ("card_games", 6),
    ("codebase_community", 8),
    ("debit_card_specializing", 5),
    ("european_football_2", 7),
    ("financial", 8),
    ("formula_1", 13),
    ("student_club", 8),
    ("superhero", 10),
    ("thrombosis_prediction", 3),
    ("toxicology", 4),
];

fn bird_dev() -> Result<PathBuf, String> {
    let dir = std::env::var_os("DFIN_BIRD_DEV")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/bird/dev"));
    if dir.join("dev.json").is_file() && dir.join("dev_databases").is_dir() {
        Ok(dir)
    } else {
        Err(format!("BIRD dev not found at {} (set DFIN_BIRD_DEV)", dir.display()))
    }
}

/// Runs `check` on `cases` generated values with a fixed seed.
fn run_cases<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> oracles::Check) -> Outcome {
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner.run(&strategy, check).map_err(|e| e.to_string())?;
    Ok(format!("{cases} cases"))
}

fn within(start: Instant, limit: Duration, what: String) -> Outcome {
    let took = start.elapsed();
    if took <= limit {
        Ok(format!("{what}; {:.1}s", took.as_secs_f64()))
    } else {
        Err(format!("{what} but took {:.1}s (limit {}s)", took.as_secs_f64(), limit.as_secs()))
    }
}

fn c1_dataset_fidelity() -> Outcome {
    let dev = bird_dev()?;
    let start = Instant::now();
    let dbs = schema::load_databases(&dev.join("dev_databases"), &LoadOptions::default()).map_err(|e| e.to_string())?;
    let got: BTreeMap<&str, usize> = dbs.iter().map(|s| (s.db_id.as_str(), s.tables.len())).collect();
    let want: BTreeMap<&str, usize> = TABLE_COUNTS.into_iter().collect();
    if got != want {
        return Err(format!("table counts {got:?}, expected {want:?}"));
    }
    let qs = schema::load_questions(&dev.join("dev.json")).map_err(|e| e.to_string())?;
    let split: Vec<usize> = Difficulty::ALL.iter().map(|d| qs.iter().filter(|q| q.difficulty == *d).count()).collect();
    if qs.len() != 1533 || split != [925, 465, 144] {
        return Err(format!("{} questions split {split:?}, expected 1533 split [925, 465, 144]", qs.len()));
    }
    within(start, Duration::from_secs(60), "11 databases, 1533 questions (925/465/144)".into())
}

fn c2_gold_extraction() -> Outcome {
    let c = oracles::corpus();
    let wrong = oracles::corpus_mismatches(c);
    if !wrong.is_empty() {
        return Err(format!("{} of {} corpus entries differ: {}", wrong.len(), c.entries.len(), wrong.join("; ")));
    }
    let n = c.entries.len();
    let r = run_cases(1000, (0..n, proptest::collection::vec(any::<u8>(), 64..256)), |(i, b)| check_rewrite(c, i, &b))?;
    Ok(format!("{n}/{n} corpus queries exact; {r} of alias/quoting rewrites"))
}

fn c3_gold_self_consistency() -> Outcome {
    let dev = bird_dev()?;
    let start = Instant::now();
    let qs = schema::load_questions(&dev.join("dev.json")).map_err(|e| e.to_string())?;
    let root = dev.join("dev_databases");
    let opts = ExecOptions::default();
    let mut conns = BTreeMap::new();
    let mut correct = 0;
    for q in &qs {
        if !conns.contains_key(&q.db_id) {
            let file = schema::database_file(&schema::database_dir(&root, &q.db_id)).map_err(|e| e.to_string())?;
            conns.insert(q.db_id.clone(), open_database(&file).map_err(|e| e.to_string())?);
        }
        let o = execution_accuracy(&conns[&q.db_id], q.question_id, &q.gold_sql, &q.gold_sql, &opts)
            .map_err(|e| e.to_string())?;
        if o.correct {
            correct += 1;
        }
    }
    if correct != qs.len() {
        return Err(format!("EX(gold, gold) = {correct}/{}", qs.len()));
    }
    within(start, Duration::from_secs(30 * 60), format!("EX(gold, gold) = 1.0 over {} questions", qs.len()))
}

fn c4_top_k_oracle() -> Outcome {
    run_cases(1000, (synth::instance(6), 1usize..14), |(inst, k)| check_top_k(&inst, k))
}

fn c5_key_forcing() -> Outcome {
    run_cases(1000, (synth::instance(6), 1usize..13, any::<bool>()), |(inst, k, global)| {
        check_keys(&inst, k, if global { TopKScope::Global } else { TopKScope::PerTable })
    })
}

fn c6_slam_oracle() -> Outcome {
    run_cases(200, synth::slam_cases(), |cases| check_slam(&cases))
}

fn c7_token_reduction() -> Outcome {
    let fx = common::materialize();
    fx.prepared("record").run_focus(&FocusOptions::default()).map_err(|e| e.to_string())?;
    let p = fx.replay("replay");
    let s = p.run_focus(&FocusOptions::default()).map_err(|e| e.to_string())?;
    if (s.mode, s.k, s.completed) != (LinkMode::Minimal, 15, 20) {
        return Err(format!("expected 20 minimal k=15 questions, got {s:?}"));
    }
    let contexts: Vec<ContextRecord> = read_jsonl(&p.output_path(CONTEXTS_FILE), false).map_err(|e| e.to_string())?;
    let links = load_links(&p.output_path(LINKS_FILE)).map_err(|e| e.to_string())?;
    for (c, l) in contexts.iter().zip(&links) {
        let total = fx.schema(&l.db_id).total_columns();
        let proper = l.columns.len() < total;
        if c.token_count > c.full_schema_token_count || (proper && c.token_count >= c.full_schema_token_count) {
            return Err(format!("question {}: {} vs {} tokens", c.question_id, c.token_count, c.full_schema_token_count));
        }
    }
    Ok(format!(
        "20 questions; mean {:.0} of {:.0} tokens, mean ratio {:.3}",
        s.mean_context_tokens, s.mean_full_schema_tokens, s.mean_reduction_ratio
    ))
}

fn c8_sweep_shape() -> Outcome {
    let fx = common::materialize();
    let p = fx.prepared("sweep");
    p.extract_gold(None).map_err(|e| e.to_string())?;
    let gold = load_gold(&p.output_path(GOLD_FILE)).map_err(|e| e.to_string())?;
    let rows = p
        .run_sweep(&[LinkMode::Minimal, LinkMode::Conservative], &[5, 10, 15], &gold, &FocusOptions::default())
        .map_err(|e| e.to_string())?;
    let recalls = read_sweep_recalls(&p.output_path(SWEEP_FILE)).map_err(|e| e.to_string())?;
    if rows.len() != 6 || recalls.len() != 6 {
        return Err(format!("{} rows", recalls.len()));
    }
    let mut shown = Vec::new();
    for mode in ["minimal", "conservative"] {
        let mut r: Vec<(usize, f64)> = recalls.iter().filter(|x| x.0 == mode).map(|x| (x.1, x.2)).collect();
        r.sort_by_key(|x| x.0);
        if !r.windows(2).all(|w| w[0].1 <= w[1].1) {
            return Err(format!("{mode} column recall decreases with k: {r:?}"));
        }
        shown.push(format!("{mode} {}", r.iter().map(|x| format!("{:.3}", x.1)).collect::<Vec<_>>().join("/")));
    }
    Ok(format!("6 rows; column recall at k=5/10/15: {}", shown.join(", ")))
}

fn c9_replay_determinism() -> Outcome {
    let fx = common::materialize();
    fx.run_all(&fx.prepared("record"));
    let start = Instant::now();
    let (a, b) = (fx.replay("replay_a"), fx.replay("replay_b"));
    let ex = fx.run_all(&a);
    fx.run_all(&b);
    for name in DETERMINISTIC {
        if bytes(&a.config.output_dir, name) != bytes(&b.config.output_dir, name) {
            return Err(format!("{name} differs between replays"));
        }
    }
    within(start, Duration::from_secs(120), format!("{} identical across two replays (EX {ex:.3})", DETERMINISTIC.join(", ")))
}

fn c10_context_round_trip() -> Outcome {
    let dev = bird_dev()?;
    let dbs = schema::load_databases(&dev.join("dev_databases"), &LoadOptions::default()).map_err(|e| e.to_string())?;
    let n = dbs.len();
    run_cases(500, (0..n, any::<u64>(), proptest::collection::vec(any::<u8>(), 16..128)), |(i, mask, cols)| {
        check_schema_subset(&dbs[i], mask, &cols)
    })
    .map(|r| format!("{r} over {n} BIRD dev schemas"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("C1", "dataset fidelity", c1_dataset_fidelity),
        ("C2", "gold-extraction oracle", c2_gold_extraction),
        ("C3", "gold self-consistency", c3_gold_self_consistency),
        ("C4", "top-k oracle", c4_top_k_oracle),
        ("C5", "key-forcing invariants", c5_key_forcing),
        ("C6", "SLAM oracle", c6_slam_oracle),
        ("C7", "token reduction", c7_token_reduction),
        ("C8", "sweep shape", c8_sweep_shape),
        ("C9", "replay determinism", c9_replay_determinism),
        ("C10", "context round-trip", c10_context_round_trip),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("{id} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", 10 - failed, 10);
    if failed > 0 {
        std::process::exit(1);
    }
}
