use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use dfin_core::column_linker::TopKScope;
use dfin_core::pipeline::eval::{evaluate, exec_options, write_eval, EVAL_FILE, EVAL_TIMING_FILE};
use dfin_core::pipeline::focus::LINKS_FILE;
use dfin_core::pipeline::generate::{load_predictions, PRED_FILE};
use dfin_core::pipeline::gold::{load_gold, load_links, score_links, slam_summary_line, write_slam_csv, GOLD_FILE, SLAM_FILE};
use dfin_core::pipeline::io::write_json;
use dfin_core::pipeline::topk::write_topk_csv;
use dfin_core::pipeline::{FocusOptions, GeneratorKind, Overrides, Pipeline, PipelineConfig};
use dfin_core::provider::TranscriptMode;
use dfin_core::schema;
use dfin_core::table_linker::LinkMode;

/// Schema focusing for text-to-SQL: link tables and columns, render focused
/// contexts, generate SQL and evaluate.
#[derive(Parser)]
#[command(name = "dfin", version)]
struct Cli {
    /// TOML (or .json) configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: OverrideArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OverrideArgs {
    /// Directory with one sub-directory per database.
    #[arg(long, global = true)]
    db_root: Option<PathBuf>,
    /// dev.json-style question file.
    #[arg(long, global = true)]
    questions: Option<PathBuf>,
    #[arg(long, global = true)]
    mode: Option<LinkMode>,
    #[arg(short, long, global = true)]
    k: Option<usize>,
    /// per-table or global.
    #[arg(long, global = true)]
    scope: Option<TopKScope>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// baseline_prompt or external_stub.
    #[arg(long, global = true)]
    generator: Option<GeneratorKind>,
    #[arg(long, global = true)]
    external_predictions: Option<PathBuf>,
    /// live, record or replay.
    #[arg(long, global = true)]
    transcripts: Option<TranscriptMode>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Executions per query for efficiency timing; 0 disables it.
    #[arg(long, global = true)]
    timing_runs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a short description of every table (needed for table linking).
    Preprocess {
        /// Restrict to these databases.
        #[arg(long = "db")]
        dbs: Vec<String>,
        /// Regenerate existing descriptions.
        #[arg(long)]
        force: bool,
    },
    /// Build the per-column embedding index of every database.
    Embed {
        #[arg(long = "db")]
        dbs: Vec<String>,
        /// Rebuild even when a cached index exists.
        #[arg(long)]
        force: bool,
    },
    /// Extract gold table and column sets from the questions' SQL.
    ExtractGold {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link tables and columns and render focused contexts.
    Focus {
        /// Skip questions already completed under the same configuration.
        #[arg(long)]
        resume: bool,
        /// Only these question ids (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<i64>,
    },
    /// Generate SQL from the focused contexts.
    Generate,
    /// Score links against gold references.
    Slam {
        #[arg(long)]
        links: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execution accuracy (and efficiency score) of predictions.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-query timeout in seconds.
        #[arg(long)]
        timeout: Option<f64>,
    },
    /// Focus + SLAM over every mode and k combination.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "minimal,conservative")]
        modes: Vec<LinkMode>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
        ks: Vec<usize>,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Ranked column scores of one question's linked tables.
    TopkDist {
        #[arg(long)]
        question_id: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the focused context of one question.
    Context {
        #[arg(long)]
        question_id: i64,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    let o = &cli.overrides;
    cfg.apply(Overrides {
        db_root: o.db_root.clone(),
        questions: o.questions.clone(),
        mode: o.mode,
        k: o.k,
        top_k_scope: o.scope,
        cache_dir: o.cache_dir.clone(),
        output_dir: o.output_dir.clone(),
        generator: o.generator,
        external_predictions: o.external_predictions.clone(),
        transcripts: o.transcripts,
        concurrency: o.concurrency,
        timing_runs: o.timing_runs,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn or_output(p: &Option<PathBuf>, cfg: &PipelineConfig, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| cfg.output_dir.join(name))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Preprocess { dbs, force } => {
            let p = Pipeline::from_config(cfg)?;
            let mut failed = 0;
            for (db, r) in p.preprocess(dbs, *force)? {
                println!("{db}: {} generated, {} cached, {} failed", r.generated.len(), r.loaded.len(), r.failures.len());
                failed += r.failures.len();
            }
            if failed > 0 {
                bail!("{failed} table descriptions failed; rerun to retry them");
            }
        }
        Command::Embed { dbs, force } => {
            let p = Pipeline::from_config(cfg)?;
            for o in p.embed(dbs, *force)? {
                let how = if o.cache_hit { "cached".to_string() } else { format!("{} provider calls", o.provider_calls) };
                println!("{}: {} columns ({how})", o.index.db_id, o.index.entries.len());
            }
        }
        Command::ExtractGold { out } => {
            let p = Pipeline::offline(cfg)?;
            let s = p.extract_gold(out.as_deref())?;
            println!("extracted {} gold references, {} failures", s.extracted, s.failures.len());
        }
        Command::Focus { resume, only } => {
            let p = Pipeline::from_config(cfg)?;
            let opts = FocusOptions {
                resume: *resume,
                only: (!only.is_empty()).then(|| only.iter().copied().collect::<BTreeSet<_>>()),
            };
            let s = p.run_focus(&opts)?;
            println!(
                "focused {}/{} questions ({} resumed, {} fallbacks, {} failures); mean tokens {:.0} of {:.0} (ratio {:.3})",
                s.completed,
                s.questions,
                s.resumed,
                s.fallbacks,
                s.failures.len(),
                s.mean_context_tokens,
                s.mean_full_schema_tokens,
                s.mean_reduction_ratio
            );
        }
        Command::Generate => {
            let p = Pipeline::from_config(cfg)?;
            let s = p.run_generate()?;
            if s.awaiting_external {
                println!("wrote generation requests; set external_predictions and rerun");
            } else {
                println!("{} predictions ({} empty, {} failures)", s.predictions, s.empty_predictions, s.failures.len());
            }
        }
        Command::Slam { links, gold, out } => {
            let links = load_links(&or_output(links, &cfg, LINKS_FILE))?;
            let gold = load_gold(&or_output(gold, &cfg, GOLD_FILE))?;
            let report = score_links(&links, &gold)?;
            let out = or_output(out, &cfg, SLAM_FILE);
            write_slam_csv(&out, &report)?;
            write_json(&out.with_extension("summary.json"), &summary_of(&report))?;
            println!("{}", slam_summary_line(&report));
        }
        Command::Eval { pred, out, timeout } => {
            let preds = load_predictions(&or_output(pred, &cfg, PRED_FILE))?;
            let questions = schema::load_questions(&cfg.questions)?;
            let opts = exec_options(timeout.unwrap_or(cfg.exec_timeout_secs), cfg.timing_runs);
            let report = evaluate(&preds, &questions, &cfg.db_root, &opts, cfg.concurrency)?;
            let out = or_output(out, &cfg, EVAL_FILE);
            let timing = out.with_file_name(EVAL_TIMING_FILE);
            write_eval(&out, &timing, &report, &questions)?;
            println!("{}", report.summary_line());
        }
        Command::Sweep { modes, ks, gold, resume } => {
            let p = Pipeline::from_config(cfg)?;
            let gold = load_gold(&or_output(gold, &p.config, GOLD_FILE))?;
            let rows = p.run_sweep(modes, ks, &gold, &FocusOptions { resume: *resume, only: None })?;
            for r in &rows {
                if r.error.is_empty() {
                    println!("{} k={}: table P {} R {} | column R {} | tokens {}", r.mode, r.k, r.table_precision, r.table_recall, r.column_recall, r.mean_context_tokens);
                } else {
                    println!("{} k={}: failed: {}", r.mode, r.k, r.error);
                }
            }
        }
        Command::TopkDist { question_id, out } => {
            let p = Pipeline::from_config(cfg)?;
            let rows = p.topk_for_question(*question_id)?;
            let out = or_output(out, &p.config, &format!("topk_{question_id}.csv"));
            write_topk_csv(&out, &rows)?;
            println!("{} ranked columns written to {}", rows.len(), out.display());
        }
        Command::Context { question_id } => {
            let p = Pipeline::from_config(cfg)?;
            let r = p.focus_one(*question_id)?;
            println!("{}", r.context.text);
            eprintln!(
                "-- {} tokens (full schema {}), tables: {}",
                r.context.token_count,
                r.context.full_schema_token_count,
                r.link.tables.join(", ")
            );
        }
    }
    Ok(())
}

fn summary_of(r: &dfin_core::slam::SlamReport) -> serde_json::Value {
    serde_json::json!({
        "questions": r.per_question.len(),
        "table_avg_precision": r.table_avg_precision,
        "table_avg_recall": r.table_avg_recall,
        "table_avg_f1": r.table_avg_f1,
        "fully_correct_rate": r.fully_correct_rate,
        "column_avg_recall": r.column_avg_recall,
        "column_avg_precision": r.column_avg_precision,
        "empty_predictions": r.empty_predictions,
        "mode": r.mode,
        "k": r.k,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
