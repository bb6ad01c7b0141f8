//! Checks shared by the property tests and the acceptance report. Each
//! returns `Err` with a description on the first violation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::sync::OnceLock;

use dfin_core::column_linker::{link_columns, TopKScope};
use dfin_core::context::{build_focused_context, render_link, ApproxTokenizer, ContextOptions};
use dfin_core::embedding::{cosine, top_k_columns, EmbeddingIndex, EmbeddingVector};
use dfin_core::schema::{ColumnRef, DatabaseSchema};
use dfin_core::slam::{aggregate, score_columns, score_tables, QuestionScore};
use dfin_core::sql::ast::Statement;
use dfin_core::sql::lexer::{is_reserved, tokenize, QuoteStyle, Tok};
use dfin_core::sql::{extract_refs, parse_statements, GoldReference};
use proptest::test_runner::TestCaseError;
use serde::Deserialize;

pub type Check = Result<(), TestCaseError>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(TestCaseError::fail(format!($($msg)+)));
        }
    };
}

fn lc(s: &str) -> String {
    s.to_lowercase()
}

// ---------------------------------------------------------------------------
// Gold corpus

#[derive(Deserialize)]
pub struct Entry {
    pub id: usize,
    pub db_id: String,
    pub sql: String,
    tables: Vec<String>,
    columns: Vec<(String, String)>,
}

impl Entry {
    pub fn expected(&self) -> GoldReference {
        GoldReference {
            tables: self.tables.iter().cloned().collect(),
            columns: self.columns.iter().map(|(t, c)| ColumnRef::new(t, c)).collect(),
        }
    }
}

pub struct Corpus {
    pub entries: Vec<Entry>,
    pub schemas: BTreeMap<String, DatabaseSchema>,
}

pub fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let text = fs::read_to_string(super::fixtures().join("gold_corpus.json")).unwrap();
        let entries: Vec<Entry> = serde_json::from_str(&text).unwrap();
        let fx = super::materialize();
        let schemas = super::DBS.iter().map(|db| (db.to_string(), fx.schema(db))).collect();
        Corpus { entries, schemas }
    })
}

/// Entries whose extracted references differ from the hand-resolved ones.
pub fn corpus_mismatches(c: &Corpus) -> Vec<String> {
    let mut wrong = Vec::new();
    for e in &c.entries {
        match extract_refs(&e.sql, &c.schemas[&e.db_id]) {
            Ok(r) if r == e.expected() => {}
            Ok(r) => wrong.push(format!("#{}: got {r:?}", e.id)),
            Err(err) => wrong.push(format!("#{}: {err}", e.id)),
        }
    }
    wrong
}

/// Cycles through generated choices.
pub struct Choices<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Choices<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    fn pick(&mut self, n: usize) -> usize {
        let b = self.bytes[self.at % self.bytes.len()];
        self.at += 1;
        b as usize % n
    }
}

fn is_bare_safe(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_reserved(name)
}

fn quote(name: &str, ch: &mut Choices) -> String {
    let mut styles = vec![0, 1, 2];
    if is_bare_safe(name) {
        styles.push(3);
    }
    if name.contains(']') {
        styles.retain(|s| *s != 2);
    }
    match styles[ch.pick(styles.len())] {
        0 => format!("`{}`", name.replace('`', "``")),
        1 => format!("\"{}\"", name.replace('"', "\"\"")),
        2 => format!("[{name}]"),
        _ => name.to_string(),
    }
}

fn recase(word: &str, ch: &mut Choices) -> String {
    match ch.pick(3) {
        0 => word.to_uppercase(),
        1 => word.to_lowercase(),
        _ => word.to_string(),
    }
}

fn ident_text(tok: &Tok) -> Option<&str> {
    match tok {
        Tok::Word(w) => Some(w),
        Tok::Quoted { text, .. } => Some(text),
        _ => None,
    }
}

/// Rewrites `sql` without changing what it references: table aliases get
/// fresh names, schema identifiers are re-quoted and re-cased, keywords
/// are re-cased and whitespace between tokens varies.
pub fn rewrite(sql: &str, schema: &DatabaseSchema, ch: &mut Choices) -> String {
    let toks = tokenize(sql).unwrap();
    let tables: BTreeSet<String> = schema.tables.iter().map(|t| lc(&t.name)).collect();
    let columns: BTreeSet<String> =
        schema.tables.iter().flat_map(|t| t.columns.iter().map(|c| lc(&c.original_name))).collect();
    let is_word = |i: usize, w: &str| matches!(&toks[i].tok, Tok::Word(x) if x.eq_ignore_ascii_case(w));

    // `FROM|JOIN|, <table> [AS] <alias>`
    let mut aliases: HashMap<String, String> = HashMap::new();
    for i in 1..toks.len() {
        let after_from = is_word(i - 1, "FROM") || is_word(i - 1, "JOIN") || toks[i - 1].tok == Tok::Sym(",");
        let Some(t) = ident_text(&toks[i].tok) else { continue };
        if !after_from || !tables.contains(&lc(t)) {
            continue;
        }
        let j = if i + 1 < toks.len() && is_word(i + 1, "AS") { i + 2 } else { i + 1 };
        if let Some(Tok::Word(a)) = toks.get(j).map(|t| &t.tok) {
            let a = lc(a);
            if !is_reserved(&a) && !tables.contains(&a) && !columns.contains(&a) && !aliases.contains_key(&a) {
                let fresh = format!("{}{}", ["zq", "Alias_", "r"][ch.pick(3)], aliases.len());
                aliases.insert(a, fresh);
            }
        }
    }

    let mut out = String::new();
    for (i, t) in toks.iter().enumerate() {
        if t.tok == Tok::Eof {
            break;
        }
        if i > 0 {
            out.push_str([" ", "  ", "\n", "\t ", " \n  "][ch.pick(5)]);
        }
        let src = &sql[t.offset..t.offset + t.len];
        let called = matches!(toks.get(i + 1).map(|t| &t.tok), Some(Tok::Sym("(")));
        let piece = match &t.tok {
            Tok::Word(w) | Tok::Quoted { text: w, .. } if aliases.contains_key(&lc(w)) => {
                let fresh = aliases[&lc(w)].clone();
                quote(&recase(&fresh, ch), ch)
            }
            Tok::Word(w) | Tok::Quoted { text: w, .. }
                if !called && (tables.contains(&lc(w)) || columns.contains(&lc(w))) =>
            {
                quote(&recase(w, ch), ch)
            }
            Tok::Quoted { style: QuoteStyle::Double, .. } => src.to_string(),
            Tok::Word(w) if is_reserved(w) || called => recase(w, ch),
            _ => src.to_string(),
        };
        out.push_str(&piece);
    }
    out
}

pub fn check_rewrite(c: &Corpus, idx: usize, bytes: &[u8]) -> Check {
    let e = &c.entries[idx % c.entries.len()];
    let schema = &c.schemas[&e.db_id];
    let sql = rewrite(&e.sql, schema, &mut Choices::new(bytes));
    let got = extract_refs(&sql, schema).map_err(|err| TestCaseError::fail(format!("{sql}\n{err}")))?;
    ensure!(got == e.expected(), "rewrite changed references: {sql}\n{got:?}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Column selection

pub type Instance = (DatabaseSchema, Vec<Vec<f64>>, Vec<f64>, Vec<usize>);

pub fn table_names(schema: &DatabaseSchema, picks: &[usize]) -> Vec<String> {
    picks.iter().map(|&i| schema.tables[i].name.clone()).collect()
}

/// Every column of `tables` scored and fully sorted: score descending, ties
/// by table name then column position (a stable sort over that order).
pub fn brute_force(index: &EmbeddingIndex, q: &EmbeddingVector, tables: &[String]) -> Vec<(String, String, f64)> {
    let mut order: Vec<&String> = tables.iter().collect();
    order.sort_by_key(|t| lc(t));
    let mut all = Vec::new();
    for t in order {
        let mut cols: Vec<_> = index.entries.iter().filter(|e| lc(&e.table) == lc(t)).collect();
        cols.sort_by_key(|e| e.ordinal);
        for e in cols {
            all.push((e.table.clone(), e.column.clone(), cosine(q, &e.vector).unwrap()));
        }
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    all
}

/// Per-table top-k equals the truncated full sort of each table, and the
/// global ranking equals the full sort over all tables.
pub fn check_top_k(inst: &Instance, k: usize) -> Check {
    let (schema, vectors, q, picks) = inst;
    let index = super::synth::index_for(schema, vectors);
    let q = EmbeddingVector::new(q.clone()).unwrap();
    let tables = table_names(schema, picks);
    let got = top_k_columns(&index, &q, &tables, k).unwrap();
    ensure!(got.len() == tables.len(), "one list per table");
    for (t, (name, ranked)) in tables.iter().zip(&got) {
        ensure!(name == t, "table order {name} vs {t}");
        let mut want = brute_force(&index, &q, std::slice::from_ref(t));
        want.truncate(k);
        let have: Vec<_> = ranked.iter().map(|c| (c.table.clone(), c.column.clone(), c.score)).collect();
        ensure!(have == want, "k={k} table {t}: {have:?} != {want:?}");
    }
    let have: Vec<_> = index.rank_global(&q, &tables).unwrap().into_iter().map(|c| (c.table, c.column, c.score)).collect();
    let want = brute_force(&index, &q, &tables);
    ensure!(have == want, "global: {have:?} != {want:?}");
    Ok(())
}

fn key_set(cols: &[ColumnRef]) -> BTreeSet<(String, String)> {
    cols.iter().map(ColumnRef::key).collect()
}

/// Linked tables keep their primary keys and the linked side of every
/// foreign key; the selection only grows with k.
pub fn check_keys(inst: &Instance, k: usize, scope: TopKScope) -> Check {
    let (schema, vectors, q, picks) = inst;
    let index = super::synth::index_for(schema, vectors);
    let q = EmbeddingVector::new(q.clone()).unwrap();
    let tables = table_names(schema, picks);
    let linked: BTreeSet<String> = tables.iter().map(|t| lc(t)).collect();
    let link = link_columns(schema, &tables, &q, &index, k, scope).unwrap();
    link.validate(schema).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let cols = key_set(&link.columns);

    for t in &schema.tables {
        if linked.contains(&lc(&t.name)) {
            for pk in &t.primary_key {
                ensure!(cols.contains(&(lc(&t.name), lc(pk))), "missing pk {}.{pk}", t.name);
            }
            ensure!(cols.iter().any(|c| c.0 == lc(&t.name)), "table {} has no column", t.name);
        }
    }
    for fk in &schema.foreign_keys {
        if linked.contains(&lc(&fk.from_table)) {
            ensure!(cols.contains(&(lc(&fk.from_table), lc(&fk.from_column))), "missing fk source {fk:?}");
        }
        if linked.contains(&lc(&fk.to_table)) {
            ensure!(cols.contains(&(lc(&fk.to_table), lc(&fk.to_column))), "missing fk target {fk:?}");
        }
    }
    ensure!(cols.iter().all(|c| linked.contains(&c.0)), "column outside the linked tables");

    let ranked: BTreeSet<_> = link.ranked_scores.keys().map(ColumnRef::key).collect();
    for f in &link.forced_key_columns {
        ensure!(!ranked.contains(&f.key()), "forced column {f} was already ranked");
    }
    let union: BTreeSet<_> = ranked.union(&key_set(&link.forced_key_columns)).cloned().collect();
    ensure!(cols == union, "columns are not ranked plus forced");

    let bigger = link_columns(schema, &tables, &q, &index, k + 1, scope).unwrap();
    ensure!(cols.is_subset(&key_set(&bigger.columns)), "k={k} selection not contained in k={}", k + 1);
    Ok(())
}

/// Parses every CREATE TABLE statement in `text` and checks the tables and
/// columns equal the selection, in schema order.
pub fn check_round_trip(schema: &DatabaseSchema, tables: &[String], columns: &[ColumnRef], text: &str) -> Check {
    let stmts = parse_statements(text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
    let mut seen_tables = Vec::new();
    let mut seen_cols = Vec::new();
    for s in stmts {
        let Statement::CreateTable(ct) = s else {
            return Err(TestCaseError::fail("unexpected statement in context"));
        };
        seen_tables.push(lc(&ct.name.value));
        for c in &ct.columns {
            seen_cols.push((lc(&ct.name.value), lc(&c.name.value)));
        }
    }
    let want_tables: Vec<String> = schema.in_schema_order(tables).iter().map(|t| lc(t)).collect();
    ensure!(seen_tables == want_tables, "tables {seen_tables:?} != {want_tables:?}");
    let want_cols: Vec<_> = schema.columns_in_schema_order(columns).iter().map(ColumnRef::key).collect();
    ensure!(seen_cols == want_cols, "columns {seen_cols:?} != {want_cols:?}");
    Ok(())
}

/// Links random tables of `inst`, renders the context and checks the
/// round trip and the token bound.
pub fn check_link_context(inst: &Instance, k: usize) -> Check {
    let (schema, vectors, q, picks) = inst;
    let index = super::synth::index_for(schema, vectors);
    let q = EmbeddingVector::new(q.clone()).unwrap();
    let link = link_columns(schema, &table_names(schema, picks), &q, &index, k, TopKScope::PerTable).unwrap();
    let text = render_link(schema, &link, &ContextOptions::default());
    check_round_trip(schema, &link.tables, &link.columns, &text)?;
    let ctx = build_focused_context(schema, &link, &ContextOptions::default(), &ApproxTokenizer);
    ensure!(ctx.token_count <= ctx.full_schema_token_count, "focused context larger than the full schema");
    if link.columns.len() < schema.total_columns() {
        ensure!(ctx.token_count < ctx.full_schema_token_count, "proper subset did not shrink the context");
    }
    Ok(())
}

/// A random subset of a real schema's columns, rendered and re-parsed.
pub fn check_schema_subset(schema: &DatabaseSchema, table_mask: u64, column_bytes: &[u8]) -> Check {
    let mut tables = Vec::new();
    let mut columns = Vec::new();
    let mut b = 0;
    for (i, t) in schema.tables.iter().enumerate() {
        if table_mask >> (i % 64) & 1 == 0 {
            continue;
        }
        let mut picked: Vec<ColumnRef> = t
            .columns
            .iter()
            .filter(|_| {
                b += 1;
                column_bytes[b % column_bytes.len()].is_multiple_of(2)
            })
            .map(|c| ColumnRef::new(&t.name, &c.original_name))
            .collect();
        if picked.is_empty() {
            picked.push(ColumnRef::new(&t.name, &t.columns[0].original_name));
        }
        tables.push(t.name.clone());
        columns.extend(picked);
    }
    if tables.is_empty() {
        let t = &schema.tables[0];
        tables.push(t.name.clone());
        columns.push(ColumnRef::new(&t.name, &t.columns[0].original_name));
    }
    let link = dfin_core::column_linker::SchemaLink {
        db_id: schema.db_id.clone(),
        tables: tables.clone(),
        columns: columns.clone(),
        forced_key_columns: vec![],
        ranked_scores: Default::default(),
    };
    let text = render_link(schema, &link, &ContextOptions::default());
    check_round_trip(schema, &tables, &columns, &text)
}

// ---------------------------------------------------------------------------
// Link scoring

pub const SLAM_POOL: [&str; 8] = ["frpm", "schools", "satscores", "races", "Drivers", "lapTimes", "status", "circuits"];

pub struct Naive {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub fully: bool,
}

/// Case-folded sets; an empty prediction has precision 1, an empty gold
/// set recall 1.
pub fn naive(pred: &[String], gold: &[String]) -> Naive {
    let pred: BTreeSet<String> = pred.iter().map(|s| lc(s)).collect();
    let gold: BTreeSet<String> = gold.iter().map(|s| lc(s)).collect();
    let hit = pred.intersection(&gold).count() as f64;
    let p = if pred.is_empty() { 1.0 } else { hit / pred.len() as f64 };
    let r = if gold.is_empty() { 1.0 } else { hit / gold.len() as f64 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Naive { p, r, f1, fully: pred == gold }
}

pub fn slam_columns(tables: &[String]) -> Vec<ColumnRef> {
    tables.iter().flat_map(|t| [ColumnRef::new(t, "id"), ColumnRef::new(t, format!("{t}_name"))]).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

pub type SlamCase = (Vec<String>, Vec<String>, Vec<String>, Vec<String>);

/// Per-question and aggregate scores equal the naive oracle to 1e-12, and
/// fully correct implies precision = recall = 1.
pub fn check_slam(cases: &[SlamCase]) -> Check {
    let mut scores = Vec::new();
    let mut sums = [0.0; 6];
    for (i, (pt, gt, pc, gc)) in cases.iter().enumerate() {
        let t = score_tables(pt, gt);
        let n = naive(pt, gt);
        ensure!(
            close(t.precision, n.p) && close(t.recall, n.r) && close(t.f1, n.f1),
            "tables {pt:?} vs {gt:?}: ({}, {}, {}) != ({}, {}, {})",
            t.precision, t.recall, t.f1, n.p, n.r, n.f1
        );
        ensure!(t.fully_correct == n.fully, "fully_correct for {pt:?} vs {gt:?}");
        ensure!(t.empty_prediction == pt.is_empty(), "empty flag");
        if t.fully_correct {
            ensure!(t.precision == 1.0 && t.recall == 1.0, "fully correct with P or R below 1");
        }
        let missed: BTreeSet<String> = t.missed.iter().map(|s| lc(s)).collect();
        let gold: BTreeSet<String> = gt.iter().map(|s| lc(s)).collect();
        let pred: BTreeSet<String> = pt.iter().map(|s| lc(s)).collect();
        ensure!(missed == gold.difference(&pred).cloned().collect(), "missed tables");

        let (pcols, gcols) = (slam_columns(pc), slam_columns(gc));
        let c = score_columns(&pcols, &gcols);
        let key = |c: &ColumnRef| format!("{}.{}", c.table, c.column);
        let nc = naive(&pcols.iter().map(key).collect::<Vec<_>>(), &gcols.iter().map(key).collect::<Vec<_>>());
        ensure!(close(c.recall, nc.r) && close(c.precision, nc.p), "columns {pc:?} vs {gc:?}");

        sums[0] += n.p;
        sums[1] += n.r;
        sums[2] += n.f1;
        sums[3] += if n.fully { 1.0 } else { 0.0 };
        sums[4] += nc.r;
        sums[5] += nc.p;
        scores.push(QuestionScore { question_id: i as i64, tables: t, columns: c });
    }
    let n = cases.len() as f64;
    let r = aggregate(scores, None, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let got = [
        r.table_avg_precision,
        r.table_avg_recall,
        r.table_avg_f1,
        r.fully_correct_rate,
        r.column_avg_recall,
        r.column_avg_precision,
    ];
    for (g, s) in got.iter().zip(sums) {
        ensure!(close(*g, s / n), "aggregate {g} vs {}", s / n);
    }
    ensure!(r.empty_predictions == cases.iter().filter(|c| c.0.is_empty()).count(), "empty count");
    Ok(())
}
