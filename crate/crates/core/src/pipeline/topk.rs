//! Ranked column-score listings for inspecting where gold columns land.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use super::config::Stage;
use super::io;
use super::Pipeline;
use crate::column_linker::TopKScope;
use crate::context::ApproxTokenizer;
use crate::embedding::{embed_question, EmbeddingIndex, EmbeddingVector};
use crate::error::{Error, Result};
use crate::schema::{ColumnRef, DatabaseSchema};
use crate::sql::extract_refs;
use crate::table_linker::link_tables;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopkRow {
    /// 1-based; per table under the per-table scope, across all linked
    /// tables under the global scope.
    pub rank: usize,
    pub table: String,
    pub column: String,
    pub score: f64,
    pub in_gold: bool,
}

/// Every column of `tables` with its rank and score, marking gold members.
pub fn topk_distribution(
    schema: &DatabaseSchema,
    index: &EmbeddingIndex,
    query: &EmbeddingVector,
    tables: &[String],
    gold: &BTreeSet<ColumnRef>,
    scope: TopKScope,
) -> Result<Vec<TopkRow>> {
    let gold: BTreeSet<(String, String)> = gold.iter().map(ColumnRef::key).collect();
    let tables = schema.in_schema_order(tables);
    let ranked = match scope {
        TopKScope::PerTable => {
            let mut all = Vec::new();
            for t in &tables {
                all.extend(index.rank_table(query, t)?.into_iter().enumerate());
            }
            all
        }
        TopKScope::Global => index.rank_global(query, &tables)?.into_iter().enumerate().collect(),
    };
    Ok(ranked
        .into_iter()
        .map(|(i, c)| {
            let in_gold = gold.contains(&c.column_ref().key());
            TopkRow { rank: i + 1, table: c.table, column: c.column, score: c.score, in_gold }
        })
        .collect())
}

impl Pipeline {
    /// Links the question's tables, then lists every column of those tables
    /// with its score and gold membership.
    pub fn topk_for_question(&self, question_id: i64) -> Result<Vec<TopkRow>> {
        let q = self
            .questions()?
            .into_iter()
            .find(|q| q.question_id == question_id)
            .ok_or_else(|| Error::Pipeline(format!("unknown question_id {question_id}")))?;
        let schema = self.load_schema(&q.db_id, true)?;
        let index = self.load_index(&schema)?;
        let gold = extract_refs(&q.gold_sql, &schema)?;
        let llm = self.llm(Stage::TableLink, &self.config);
        let tl = link_tables(&schema, &q.question, q.evidence.as_deref(), self.config.mode, &llm, &ApproxTokenizer)?;
        let qv = embed_question(&q.question, q.evidence.as_deref(), &self.embedder())?;
        topk_distribution(&schema, &index, &qv, &tl.tables, &gold.columns, self.config.top_k_scope)
    }
}

#[derive(Serialize)]
struct Row<'a> {
    rank: usize,
    table: &'a str,
    column: &'a str,
    score: String,
    in_gold: bool,
}

pub fn write_topk_csv(path: &Path, rows: &[TopkRow]) -> Result<()> {
    let out: Vec<Row> = rows
        .iter()
        .map(|r| Row { rank: r.rank, table: &r.table, column: &r.column, score: format!("{:.9}", r.score), in_gold: r.in_gold })
        .collect();
    io::write_csv(path, &out)
}
