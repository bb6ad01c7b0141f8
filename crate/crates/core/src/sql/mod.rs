//! SQLite-dialect SQL parsing and gold reference extraction.
//!
//! The parser covers what benchmark gold queries use: `SELECT` with CTEs,
//! compound operators, joins, subqueries, window functions, `CASE`, `CAST`,
//! plus `CREATE TABLE` so rendered contexts can be re-parsed.

pub mod ast;
pub mod lexer;
mod parser;
mod refs;

pub use parser::{parse_create_table, parse_query, parse_statements};
pub use refs::{extract_refs, GoldReference};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        message: String,
        offset: usize,
        line: usize,
        column: usize,
    },

    #[error("unresolved identifier {0:?}")]
    Unresolved(String),

    #[error("ambiguous column {column:?}, owned by {owners}")]
    Ambiguous { column: String, owners: String },

    #[error("unsupported statement: {0}")]
    Unsupported(String),
}

impl SqlError {
    pub(crate) fn syntax(src: &str, offset: usize, message: impl Into<String>) -> Self {
        let offset = offset.min(src.len());
        let before = &src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        SqlError::Syntax {
            message: message.into(),
            offset,
            line,
            column,
        }
    }
}
