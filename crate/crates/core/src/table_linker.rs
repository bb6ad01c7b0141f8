//! Prompted table linking.
//!
//! Two prompt variants ask the model for a Python-style set of table names:
//! `minimal` favours precision, `conservative` favours recall. The answer is
//! taken from the last brace-delimited set of quoted strings in the response.
//! When nothing usable comes back every table is linked, so later stages
//! always receive a non-empty schema.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::context::Tokenizer;
use crate::error::{Error, Result};
use crate::provider::CompletionProvider;
use crate::schema::DatabaseSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    Minimal,
    Conservative,
}

impl LinkMode {
    pub const ALL: [LinkMode; 2] = [LinkMode::Minimal, LinkMode::Conservative];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkMode::Minimal => "minimal",
            LinkMode::Conservative => "conservative",
        }
    }
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "minimal" => Ok(LinkMode::Minimal),
            "conservative" => Ok(LinkMode::Conservative),
            other => Err(Error::Config(format!(
                "unknown link mode {other:?} (expected minimal or conservative)"
            ))),
        }
    }
}

const MINIMAL_PREAMBLE: &str = "You are a sql query assistant schema linker. You are provided with a natural language question a possible hint and a list of table descriptions.
Your task is to pick the minimum relevant tables for the query. Each table you pick is costly so be cautious and weary for each table you consider.
the final output of tables should look like a pytho set -> {'table_a', 'table_b'}";

const MINIMAL_CLOSING: &str = "tables for query, Let's think step by step.";

const CONSERVATIVE_PREAMBLE: &str = "You are a sql query assistant schema linker with a strong focus on high recall. You are provided with a natural language question a possible hint and a list of table descriptions.
Your task is to identify all the tables that could possibly be relevant to the query. It is crucial that you do not miss any relevant tables, even if it means including a few that might not be strictly necessary. Each missed table is a significant issue, while including an extra table is a minor inconvenience.";

const CONSERVATIVE_CLOSING: &str = "Considering the importance of high recall and the relative cost of missing a table versus including an extra one, list the tables for the query. Aim for completeness and be err on the side of inclusion. Your output should be formatted as a python set -> {'table_a', 'table_b'}.

Tables for query, Let's think step by step.";

/// `"name: description"` lines in schema order.
fn table_descriptions(schema: &DatabaseSchema) -> Result<String> {
    let mut lines = Vec::with_capacity(schema.tables.len());
    for t in &schema.tables {
        let desc = t.generated_description.as_deref().map(str::trim).filter(|d| !d.is_empty());
        match desc {
            Some(d) => lines.push(format!("{}: {}", t.name, d.split_whitespace().collect::<Vec<_>>().join(" "))),
            None => {
                return Err(Error::Schema(format!(
                    "{}: table {:?} has no generated description; run `dfin preprocess` first",
                    schema.db_id, t.name
                )))
            }
        }
    }
    Ok(lines.join("\n"))
}

/// Builds the table-linking prompt. Pure: identical inputs give identical
/// bytes.
pub fn build_table_prompt(
    schema: &DatabaseSchema,
    question: &str,
    evidence: Option<&str>,
    mode: LinkMode,
) -> Result<String> {
    let descriptions = table_descriptions(schema)?;
    let hint = match evidence.map(str::trim).filter(|e| !e.is_empty()) {
        Some(e) => format!("Hint: {e}"),
        None => String::new(),
    };
    let (preamble, closing) = match mode {
        LinkMode::Minimal => (MINIMAL_PREAMBLE, MINIMAL_CLOSING),
        LinkMode::Conservative => (CONSERVATIVE_PREAMBLE, CONSERVATIVE_CLOSING),
    };
    Ok(format!(
        "{preamble}\n\nTable Descriptions:\n####\n\n{descriptions}\n\n####\n\nQuestion: {question}\n{hint}\n\n{closing}"
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseFailure {
    #[error("no brace-delimited set of quoted table names in the response")]
    NoSet,
    #[error("none of the named tables exist: {0:?}")]
    NoneResolved(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTables {
    /// Schema-canonical names in schema order.
    pub tables: Vec<String>,
    /// Names that did not resolve to a schema table.
    pub dropped: Vec<String>,
}

fn set_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([^{}]*)\}").unwrap())
}

fn quoted_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"'([^']*)'|"([^"]*)"|`([^`]*)`"#).unwrap())
}

/// Extracts the last `{'a', 'b'}` set from a model response and resolves
/// each name case-insensitively. Unknown names are dropped with a warning.
pub fn parse_table_response(raw: &str, schema: &DatabaseSchema) -> Result<ParsedTables, ParseFailure> {
    let names = set_regex()
        .captures_iter(raw)
        .filter_map(|cap| {
            let inner = cap.get(1).unwrap().as_str();
            let names: Vec<String> = quoted_regex()
                .captures_iter(inner)
                .filter_map(|q| q.get(1).or(q.get(2)).or(q.get(3)))
                .map(|m| m.as_str().trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            (!names.is_empty()).then_some(names)
        })
        .last()
        .ok_or(ParseFailure::NoSet)?;

    let mut resolved = Vec::new();
    let mut dropped = Vec::new();
    for name in names {
        match schema.canonical_table(&name) {
            Some(t) => resolved.push(t.to_string()),
            None => {
                log::warn!("{}: dropping unknown table {name:?} from link response", schema.db_id);
                dropped.push(name);
            }
        }
    }
    if resolved.is_empty() {
        return Err(ParseFailure::NoneResolved(dropped));
    }
    Ok(ParsedTables { tables: schema.in_schema_order(&resolved), dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLinkResult {
    pub tables: Vec<String>,
    pub raw_response: String,
    pub prompt: String,
    pub prompt_token_count: usize,
    pub fallback_used: bool,
    pub dropped: Vec<String>,
}

/// Prompts `llm` for the tables relevant to a question. A response that
/// cannot be parsed links every table and sets `fallback_used`.
pub fn link_tables(
    schema: &DatabaseSchema,
    question: &str,
    evidence: Option<&str>,
    mode: LinkMode,
    llm: &dyn CompletionProvider,
    tokenizer: &dyn Tokenizer,
) -> Result<TableLinkResult> {
    let prompt = build_table_prompt(schema, question, evidence, mode)?;
    let raw_response = llm.complete(&prompt)?;
    Ok(finish_link(schema, prompt, raw_response, tokenizer))
}

pub(crate) fn finish_link(
    schema: &DatabaseSchema,
    prompt: String,
    raw_response: String,
    tokenizer: &dyn Tokenizer,
) -> TableLinkResult {
    let prompt_token_count = tokenizer.count(&prompt);
    let (tables, dropped, fallback_used) = match parse_table_response(&raw_response, schema) {
        Ok(p) => (p.tables, p.dropped, false),
        Err(e) => {
            log::warn!("{}: table link fallback to all tables: {e}", schema.db_id);
            let dropped = match e {
                ParseFailure::NoneResolved(d) => d,
                ParseFailure::NoSet => Vec::new(),
            };
            (schema.table_names(), dropped, true)
        }
    };
    TableLinkResult { tables, raw_response, prompt, prompt_token_count, fallback_used, dropped }
}
