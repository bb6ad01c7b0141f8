//! Focused schema rendering and token counting.
//!
//! Each table renders as a `CREATE TABLE` statement restricted to the
//! selected columns, a commented sample-row grid and a commented list of
//! column descriptions:
//!
//! ```text
//! CREATE TABLE employee (
//!     emp_id INT PRIMARY KEY,
//!     first_name VARCHAR(100)
//! );
//! -- Sample rows from 'employee' table:
//! -- emp_id | first_name
//! -- 101    | John
//!
//! -- Column descriptions:
//! -- 'emp_id': Unique identifier for each employee.
//! -- 'first_name': Given name of the employee.
//! ```

use crate::column_linker::SchemaLink;
use crate::ident;
use crate::schema::{DatabaseSchema, ForeignKeyLink, SampleValue, TableDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextOptions {
    pub sample_rows: usize,
    /// Longer sample values are cut and end in `...`.
    pub max_value_chars: usize,
}

impl Default for ContextOptions {
    fn default() -> Self {
        Self { sample_rows: crate::schema::DEFAULT_SAMPLE_ROWS, max_value_chars: 64 }
    }
}

pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;

    fn count(&self, text: &str) -> usize;
}

/// `ceil(bytes / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenizer;

impl Tokenizer for ApproxTokenizer {
    fn name(&self) -> &str {
        "approx-bytes/4"
    }

    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// Token count under the default tokenizer.
pub fn count_tokens(text: &str) -> usize {
    ApproxTokenizer.count(text)
}

/// Column type shown in the rendered DDL.
pub fn sql_type(data_format: &str) -> &'static str {
    match data_format.trim().to_ascii_lowercase().as_str() {
        "real" => "REAL",
        "integer" => "INT",
        _ => "VARCHAR(100)",
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn cell(v: &SampleValue, max_chars: usize) -> String {
    let s = one_line(&v.to_string());
    if s.chars().count() > max_chars {
        let keep = max_chars.saturating_sub(3);
        let mut out: String = s.chars().take(keep).collect();
        out.push_str("...");
        out
    } else {
        s
    }
}

/// Renders one table restricted to the columns at `selected` positions.
fn render_block(
    table: &TableDescriptor,
    selected: &[usize],
    fks: &[&ForeignKeyLink],
    opts: &ContextOptions,
) -> String {
    let cols: Vec<_> = selected.iter().map(|&i| &table.columns[i]).collect();
    let pk: Vec<&str> = table.primary_key.iter().map(String::as_str).collect();
    let pk_complete = !pk.is_empty() && pk.iter().all(|k| cols.iter().any(|c| ident::eq(&c.original_name, k)));

    let mut defs: Vec<String> = cols
        .iter()
        .map(|c| {
            let mut d = format!("    {} {}", ident::quote_if_needed(&c.original_name), sql_type(&c.data_format));
            if pk_complete && pk.len() == 1 && ident::eq(pk[0], &c.original_name) {
                d.push_str(" PRIMARY KEY");
            }
            d
        })
        .collect();
    if pk_complete && pk.len() > 1 {
        let names: Vec<String> = pk
            .iter()
            .map(|k| {
                let c = table.column(k).map_or(*k, |c| c.original_name.as_str());
                ident::quote_if_needed(c)
            })
            .collect();
        defs.push(format!("    PRIMARY KEY ({})", names.join(", ")));
    }
    for fk in fks {
        defs.push(format!(
            "    FOREIGN KEY ({}) REFERENCES {} ({})",
            ident::quote_if_needed(&fk.from_column),
            ident::quote_if_needed(&fk.to_table),
            ident::quote_if_needed(&fk.to_column)
        ));
    }

    let mut out = format!("CREATE TABLE {} (\n{}\n);\n", ident::quote_if_needed(&table.name), defs.join(",\n"));

    out.push_str(&format!("-- Sample rows from '{}' table:\n", one_line(&table.name)));
    let mut grid: Vec<Vec<String>> = vec![cols.iter().map(|c| one_line(&c.original_name)).collect()];
    for row in table.sample_rows.iter().take(opts.sample_rows) {
        grid.push(selected.iter().map(|&i| cell(&row[i], opts.max_value_chars)).collect());
    }
    let widths: Vec<usize> = (0..cols.len())
        .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    for row in &grid {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        out.push_str(format!("-- {}", cells.join(" | ")).trim_end());
        out.push('\n');
    }

    out.push_str("\n-- Column descriptions:\n");
    for c in &cols {
        let mut line = format!("-- '{}': {}", one_line(&c.original_name), one_line(&c.description));
        if let Some(v) = c.value_description.as_deref().map(one_line).filter(|v| !v.is_empty()) {
            line.push_str(&format!(" ({v})"));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out.pop();
    out
}

/// Renders `table` restricted to the named columns. `fks` may hold any
/// foreign keys; only those leaving this table from a selected column are
/// rendered, so callers pass the ones whose remote endpoint is selected.
pub fn render_table_block(
    table: &TableDescriptor,
    selected_columns: &[&str],
    fks: &[ForeignKeyLink],
    opts: &ContextOptions,
) -> String {
    let selected: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| selected_columns.iter().any(|s| ident::eq(s, &c.original_name)))
        .map(|(i, _)| i)
        .collect();
    let fks: Vec<&ForeignKeyLink> = fks
        .iter()
        .filter(|fk| {
            ident::eq(&fk.from_table, &table.name)
                && selected_columns.iter().any(|s| ident::eq(s, &fk.from_column))
        })
        .collect();
    render_block(table, &selected, &fks, opts)
}

/// Full rendering of one table with every foreign key it declares.
pub fn render_full_table(schema: &DatabaseSchema, table: &TableDescriptor, opts: &ContextOptions) -> String {
    let all: Vec<&str> = table.columns.iter().map(|c| c.original_name.as_str()).collect();
    render_table_block(table, &all, &schema.foreign_keys, opts)
}

/// Renders every linked table (schema order) restricted to the link's
/// columns, joined by blank lines.
pub fn render_link(schema: &DatabaseSchema, link: &SchemaLink, opts: &ContextOptions) -> String {
    let fks: Vec<ForeignKeyLink> = schema
        .foreign_keys
        .iter()
        .filter(|fk| link.contains_column(&fk.from_table, &fk.from_column) && link.contains_column(&fk.to_table, &fk.to_column))
        .cloned()
        .collect();
    let mut blocks = Vec::new();
    for table in &schema.tables {
        if !link.contains_table(&table.name) {
            continue;
        }
        let cols: Vec<&str> = link.columns_of(&table.name).iter().map(|c| c.column.as_str()).collect();
        if cols.is_empty() {
            continue;
        }
        blocks.push(render_table_block(table, &cols, &fks, opts));
    }
    blocks.join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FocusedContext {
    pub text: String,
    pub token_count: usize,
    pub full_schema_token_count: usize,
}

impl FocusedContext {
    /// `token_count / full_schema_token_count`.
    pub fn reduction_ratio(&self) -> f64 {
        if self.full_schema_token_count == 0 {
            1.0
        } else {
            self.token_count as f64 / self.full_schema_token_count as f64
        }
    }
}

pub fn build_focused_context(
    schema: &DatabaseSchema,
    link: &SchemaLink,
    opts: &ContextOptions,
    tokenizer: &dyn Tokenizer,
) -> FocusedContext {
    let text = render_link(schema, link, opts);
    let full = render_link(schema, &SchemaLink::full(schema), opts);
    FocusedContext {
        token_count: tokenizer.count(&text),
        full_schema_token_count: tokenizer.count(&full),
        text,
    }
}
