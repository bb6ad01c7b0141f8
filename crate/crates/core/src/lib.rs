//! Schema focusing for text-to-SQL.
//!
//! The crate narrows a database schema to the tables and columns a question
//! needs (prompted table linking followed by embedding retrieval over column
//! descriptions), renders the focused prompt context, and scores both the
//! linking step and the final SQL.
//!
//! Module map:
//!
//! - [`schema`]: BIRD-layout ingestion, validation, table description preprocessing.
//! - [`sql`]: SQLite-dialect parser and gold table/column reference extraction.
//! - [`embedding`]: per-column embedding index, cosine scoring, top-k retrieval.
//! - [`table_linker`]: minimal/conservative table-linking prompts and response parsing.
//! - [`column_linker`]: top-k columns plus forced key columns.
//! - [`context`]: focused schema rendering and token counting.
//! - [`slam`]: schema linking precision/recall/F1.
//! - [`exec`]: execution accuracy and valid efficiency score.
//! - [`pipeline`]: batch orchestration, configuration, caches and reports.
//! - [`provider`]: completion/embedding provider abstractions and test doubles.

pub mod column_linker;
pub mod context;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod ident;
pub mod pipeline;
pub mod provider;
pub mod schema;
pub mod slam;
pub mod sql;
pub mod table_linker;

pub use error::{Error, Result};
