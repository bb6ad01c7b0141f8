//! Database schemas, BIRD-layout ingestion and the table description
//! preprocessing step.
//!
//! A database directory holds one SQLite file plus a
//! `database_description/` folder with one CSV per table
//! (`original_column_name,column_name,column_description,data_format,value_description`).
//! Generated table descriptions live next to them in `table_description.json`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::context::{self, ContextOptions};
use crate::error::{Error, Result};
use crate::ident;
use crate::provider::{CompletionProvider, ProviderError};

pub const DESCRIPTION_DIR: &str = "database_description";
pub const TABLE_DESCRIPTION_FILE: &str = "table_description.json";
pub const DEFAULT_SAMPLE_ROWS: usize = 3;
const SCHEMA_DUMP_FORMAT: &str = "dfin-schema/1";

/// A `(table, column)` pair in schema-canonical casing. Serialized as a
/// two-element JSON array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }

    /// Case-insensitive comparison key.
    pub fn key(&self) -> (String, String) {
        (ident::normalize(&self.table), ident::normalize(&self.column))
    }
}

impl From<(String, String)> for ColumnRef {
    fn from((table, column): (String, String)) -> Self {
        Self { table, column }
    }
}

impl From<ColumnRef> for (String, String) {
    fn from(c: ColumnRef) -> Self {
        (c.table, c.column)
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// A stored cell value from a sample row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob { blob: String },
}

impl SampleValue {
    fn from_ref(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => SampleValue::Null,
            ValueRef::Integer(i) => SampleValue::Integer(i),
            ValueRef::Real(r) => SampleValue::Real(r),
            ValueRef::Text(t) => SampleValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => SampleValue::Blob { blob: hex::encode(b) },
        }
    }
}

impl fmt::Display for SampleValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleValue::Null => f.write_str("NULL"),
            SampleValue::Integer(i) => write!(f, "{i}"),
            SampleValue::Real(r) => write!(f, "{r:?}"),
            SampleValue::Text(t) => f.write_str(t),
            SampleValue::Blob { blob } => write!(f, "x'{blob}'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDescriptor {
    pub table_name: String,
    pub original_name: String,
    pub description: String,
    pub data_format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_description: Option<String>,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDescriptor {
    pub name: String,
    pub columns: Vec<ColumnDescriptor>,
    pub primary_key: Vec<String>,
    #[serde(default)]
    pub sample_rows: Vec<Vec<SampleValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_description: Option<String>,
}

impl TableDescriptor {
    pub fn column(&self, name: &str) -> Option<&ColumnDescriptor> {
        let key = ident::normalize(name);
        self.columns
            .iter()
            .find(|c| ident::normalize(&c.original_name) == key)
    }

    pub fn is_primary_key(&self, column: &str) -> bool {
        self.primary_key.iter().any(|k| ident::eq(k, column))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKeyLink {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

/// All tables, columns and keys of one database. Tables are kept in schema
/// (creation) order; lookups are case-insensitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDescriptor>,
    pub foreign_keys: Vec<ForeignKeyLink>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&TableDescriptor> {
        self.table_index(name).map(|i| &self.tables[i])
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        let key = ident::normalize(name);
        self.tables
            .iter()
            .position(|t| ident::normalize(&t.name) == key)
    }

    /// Resolves a table name to its canonical casing.
    pub fn canonical_table(&self, name: &str) -> Option<&str> {
        self.table(name).map(|t| t.name.as_str())
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnDescriptor> {
        self.table(table).and_then(|t| t.column(column))
    }

    pub fn total_columns(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.name.clone()).collect()
    }

    /// Sorts table names into schema order, dropping duplicates.
    pub fn in_schema_order<'a, I>(&self, names: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut idx: Vec<usize> = names
            .into_iter()
            .filter_map(|n| self.table_index(n))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter().map(|i| self.tables[i].name.clone()).collect()
    }

    /// Schema position of a column, used to order column sets.
    pub fn column_position(&self, c: &ColumnRef) -> Option<(usize, usize)> {
        let ti = self.table_index(&c.table)?;
        let col = self.tables[ti].column(&c.column)?;
        Some((ti, col.ordinal))
    }

    /// Sorts column references into schema order, dropping duplicates and
    /// anything that does not resolve.
    pub fn columns_in_schema_order<'a, I>(&self, cols: I) -> Vec<ColumnRef>
    where
        I: IntoIterator<Item = &'a ColumnRef>,
    {
        let mut pos: Vec<(usize, usize)> = cols
            .into_iter()
            .filter_map(|c| self.column_position(c))
            .collect();
        pos.sort_unstable();
        pos.dedup();
        pos.into_iter()
            .map(|(t, o)| {
                let table = &self.tables[t];
                ColumnRef::new(table.name.clone(), table.columns[o].original_name.clone())
            })
            .collect()
    }

    /// Checks every structural invariant. Loaders call this before returning.
    pub fn validate(&self) -> Result<()> {
        if self.db_id.trim().is_empty() {
            return Err(Error::Schema("empty db_id".into()));
        }
        let mut seen = HashSet::new();
        for table in &self.tables {
            if table.name.trim().is_empty() {
                return Err(Error::Schema(format!("{}: empty table name", self.db_id)));
            }
            if !seen.insert(ident::normalize(&table.name)) {
                return Err(Error::Schema(format!(
                    "{}: duplicate table name {:?}",
                    self.db_id, table.name
                )));
            }
            validate_table(table)?;
        }
        for fk in &self.foreign_keys {
            for (t, c) in [(&fk.from_table, &fk.from_column), (&fk.to_table, &fk.to_column)] {
                if self.column(t, c).is_none() {
                    return Err(Error::Schema(format!(
                        "{}: foreign key endpoint {t}.{c} does not resolve",
                        self.db_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn validate_table(table: &TableDescriptor) -> Result<()> {
    if table.columns.is_empty() {
        return Err(Error::Schema(format!("table {:?} has no columns", table.name)));
    }
    let mut names = HashSet::new();
    for (i, col) in table.columns.iter().enumerate() {
        if col.original_name.trim().is_empty() {
            return Err(Error::Schema(format!(
                "table {:?}: column {i} has an empty name",
                table.name
            )));
        }
        if !ident::eq(&col.table_name, &table.name) {
            return Err(Error::Schema(format!(
                "column {:?} claims table {:?} but sits in {:?}",
                col.original_name, col.table_name, table.name
            )));
        }
        if col.ordinal != i {
            return Err(Error::Schema(format!(
                "table {:?}: column {:?} has ordinal {} at position {i}",
                table.name, col.original_name, col.ordinal
            )));
        }
        if !names.insert(ident::normalize(&col.original_name)) {
            return Err(Error::Schema(format!(
                "table {:?}: duplicate column {:?}",
                table.name, col.original_name
            )));
        }
    }
    for key in &table.primary_key {
        if table.column(key).is_none() {
            return Err(Error::Schema(format!(
                "table {:?}: primary key column {key:?} does not exist",
                table.name
            )));
        }
    }
    for (i, row) in table.sample_rows.iter().enumerate() {
        if row.len() != table.columns.len() {
            return Err(Error::Schema(format!(
                "table {:?}: sample row {i} has {} values for {} columns",
                table.name,
                row.len(),
                table.columns.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub sample_rows: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            sample_rows: DEFAULT_SAMPLE_ROWS,
        }
    }
}

/// Locates the SQLite file of a database directory: `<db_id>.sqlite` when
/// present, otherwise the first `*.sqlite`/`*.db` file by name.
pub fn database_file(db_dir: &Path) -> Result<PathBuf> {
    let db_id = dir_name(db_dir)?;
    let preferred = db_dir.join(format!("{db_id}.sqlite"));
    if preferred.is_file() {
        return Ok(preferred);
    }
    let entries = fs::read_dir(db_dir).map_err(|e| Error::io(db_dir, e))?;
    let mut candidates: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|x| x.to_str()),
                    Some("sqlite") | Some("sqlite3") | Some("db")
                )
        })
        .collect();
    candidates.sort();
    candidates
        .into_iter()
        .next()
        .ok_or_else(|| Error::Schema(format!("no database file in {}", db_dir.display())))
}

fn dir_name(dir: &Path) -> Result<String> {
    dir.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Schema(format!("cannot derive db_id from {}", dir.display())))
}

pub(crate) fn open_read_only(path: &Path) -> Result<Connection> {
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| Error::sqlite(path, e))
}

/// Loads and validates one BIRD-layout database directory.
pub fn load_database(db_dir: &Path, opts: &LoadOptions) -> Result<DatabaseSchema> {
    let db_id = dir_name(db_dir)?;
    let db_path = database_file(db_dir)?;
    let conn = open_read_only(&db_path)?;
    let sq = |e| Error::sqlite(&db_path, e);

    let table_names: Vec<String> = {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type = 'table' \
                 AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid",
            )
            .map_err(sq)?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0)).map_err(sq)?;
        rows.collect::<std::result::Result<_, _>>().map_err(sq)?
    };

    let csv_files = description_files(db_dir)?;
    let mut tables = Vec::with_capacity(table_names.len());
    for name in &table_names {
        let csv_path = csv_files.get(&ident::normalize(name)).ok_or_else(|| {
            Error::Schema(format!(
                "{db_id}: table {name:?} has no description file in {}",
                db_dir.join(DESCRIPTION_DIR).display()
            ))
        })?;
        tables.push(load_table(&conn, &db_path, name, csv_path, opts)?);
    }

    let mut foreign_keys = Vec::new();
    for table in &tables {
        foreign_keys.extend(load_foreign_keys(&conn, &db_path, &db_id, table, &tables)?);
    }

    let mut schema = DatabaseSchema {
        db_id,
        tables,
        foreign_keys,
    };
    if let Some(descriptions) = read_table_descriptions(db_dir)? {
        apply_table_descriptions(&mut schema, &descriptions);
    }
    schema.validate()?;
    Ok(schema)
}

fn description_files(db_dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let dir = db_dir.join(DESCRIPTION_DIR);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let is_csv = path
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| x.eq_ignore_ascii_case("csv"));
        if !is_csv {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            files.insert(ident::normalize(stem), path);
        }
    }
    Ok(files)
}

struct DbColumn {
    name: String,
    declared_type: String,
    pk_position: i64,
}

fn load_table(
    conn: &Connection,
    db_path: &Path,
    name: &str,
    csv_path: &Path,
    opts: &LoadOptions,
) -> Result<TableDescriptor> {
    let sq = |e| Error::sqlite(db_path, e);
    let db_columns: Vec<DbColumn> = {
        let mut stmt = conn
            .prepare("SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid")
            .map_err(sq)?;
        let rows = stmt
            .query_map([name], |r| {
                Ok(DbColumn {
                    name: r.get(0)?,
                    declared_type: r.get::<_, Option<String>>(1)?.unwrap_or_default(),
                    pk_position: r.get(2)?,
                })
            })
            .map_err(sq)?;
        rows.collect::<std::result::Result<_, _>>().map_err(sq)?
    };

    let annotations = read_description_csv(csv_path)?;
    let mut by_column: BTreeMap<String, CsvAnnotation> = BTreeMap::new();
    for ann in annotations {
        let key = ident::normalize(&ann.original_name);
        if !db_columns.iter().any(|c| ident::normalize(&c.name) == key) {
            return Err(Error::Schema(format!(
                "{}: description row {:?} does not match any column of table {name:?}",
                csv_path.display(),
                ann.original_name
            )));
        }
        if by_column.contains_key(&key) {
            log::warn!(
                "{}: duplicate description for column {:?}, keeping the first",
                csv_path.display(),
                ann.original_name
            );
            continue;
        }
        by_column.insert(key, ann);
    }

    let columns: Vec<ColumnDescriptor> = db_columns
        .iter()
        .enumerate()
        .map(|(ordinal, c)| {
            let ann = by_column.get(&ident::normalize(&c.name));
            let description = ann
                .map(|a| {
                    if a.description.is_empty() {
                        a.expanded_name.clone()
                    } else {
                        a.description.clone()
                    }
                })
                .unwrap_or_default();
            let data_format = ann
                .map(|a| a.data_format.clone())
                .filter(|f| !f.is_empty())
                .unwrap_or_else(|| format_from_declared_type(&c.declared_type));
            ColumnDescriptor {
                table_name: name.to_string(),
                original_name: c.name.clone(),
                description,
                data_format,
                value_description: ann.and_then(|a| a.value_description.clone()),
                ordinal,
            }
        })
        .collect();

    let mut pk: Vec<&DbColumn> = db_columns.iter().filter(|c| c.pk_position > 0).collect();
    pk.sort_by_key(|c| c.pk_position);
    let primary_key = pk.into_iter().map(|c| c.name.clone()).collect();

    let sample_rows = if opts.sample_rows == 0 {
        Vec::new()
    } else {
        let sql = format!(
            "SELECT * FROM \"{}\" LIMIT {}",
            name.replace('"', "\"\""),
            opts.sample_rows
        );
        let mut stmt = conn.prepare(&sql).map_err(sq)?;
        let ncols = stmt.column_count();
        let mut rows = stmt.query([]).map_err(sq)?;
        let mut out = Vec::new();
        while let Some(row) = rows.next().map_err(sq)? {
            let mut values = Vec::with_capacity(ncols);
            for i in 0..ncols {
                values.push(SampleValue::from_ref(row.get_ref(i).map_err(sq)?));
            }
            out.push(values);
        }
        out
    };

    Ok(TableDescriptor {
        name: name.to_string(),
        columns,
        primary_key,
        sample_rows,
        generated_description: None,
    })
}

fn format_from_declared_type(declared: &str) -> String {
    let t = declared.to_ascii_uppercase();
    if t.contains("INT") {
        "integer".into()
    } else if t.contains("REAL") || t.contains("FLOA") || t.contains("DOUB") || t.contains("NUMERIC") {
        "real".into()
    } else if t.contains("DATE") || t.contains("TIME") {
        "date".into()
    } else {
        "text".into()
    }
}

fn load_foreign_keys(
    conn: &Connection,
    db_path: &Path,
    db_id: &str,
    table: &TableDescriptor,
    tables: &[TableDescriptor],
) -> Result<Vec<ForeignKeyLink>> {
    let sq = |e| Error::sqlite(db_path, e);
    let mut stmt = conn
        .prepare(
            "SELECT id, seq, \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(?1) \
             ORDER BY id, seq",
        )
        .map_err(sq)?;
    let rows = stmt
        .query_map([&table.name], |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, i64>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, Option<String>>(4)?,
            ))
        })
        .map_err(sq)?;
    let raw: Vec<_> = rows.collect::<std::result::Result<_, _>>().map_err(sq)?;

    let mut links = Vec::new();
    for (_, seq, to_table, from, to) in raw {
        let target = tables
            .iter()
            .find(|t| ident::eq(&t.name, &to_table))
            .ok_or_else(|| {
                Error::Schema(format!(
                    "{db_id}: foreign key {}.{from} references unknown table {to_table:?}",
                    table.name
                ))
            })?;
        let to_column = match to {
            Some(c) => c,
            // A bare REFERENCES clause targets the primary key.
            None => target
                .primary_key
                .get(seq as usize)
                .cloned()
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "{db_id}: foreign key {}.{from} references {to_table:?} without a primary key",
                        table.name
                    ))
                })?,
        };
        let from_col = table.column(&from).ok_or_else(|| {
            Error::Schema(format!(
                "{db_id}: foreign key column {}.{from} does not exist",
                table.name
            ))
        })?;
        let to_col = target.column(&to_column).ok_or_else(|| {
            Error::Schema(format!(
                "{db_id}: foreign key {}.{from} references missing column {}.{to_column}",
                table.name, target.name
            ))
        })?;
        let link = ForeignKeyLink {
            from_table: table.name.clone(),
            from_column: from_col.original_name.clone(),
            to_table: target.name.clone(),
            to_column: to_col.original_name.clone(),
        };
        if !links.contains(&link) {
            links.push(link);
        }
    }
    Ok(links)
}

struct CsvAnnotation {
    original_name: String,
    expanded_name: String,
    description: String,
    data_format: String,
    value_description: Option<String>,
}

/// BIRD description files are mostly UTF-8, a few carry a BOM or Latin-1 bytes.
fn decode_text(bytes: Vec<u8>) -> String {
    let bytes = match bytes.strip_prefix(&[0xEF, 0xBB, 0xBF]) {
        Some(rest) => rest.to_vec(),
        None => bytes,
    };
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    }
}

fn clean_cell(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read_description_csv(path: &Path) -> Result<Vec<CsvAnnotation>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = decode_text(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let original = col("original_column_name").ok_or_else(|| {
        Error::Schema(format!(
            "{}: missing original_column_name header",
            path.display()
        ))
    })?;
    let expanded = col("column_name");
    let description = col("column_description");
    let data_format = col("data_format");
    let value_description = col("value_description");

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let get = |i: Option<usize>| i.and_then(|i| record.get(i)).map(clean_cell).unwrap_or_default();
        let original_name = record
            .get(original)
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        if original_name.is_empty() {
            continue;
        }
        let vd = get(value_description);
        out.push(CsvAnnotation {
            original_name,
            expanded_name: get(expanded),
            description: get(description),
            data_format: get(data_format).to_ascii_lowercase(),
            value_description: (!vd.is_empty()).then_some(vd),
        });
    }
    Ok(out)
}

/// Loads every database directory under `root`. When `root` itself holds a
/// database file it is treated as a single database.
pub fn load_databases(root: &Path, opts: &LoadOptions) -> Result<Vec<DatabaseSchema>> {
    database_dirs(root)?
        .iter()
        .map(|dir| load_database(dir, opts))
        .collect()
}

/// Database directories under `root`, sorted by name.
pub fn database_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(DESCRIPTION_DIR).is_dir() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(DESCRIPTION_DIR).is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Schema(format!(
            "no database directories under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

/// Resolves the directory of `db_id` under a root that is either the database
/// directory itself or its parent.
pub fn database_dir(root: &Path, db_id: &str) -> PathBuf {
    if root.file_name().and_then(|n| n.to_str()) == Some(db_id)
        && root.join(DESCRIPTION_DIR).is_dir()
    {
        root.to_path_buf()
    } else {
        root.join(db_id)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaDump {
    format: String,
    schema: DatabaseSchema,
}

/// Writes the artifact's schema dump format (versioned JSON).
pub fn save_schema_dump(schema: &DatabaseSchema, path: &Path) -> Result<()> {
    let dump = SchemaDump {
        format: SCHEMA_DUMP_FORMAT.into(),
        schema: schema.clone(),
    };
    let mut text = serde_json::to_string_pretty(&dump).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_schema_dump(text: &str) -> Result<DatabaseSchema> {
    let dump: SchemaDump = serde_json::from_str(text)
        .map_err(|e| Error::Schema(format!("malformed schema dump: {e}")))?;
    if dump.format != SCHEMA_DUMP_FORMAT {
        return Err(Error::Schema(format!(
            "unsupported schema dump format {:?}",
            dump.format
        )));
    }
    dump.schema.validate()?;
    Ok(dump.schema)
}

pub fn load_schema_dump(path: &Path) -> Result<DatabaseSchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema_dump(&text)
}

// ---------------------------------------------------------------------------
// Questions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Moderate, Difficulty::Challenging];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Difficulty::Simple),
            "moderate" => Ok(Difficulty::Moderate),
            "challenging" => Ok(Difficulty::Challenging),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: i64,
    pub db_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(rename = "SQL")]
    pub gold_sql: String,
    pub difficulty: Difficulty,
}

/// Parses a dev.json-style array of question records.
pub fn parse_questions(text: &str) -> Result<Vec<QuestionRecord>> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Questions(format!("not valid JSON: {e}")))?;
    let items = value
        .as_array()
        .ok_or_else(|| Error::Questions("expected a JSON array of records".into()))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_question(i, item))
        .collect()
}

fn parse_question(index: usize, item: &serde_json::Value) -> Result<QuestionRecord> {
    let obj = item
        .as_object()
        .ok_or_else(|| Error::Questions(format!("record {index}: not an object")))?;
    let field = |name: &str| {
        obj.get(name)
            .ok_or_else(|| Error::Questions(format!("record {index}: missing field {name:?}")))
    };
    let text_field = |name: &str| -> Result<String> {
        field(name)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Questions(format!("record {index}: field {name:?} must be a string")))
    };
    let question_id = field("question_id")?
        .as_i64()
        .ok_or_else(|| Error::Questions(format!("record {index}: question_id must be an integer")))?;
    let difficulty_label = text_field("difficulty")?;
    let difficulty = difficulty_label
        .parse::<Difficulty>()
        .map_err(|e| Error::Questions(format!("record {index}: {e}")))?;
    let evidence = match obj.get("evidence") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) if s.trim().is_empty() => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(Error::Questions(format!(
                "record {index}: field \"evidence\" must be a string"
            )))
        }
    };
    Ok(QuestionRecord {
        question_id,
        db_id: text_field("db_id")?,
        question: text_field("question")?,
        evidence,
        gold_sql: text_field("SQL")?,
        difficulty,
    })
}

pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_questions(&text).map_err(|e| match e {
        Error::Questions(msg) => Error::Questions(format!("{}: {msg}", path.display())),
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Table description preprocessing

pub fn read_table_descriptions(db_dir: &Path) -> Result<Option<BTreeMap<String, String>>> {
    let path = db_dir.join(TABLE_DESCRIPTION_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let map = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    Ok(Some(map))
}

/// Writes `table_description.json`: one object, sorted keys, trailing newline.
pub fn write_table_descriptions(db_dir: &Path, descriptions: &BTreeMap<String, String>) -> Result<()> {
    let path = db_dir.join(TABLE_DESCRIPTION_FILE);
    let mut text = serde_json::to_string_pretty(descriptions).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn apply_table_descriptions(schema: &mut DatabaseSchema, descriptions: &BTreeMap<String, String>) {
    for (name, text) in descriptions {
        match schema.table_index(name) {
            Some(i) => schema.tables[i].generated_description = Some(text.trim().to_string()),
            None => log::warn!(
                "{}: {TABLE_DESCRIPTION_FILE} describes unknown table {name:?}",
                schema.db_id
            ),
        }
    }
}

/// Prompt asking for a short description of one table, built from its full
/// rendering (DDL, sample rows, column descriptions).
pub fn table_description_prompt(schema: &DatabaseSchema, table: &TableDescriptor) -> String {
    let block = context::render_full_table(schema, table, &ContextOptions::default());
    format!(
        "Describe the table below in one or two sentences. Say what each row represents \
         and which kinds of questions the table can answer. Reply with the description only.\n\n\
         {block}\n"
    )
}

#[derive(Debug, Default)]
pub struct DescribeReport {
    pub generated: Vec<String>,
    pub loaded: Vec<String>,
    pub failures: Vec<(String, ProviderError)>,
}

impl DescribeReport {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Generates a description per table through `llm`, stores them on the
/// schema and writes `table_description.json` under `db_dir`.
///
/// Existing descriptions are reused unless `force` is set. Provider failures
/// are recorded per table; successful entries are still written.
pub fn generate_table_descriptions(
    schema: &mut DatabaseSchema,
    db_dir: &Path,
    llm: &dyn CompletionProvider,
    force: bool,
) -> Result<DescribeReport> {
    let existing = if force {
        BTreeMap::new()
    } else {
        read_table_descriptions(db_dir)?.unwrap_or_default()
    };
    let mut report = DescribeReport::default();
    let mut descriptions = BTreeMap::new();
    for i in 0..schema.tables.len() {
        let table = &schema.tables[i];
        let cached = existing
            .iter()
            .find(|(k, _)| ident::eq(k, &table.name))
            .map(|(_, v)| v.clone());
        let text = match cached {
            Some(text) => {
                report.loaded.push(table.name.clone());
                text
            }
            None => {
                let prompt = table_description_prompt(schema, table);
                match llm.complete(&prompt) {
                    Ok(text) => {
                        report.generated.push(table.name.clone());
                        text.trim().to_string()
                    }
                    Err(e) => {
                        log::error!("{}: describing {:?} failed: {e}", schema.db_id, table.name);
                        report.failures.push((table.name.clone(), e));
                        continue;
                    }
                }
            }
        };
        schema.tables[i].generated_description = Some(text.clone());
        descriptions.insert(schema.tables[i].name.clone(), text);
    }
    write_table_descriptions(db_dir, &descriptions)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn question_json(extra: &str) -> String {
        format!(
            r#"[{{"question_id": 0, "db_id": "d", "question": "q", "evidence": "", "SQL": "SELECT 1", "difficulty": "simple"{extra}}}]"#
        )
    }

    #[test]
    fn empty_evidence_is_absent() {
        let qs = parse_questions(&question_json("")).unwrap();
        assert_eq!(qs[0].evidence, None);
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let qs = parse_questions(&question_json(r#", "SQL_toks": [1, 2]"#)).unwrap();
        assert_eq!(qs.len(), 1);
    }

    #[test]
    fn missing_sql_names_the_record() {
        let text = r#"[{"question_id": 0, "db_id": "d", "question": "q", "SQL": "x", "difficulty": "simple"},
                      {"question_id": 1, "db_id": "d", "question": "q", "difficulty": "simple"}]"#;
        let err = parse_questions(text).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
        assert!(err.contains("SQL"), "{err}");
    }

    #[test]
    fn unknown_difficulty_is_rejected() {
        let text = r#"[{"question_id": 0, "db_id": "d", "question": "q", "SQL": "x", "difficulty": "hard"}]"#;
        assert!(parse_questions(text).is_err());
    }

    #[test]
    fn latin1_description_files_decode() {
        assert_eq!(decode_text(vec![0xEF, 0xBB, 0xBF, b'a']), "a");
        assert_eq!(decode_text(vec![b'c', 0xE9]), "c\u{e9}");
    }

    #[test]
    fn validate_rejects_bad_ordinals_and_keys() {
        let col = |name: &str, ordinal| ColumnDescriptor {
            table_name: "t".into(),
            original_name: name.into(),
            description: String::new(),
            data_format: "text".into(),
            value_description: None,
            ordinal,
        };
        let mut schema = DatabaseSchema {
            db_id: "d".into(),
            tables: vec![TableDescriptor {
                name: "t".into(),
                columns: vec![col("a", 0), col("b", 1)],
                primary_key: vec!["a".into()],
                sample_rows: vec![],
                generated_description: None,
            }],
            foreign_keys: vec![],
        };
        schema.validate().unwrap();

        schema.tables[0].columns[1].ordinal = 2;
        assert!(schema.validate().is_err());
        schema.tables[0].columns[1].ordinal = 1;

        schema.tables[0].primary_key = vec!["zz".into()];
        assert!(schema.validate().is_err());
        schema.tables[0].primary_key = vec!["A".into()];
        schema.validate().unwrap();

        schema.tables[0].columns[1].original_name = "A".into();
        assert!(schema.validate().is_err());
        schema.tables[0].columns[1].original_name = "b".into();

        schema.tables[0].sample_rows = vec![vec![SampleValue::Null]];
        assert!(schema.validate().is_err());
        schema.tables[0].sample_rows.clear();

        schema.foreign_keys.push(ForeignKeyLink {
            from_table: "t".into(),
            from_column: "a".into(),
            to_table: "other".into(),
            to_column: "id".into(),
        });
        assert!(schema.validate().is_err());
    }

    #[test]
    fn sample_values_round_trip_through_json() {
        let values = vec![
            SampleValue::Null,
            SampleValue::Integer(3),
            SampleValue::Real(3.0),
            SampleValue::Real(0.25),
            SampleValue::Text("x".into()),
            SampleValue::Blob { blob: "00ff".into() },
        ];
        let text = serde_json::to_string(&values).unwrap();
        let back: Vec<SampleValue> = serde_json::from_str(&text).unwrap();
        assert_eq!(values, back);
    }
}
