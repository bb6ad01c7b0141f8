//! Random schemas, embedding indexes and links for property tests.

use chrono::{TimeZone, Utc};
use dfin_core::embedding::{EmbeddingIndex, EmbeddingVector, IndexEntry};
use dfin_core::schema::{ColumnDescriptor, DatabaseSchema, ForeignKeyLink, SampleValue, TableDescriptor};
use proptest::prelude::*;
use proptest::sample::subsequence;

pub const TABLE_POOL: [&str; 10] =
    ["frpm", "Schools", "order", "race results", "lapTimes", "T-1", "status", "x", "Group", "data_2"];

pub const COLUMN_POOL: [&str; 20] = [
    "id", "Name", "Free Meal Count (K-12)", "zip code", "order", "raceId", "year", "points", "q1", "Date",
    "select", "e-mail", "City", "nationality", "a`b", "wins", "rank", "Percent (%) Eligible", "code", "Type",
];

#[derive(Debug, Clone)]
pub struct RawTable {
    columns: Vec<&'static str>,
    pk: Vec<usize>,
    formats: Vec<u8>,
    samples: Vec<Vec<i64>>,
}

fn raw_table() -> impl Strategy<Value = RawTable> {
    subsequence(COLUMN_POOL.to_vec(), 1..=12)
        .prop_flat_map(|columns| {
            let n = columns.len();
            (
                Just(columns).prop_shuffle(),
                subsequence((0..n).collect::<Vec<_>>(), 0..=n.min(2)),
                proptest::collection::vec(0u8..3, n),
                proptest::collection::vec(proptest::collection::vec(-5i64..50, n), 0..3),
            )
        })
        .prop_map(|(columns, pk, formats, samples)| RawTable { columns, pk, formats, samples })
}

fn fmt(code: u8) -> &'static str {
    ["integer", "real", "text"][code as usize]
}

/// A valid schema of 1..=`max_tables` tables with awkward identifiers.
pub fn schema(max_tables: usize) -> impl Strategy<Value = DatabaseSchema> {
    subsequence(TABLE_POOL.to_vec(), 1..=max_tables)
        .prop_flat_map(|names| {
            let n = names.len();
            (
                Just(names),
                proptest::collection::vec(raw_table(), n),
                proptest::collection::vec((any::<usize>(), any::<usize>(), any::<usize>(), any::<usize>()), 0..6),
            )
        })
        .prop_map(|(names, raws, fk_raw)| {
            let tables: Vec<TableDescriptor> = names
                .iter()
                .zip(&raws)
                .map(|(name, r)| TableDescriptor {
                    name: name.to_string(),
                    columns: r
                        .columns
                        .iter()
                        .enumerate()
                        .map(|(i, c)| ColumnDescriptor {
                            table_name: name.to_string(),
                            original_name: c.to_string(),
                            description: format!("The {c} of {name}."),
                            data_format: fmt(r.formats[i]).into(),
                            value_description: (i % 3 == 0).then(|| "commonsense evidence: none".into()),
                            ordinal: i,
                        })
                        .collect(),
                    primary_key: r.pk.iter().map(|&i| r.columns[i].to_string()).collect(),
                    sample_rows: r
                        .samples
                        .iter()
                        .map(|row| {
                            row.iter()
                                .enumerate()
                                .map(|(i, v)| match r.formats[i] {
                                    0 => SampleValue::Integer(*v),
                                    1 => SampleValue::Real(*v as f64 / 4.0),
                                    _ if *v < 0 => SampleValue::Null,
                                    _ => SampleValue::Text(format!("v {v}\nline")),
                                })
                                .collect()
                        })
                        .collect(),
                    generated_description: Some(format!("Rows of {name}.")),
                })
                .collect();
            let mut foreign_keys: Vec<ForeignKeyLink> = Vec::new();
            for (a, b, c, d) in fk_raw {
                let (ft, tt) = (&tables[a % tables.len()], &tables[c % tables.len()]);
                let fk = ForeignKeyLink {
                    from_table: ft.name.clone(),
                    from_column: ft.columns[b % ft.columns.len()].original_name.clone(),
                    to_table: tt.name.clone(),
                    to_column: tt.columns[d % tt.columns.len()].original_name.clone(),
                };
                if !foreign_keys.contains(&fk) {
                    foreign_keys.push(fk);
                }
            }
            let s = DatabaseSchema { db_id: "synthetic".into(), tables, foreign_keys };
            s.validate().expect("generated schema is valid");
            s
        })
}

/// Small integer components so that exact score ties are common.
pub fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2i32..=2, dim).prop_map(|v| {
        let mut v: Vec<f64> = v.into_iter().map(f64::from).collect();
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    })
}

pub fn index_for(schema: &DatabaseSchema, vectors: &[Vec<f64>]) -> EmbeddingIndex {
    let mut entries = Vec::new();
    for t in &schema.tables {
        for c in &t.columns {
            let v = vectors[entries.len() % vectors.len()].clone();
            entries.push(IndexEntry {
                table: t.name.clone(),
                column: c.original_name.clone(),
                ordinal: c.ordinal,
                vector: EmbeddingVector::new(v).unwrap(),
            });
        }
    }
    EmbeddingIndex {
        db_id: schema.db_id.clone(),
        provider_tag: "synthetic".into(),
        dimension: vectors[0].len(),
        schema_hash: String::new(),
        built_at: Utc.timestamp_opt(0, 0).unwrap(),
        entries,
    }
}

/// A schema, one vector per column (cycled when short), a query vector and
/// a non-empty subset of table positions.
pub fn instance(max_tables: usize) -> impl Strategy<Value = (DatabaseSchema, Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
    schema(max_tables).prop_flat_map(|s| {
        let n = s.tables.len();
        (
            Just(s),
            proptest::collection::vec(vector(3), 1..80),
            vector(3),
            subsequence((0..n).collect::<Vec<_>>(), 1..=n),
        )
    })
}

fn slam_names() -> impl Strategy<Value = Vec<String>> {
    use super::oracles::SLAM_POOL;
    proptest::collection::vec((0..SLAM_POOL.len(), any::<bool>()), 0..6).prop_map(|v| {
        v.into_iter().map(|(i, up)| if up { SLAM_POOL[i].to_uppercase() } else { SLAM_POOL[i].to_string() }).collect()
    })
}

/// 1..25 questions of (pred tables, gold tables, pred columns, gold columns).
pub fn slam_cases() -> impl Strategy<Value = Vec<super::oracles::SlamCase>> {
    proptest::collection::vec((slam_names(), slam_names(), slam_names(), slam_names()), 1..25)
}
