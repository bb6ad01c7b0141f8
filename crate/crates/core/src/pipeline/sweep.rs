//! SLAM sweep over link modes and k values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::focus::{FocusOptions, Resources, TableLinkMemo};
use super::gold::{score_links, write_slam_csv, GoldRecord, SLAM_FILE};
use super::io;
use super::Pipeline;
use crate::error::Result;
use crate::table_linker::LinkMode;

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: LinkMode,
    pub k: usize,
    pub questions: usize,
    pub table_precision: String,
    pub table_recall: String,
    pub table_f1: String,
    pub fully_correct_rate: String,
    pub column_recall: String,
    pub column_precision: String,
    pub mean_context_tokens: String,
    pub mean_full_schema_tokens: String,
    pub mean_reduction_ratio: String,
    pub fallbacks: usize,
    pub failures: usize,
    /// Empty unless the configuration failed as a whole.
    pub error: String,
}

impl SweepRow {
    fn failed(mode: LinkMode, k: usize, error: String) -> Self {
        Self {
            mode,
            k,
            questions: 0,
            table_precision: String::new(),
            table_recall: String::new(),
            table_f1: String::new(),
            fully_correct_rate: String::new(),
            column_recall: String::new(),
            column_precision: String::new(),
            mean_context_tokens: String::new(),
            mean_full_schema_tokens: String::new(),
            mean_reduction_ratio: String::new(),
            fallbacks: 0,
            failures: 0,
            error,
        }
    }
}

impl Pipeline {
    /// Runs focus and SLAM for every `(mode, k)` pair. Each configuration
    /// writes its artifacts to `<output_dir>/sweep/<mode>-k<k>/`; table-link
    /// responses are shared across k values. Returns the rows also written
    /// to `sweep.csv`.
    pub fn run_sweep(
        &self,
        modes: &[LinkMode],
        ks: &[usize],
        gold: &BTreeMap<i64, GoldRecord>,
        opts: &FocusOptions,
    ) -> Result<Vec<SweepRow>> {
        let questions = self.selected_questions(opts)?;
        let res = Resources::load(self, &questions)?;
        let memo = TableLinkMemo::default();
        let mut rows = Vec::new();
        for &mode in modes {
            for &k in ks {
                let mut cfg = self.config.clone();
                cfg.mode = mode;
                cfg.k = k;
                let dir = self.config.output_dir.join("sweep").join(format!("{mode}-k{k}"));
                let row = cfg.validate().and_then(|_| {
                    let summary = self.focus_into(&cfg, &questions, &res, &dir, opts.resume, Some(&memo))?;
                    let links = super::gold::load_links(&dir.join(super::focus::LINKS_FILE))?;
                    let report = score_links(&links, gold)?;
                    write_slam_csv(&dir.join(SLAM_FILE), &report)?;
                    Ok(SweepRow {
                        mode,
                        k,
                        questions: report.per_question.len(),
                        table_precision: io::fmt6(report.table_avg_precision),
                        table_recall: io::fmt6(report.table_avg_recall),
                        table_f1: io::fmt6(report.table_avg_f1),
                        fully_correct_rate: io::fmt6(report.fully_correct_rate),
                        column_recall: io::fmt6(report.column_avg_recall),
                        column_precision: io::fmt6(report.column_avg_precision),
                        mean_context_tokens: io::fmt6(summary.mean_context_tokens),
                        mean_full_schema_tokens: io::fmt6(summary.mean_full_schema_tokens),
                        mean_reduction_ratio: io::fmt6(summary.mean_reduction_ratio),
                        fallbacks: summary.fallbacks,
                        failures: summary.failures.len(),
                        error: String::new(),
                    })
                });
                rows.push(row.unwrap_or_else(|e| {
                    log::error!("sweep {mode} k={k} failed: {e}");
                    SweepRow::failed(mode, k, e.to_string())
                }));
            }
        }
        io::write_csv(&self.output_path(SWEEP_FILE), &rows)?;
        Ok(rows)
    }
}

/// Reads a sweep CSV back as `(mode, k, column_recall)` triples.
pub fn read_sweep_recalls(path: &Path) -> Result<Vec<(String, usize, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| crate::Error::Csv { path: path.to_path_buf(), source: e })?;
    let err = |e| crate::Error::Csv { path: path.to_path_buf(), source: e };
    let headers = r.headers().map_err(err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap_or(usize::MAX);
    let (ki, ri) = (col("k"), col("column_recall"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let k = rec.get(ki).and_then(|v| v.parse().ok()).unwrap_or(0);
        let recall = rec.get(ri).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
        out.push((rec[0].to_string(), k, recall));
    }
    Ok(out)
}
