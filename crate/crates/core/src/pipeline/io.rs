//! JSONL and CSV plumbing shared by the pipeline stages.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Appends one JSON document per line. Each line goes out in a single
/// `write_all` followed by a flush, so concurrent writers never interleave
/// and a crash leaves at most one torn final line.
pub struct JsonlAppender {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlAppender {
    pub fn open(path: &Path) -> Result<Self> {
        ensure_parent(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<()> {
        let mut line = serde_json::to_string(record).map_err(|e| Error::json(&self.path, e))?;
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

/// Reads a JSONL file. Malformed lines fail unless `lenient`, in which case
/// they are skipped with a warning (torn tail of an interrupted run).
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, lenient: bool) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) if lenient => log::warn!("{}:{}: skipping malformed line: {e}", path.display(), n + 1),
            Err(e) => return Err(Error::json(path, e)),
        }
    }
    Ok(out)
}

/// Writes `records` as JSONL through a temporary file and a rename.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::json(path, e))?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes rows with a header into CSV bytes.
pub fn csv_bytes<R: Serialize>(path: &Path, rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })?;
    }
    w.into_inner().map_err(|e| Error::Csv { path: path.to_path_buf(), source: e.into_error().into() })
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let bytes = csv_bytes(path, rows)?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Formats a float with fixed precision so reports are byte-stable.
pub fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: i64,
    }

    #[test]
    fn append_then_read_skips_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/r.jsonl");
        let w = JsonlAppender::open(&p).unwrap();
        w.append(&Rec { id: 1 }).unwrap();
        w.append(&Rec { id: 2 }).unwrap();
        drop(w);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"id\":").unwrap();
        let got: Vec<Rec> = read_jsonl(&p, true).unwrap();
        assert_eq!(got, [Rec { id: 1 }, Rec { id: 2 }]);
        assert!(read_jsonl::<Rec>(&p, false).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        write_jsonl(&p, &[Rec { id: 3 }]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "{\"id\":3}\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
