//! JSON-lines persistence for sweep records and tuning results.
//!
//! Each file holds one JSON object per line. Appends are single
//! `write_all` calls of a complete line under a process-wide lock, so a
//! reader never sees a torn record from this process. A finished sweep
//! rewrites its file in canonical key order through a temporary file and an
//! atomic rename.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::splitsweep::SweepRecord;

pub const RECORDS_FILE: &str = "records.jsonl";

/// Reads every line of a JSON-lines file. A missing file reads as empty;
/// blank lines are skipped; anything unparsable is reported with its
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Appends one record as a single line.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.flush()?;
    Ok(())
}

/// Replaces `path` with `values`, one per line, via a temporary file.
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// The sweep records of one run directory, keyed by cell.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    records: Mutex<BTreeMap<String, SweepRecord>>,
}

impl RunStore {
    /// Opens (creating if needed) a run directory and loads its records.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let store = RunStore {
            records: Mutex::new(BTreeMap::new()),
            dir,
        };
        let loaded: Vec<SweepRecord> = read_jsonl(&store.records_path())?;
        {
            let mut map = store.records.lock().unwrap();
            for (i, r) in loaded.into_iter().enumerate() {
                r.validate().map_err(|msg| Error::Corrupt {
                    path: store.records_path(),
                    line: i + 1,
                    msg,
                })?;
                map.insert(r.key(), r);
            }
        }
        Ok(store)
    }

    /// Loads an existing run directory without creating anything.
    pub fn open_existing(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.join(RECORDS_FILE).is_file() {
            return Err(Error::EmptySelection(format!(
                "no {RECORDS_FILE} in {}",
                dir.display()
            )));
        }
        Self::open(dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.records.lock().unwrap().contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<SweepRecord> {
        self.records.lock().unwrap().get(key).cloned()
    }

    /// Persists a completed cell. Keys are write-once: a second record for
    /// the same key is ignored and `false` is returned.
    pub fn insert(&self, record: SweepRecord) -> Result<bool> {
        let mut map = self.records.lock().unwrap();
        let key = record.key();
        if map.contains_key(&key) {
            return Ok(false);
        }
        append_jsonl(&self.records_path(), &record)?;
        map.insert(key, record);
        Ok(true)
    }

    /// All records in canonical order (budget, ensemble size, replicate).
    pub fn records(&self) -> Vec<SweepRecord> {
        let mut v: Vec<SweepRecord> = self.records.lock().unwrap().values().cloned().collect();
        v.sort_by_key(|r| r.sort_key());
        v
    }

    /// Rewrites the records file in canonical order so that identical runs
    /// produce identical bytes regardless of completion order.
    pub fn canonicalize(&self) -> Result<()> {
        let records = self.records();
        let _guard = self.records.lock().unwrap();
        write_jsonl_atomic(&self.records_path(), &records)
    }
}
