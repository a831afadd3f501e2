//! Append-only JSON-lines summary store.
//!
//! Each line is `{"key": {...}, "record": {...}, "ts": <unix seconds>}`. The
//! in-memory index is rebuilt from the file on open; the last line for a key
//! wins. Lines that fail to parse or re-validate are skipped with a warning,
//! so a torn final write does not poison the store.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use nlverify_core::summary::{validate_with_warnings, SummarySource};
use nlverify_core::{PassTag, SummaryKey, SummaryRecord};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
#[error("store {path}: {source}")]
pub struct StoreError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: SummaryKey,
    record: Value,
    ts: u64,
}

#[derive(Default)]
struct Index {
    by_key: HashMap<SummaryKey, SummaryRecord>,
    latest: HashMap<(String, PassTag), SummaryKey>,
}

impl Index {
    fn insert(&mut self, key: SummaryKey, rec: SummaryRecord) -> Option<SummaryRecord> {
        self.latest.insert((key.function.clone(), key.pass), key.clone());
        self.by_key.insert(key, rec)
    }
}

pub struct Store {
    path: Option<PathBuf>,
    index: RwLock<Index>,
    /// Held for the whole of an upsert so appends and index updates are
    /// applied in the same order.
    writer: Mutex<Option<File>>,
}

impl Store {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Store { path: None, index: RwLock::default(), writer: Mutex::new(None) }
    }

    /// Open (creating if needed) the store file and rebuild the index.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let err = |source| StoreError { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(err)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path).map_err(err)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(err)?;
        if !text.is_empty() && !text.ends_with('\n') {
            // terminate a torn final line so the next append starts cleanly
            file.write_all(b"\n").map_err(err)?;
        }
        let mut index = Index::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = match serde_json::from_str(line) {
                Ok(l) => l,
                Err(e) => {
                    log::warn!("{}:{}: skipping unreadable store line: {e}", path.display(), n + 1);
                    continue;
                }
            };
            match validate_with_warnings(parsed.key.pass, &parsed.record) {
                Ok((rec, _)) => {
                    index.insert(parsed.key, rec);
                }
                Err(e) => log::warn!("{}:{}: skipping invalid stored summary: {e}", path.display(), n + 1),
            }
        }
        Ok(Store { path: Some(path.to_path_buf()), index: RwLock::new(index), writer: Mutex::new(Some(file)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Record `rec` under `key`, returning what the key held before.
    pub fn upsert(&self, key: SummaryKey, rec: SummaryRecord) -> Result<Option<SummaryRecord>, StoreError> {
        let mut writer = self.writer.lock().expect("store writer poisoned");
        if let Some(file) = writer.as_mut() {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            let line = Line { key: key.clone(), record: rec.to_value(), ts };
            let mut text = serde_json::to_string(&line).expect("store lines serialize");
            text.push('\n');
            file.write_all(text.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| StoreError { path: self.path.clone().unwrap_or_default(), source })?;
        }
        let prev = self.index.write().expect("store index poisoned").insert(key, rec);
        Ok(prev)
    }

    pub fn lookup(&self, key: &SummaryKey) -> Option<SummaryRecord> {
        self.index.read().expect("store index poisoned").by_key.get(key).cloned()
    }

    /// The most recently written record of `function` for `pass`, with its key.
    pub fn latest_entry(&self, function: &str, pass: PassTag) -> Option<(SummaryKey, SummaryRecord)> {
        let idx = self.index.read().expect("store index poisoned");
        let key = idx.latest.get(&(function.to_string(), pass))?;
        idx.by_key.get(key).map(|r| (key.clone(), r.clone()))
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("store index poisoned").by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every (function, pass) with a latest record, sorted.
    pub fn functions(&self) -> Vec<(String, PassTag)> {
        let mut v: Vec<_> = self.index.read().expect("store index poisoned").latest.keys().cloned().collect();
        v.sort();
        v
    }
}

impl SummarySource for Store {
    fn latest(&self, function: &str, pass: PassTag) -> Option<SummaryRecord> {
        self.latest_entry(function, pass).map(|(_, r)| r)
    }
}
