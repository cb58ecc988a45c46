//! Durable storage: canonical document snapshots and append-only edit logs.
//!
//! A log file starts with a header line `{"baseVersion":…,"replica":…}`
//! followed by one JSON line `{"ts":…,"replica":…,"op":…}` per entry. Every
//! append is flushed and fsynced before returning.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::edit::{apply, EditLog, EditOp, LogEntry, Rejection};
use crate::model::{Document, LoadError, ReplicaId};

/// SHA-256 of a document's canonical JSON, lowercase hex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VersionHash(String);

impl VersionHash {
    pub fn of(doc: &Document) -> Self {
        Self::of_bytes(doc.to_canonical_json().as_bytes())
    }

    pub fn of_bytes(bytes: &[u8]) -> Self {
        VersionHash(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VersionHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for VersionHash {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(VersionHash(s.to_string()))
        } else {
            Err(format!("not a version hash: {s:?}"))
        }
    }
}

impl TryFrom<String> for VersionHash {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<VersionHash> for String {
    fn from(v: VersionHash) -> String {
        v.0
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Load { path: PathBuf, source: LoadError },
    #[error("{path}:{line}: {message}")]
    BadLine { path: PathBuf, line: usize, message: String },
    #[error("log is based on {log}, document is {doc}")]
    VersionMismatch { log: VersionHash, doc: VersionHash },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Writes the canonical serialization of `doc` and returns its hash.
pub fn save_document(doc: &Document, path: &Path) -> Result<VersionHash, StoreError> {
    let json = doc.to_canonical_json();
    fs::write(path, &json).map_err(io_err(path))?;
    Ok(VersionHash::of_bytes(json.as_bytes()))
}

pub fn load_document(path: &Path) -> Result<Document, StoreError> {
    let json = fs::read_to_string(path).map_err(io_err(path))?;
    Document::from_json(&json).map_err(|source| StoreError::Load { path: path.to_path_buf(), source })
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Header {
    base_version: VersionHash,
    replica: ReplicaId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    ts: u64,
    replica: ReplicaId,
    op: EditOp,
}

/// An open edit log, positioned for appending.
pub struct LogWriter {
    file: File,
    path: PathBuf,
    header: Header,
}

impl LogWriter {
    /// Creates (or truncates) a log file and writes its header.
    pub fn create(path: &Path, base_version: VersionHash, replica: ReplicaId) -> Result<Self, StoreError> {
        let mut file = File::create(path).map_err(io_err(path))?;
        let header = Header { base_version, replica };
        let line = serde_json::to_string(&header).expect("header serializes");
        writeln!(file, "{line}").and_then(|_| file.sync_all()).map_err(io_err(path))?;
        Ok(LogWriter { file, path: path.to_path_buf(), header })
    }

    /// Opens an existing log for appending, checking its header against the
    /// expected base version.
    pub fn open(path: &Path, base_version: &VersionHash) -> Result<Self, StoreError> {
        let existing = read_log(path)?;
        if &existing.base_version != base_version {
            return Err(StoreError::VersionMismatch { log: existing.base_version, doc: base_version.clone() });
        }
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        let header = Header { base_version: existing.base_version, replica: existing.replica };
        Ok(LogWriter { file, path: path.to_path_buf(), header })
    }

    pub fn append(&mut self, entry: &LogEntry) -> Result<(), StoreError> {
        let line = Line { ts: entry.ts, replica: self.header.replica.clone(), op: entry.op.clone() };
        let json = serde_json::to_string(&line).expect("log lines serialize");
        let path = &self.path;
        writeln!(self.file, "{json}").and_then(|_| self.file.sync_data()).map_err(io_err(path))
    }
}

/// Writes a complete log file.
pub fn write_log(path: &Path, log: &EditLog) -> Result<(), StoreError> {
    let mut writer = LogWriter::create(path, log.base_version.clone(), log.replica.clone())?;
    for entry in &log.entries {
        writer.append(entry)?;
    }
    Ok(())
}

pub fn read_log(path: &Path) -> Result<EditLog, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_log(BufReader::new(file), path)
}

/// Parses a log from any reader; `path` is used in diagnostics only.
pub fn parse_log(reader: impl BufRead, path: &Path) -> Result<EditLog, StoreError> {
    let bad = |line: usize, message: String| StoreError::BadLine { path: path.to_path_buf(), line, message };
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line.map_err(io_err(path))?).map_err(|e| bad(1, e.to_string()))?,
        None => return Err(bad(1, "missing header".into())),
    };
    let mut log = EditLog::new(header.base_version, header.replica);
    for (i, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: Line = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        if entry.replica != log.replica {
            return Err(bad(i + 1, format!("entry from {} in a log of {}", entry.replica, log.replica)));
        }
        log.entries.push(LogEntry { ts: entry.ts, op: entry.op });
    }
    Ok(log)
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("log is based on {log}, document is {doc}")]
    VersionMismatch { log: VersionHash, doc: VersionHash },
    #[error("entry {index} cannot be applied: {rejection}")]
    Rejected { index: usize, rejection: Rejection },
}

/// Left fold of [`apply`] over the log.
pub fn replay(base: &Document, log: &EditLog) -> Result<Document, ReplayError> {
    let version = VersionHash::of(base);
    if version != log.base_version {
        return Err(ReplayError::VersionMismatch { log: log.base_version.clone(), doc: version });
    }
    replay_ops(base, log.ops())
}

/// Applies ops in order without a version check.
pub fn replay_ops<'a>(base: &Document, ops: impl IntoIterator<Item = &'a EditOp>) -> Result<Document, ReplayError> {
    let mut doc = base.clone();
    for (index, op) in ops.into_iter().enumerate() {
        doc = apply(&doc, op).map_err(|rejection| ReplayError::Rejected { index, rejection })?;
    }
    Ok(doc)
}
