//! Append-only JSON-lines event storage.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

pub const EVENT_LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Parent,
    Youth,
    System,
}

impl From<crate::preference::Role> for Actor {
    fn from(role: crate::preference::Role) -> Self {
        match role {
            crate::preference::Role::Parent => Actor::Parent,
            crate::preference::Role::Youth => Actor::Youth,
            crate::preference::Role::Co => Actor::System,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub pair_id: String,
    pub actor: Actor,
    pub kind: String,
    pub payload: serde_json::Value,
    pub at: Timestamp,
}

pub trait EventStore: Send {
    fn load(&mut self) -> std::io::Result<Vec<EventRecord>>;
    fn append(&mut self, record: &EventRecord) -> std::io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    pub records: Vec<EventRecord>,
}

impl EventStore for MemoryStore {
    fn load(&mut self) -> std::io::Result<Vec<EventRecord>> {
        Ok(self.records.clone())
    }

    fn append(&mut self, record: &EventRecord) -> std::io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// One JSON record per line; every append is flushed before returning.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: Option<File>,
}

impl FileStore {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            path: dir.join(EVENT_LOG_FILE),
            file: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn invalid(line: usize, e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {line}: {e}"))
}

impl EventStore for FileStore {
    fn load(&mut self) -> std::io::Result<Vec<EventRecord>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| invalid(i + 1, e))?);
        }
        Ok(out)
    }

    fn append(&mut self, record: &EventRecord) -> std::io::Result<()> {
        if self.file.is_none() {
            self.file = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&self.path)?,
            );
        }
        let file = self.file.as_mut().expect("opened above");
        let mut line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = EventRecord {
            seq: 1,
            pair_id: "pair-1".into(),
            actor: Actor::System,
            kind: "pair.created".into(),
            payload: serde_json::json!({"code": "ABC123"}),
            at: Timestamp(5),
        };
        let mut store = FileStore::open(dir.path()).unwrap();
        assert!(store.load().unwrap().is_empty());
        store.append(&rec).unwrap();
        store
            .append(&EventRecord {
                seq: 2,
                ..rec.clone()
            })
            .unwrap();
        let mut reopened = FileStore::open(dir.path()).unwrap();
        let loaded = reopened.load().unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0], rec);
    }

    #[test]
    fn corrupt_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(EVENT_LOG_FILE), "{\"seq\":1}\n").unwrap();
        let err = FileStore::open(dir.path()).unwrap().load().unwrap_err();
        assert!(err.to_string().starts_with("line 1"));
    }
}
