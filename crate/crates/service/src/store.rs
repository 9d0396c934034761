//! Append-only JSON-lines session log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use suffice_core::sufficiency::Assessment;

use crate::api::CreateSession;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        request: CreateSession,
    },
    Demo {
        state: usize,
        action: usize,
        token: Option<String>,
        assessment: Assessment,
    },
    Rated {
        rating: u8,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub session: String,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    file: Mutex<File>,
}

impl Store {
    /// Opens (or creates) the log and returns the records already in it. An
    /// unreadable line is skipped with a warning.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<(Self, Vec<Record>)> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut records = Vec::new();
        if path.exists() {
            for (number, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(record) => records.push(record),
                    Err(e) => tracing::warn!(line = number + 1, error = %e, "skipping unreadable store record"),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let bytes = std::fs::read(&path)?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n")?;
        }
        Ok((
            Self {
                path,
                file: Mutex::new(file),
            },
            records,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &Record) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_survive_reopening() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("sessions.jsonl");
        let created = Record {
            session: "a".into(),
            event: Event::Created {
                request: CreateSession::default(),
            },
        };
        let rated = Record {
            session: "a".into(),
            event: Event::Rated { rating: 4 },
        };
        {
            let (store, existing) = Store::open(&path).unwrap();
            assert!(existing.is_empty());
            store.append(&created).unwrap();
            store.append(&rated).unwrap();
        }
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"session\": \"trunc");
        std::fs::write(&path, text).unwrap();
        let (store, records) = Store::open(&path).unwrap();
        assert_eq!(records, vec![created.clone(), rated.clone()]);
        store.append(&rated).unwrap();
        drop(store);
        let (_, records) = Store::open(&path).unwrap();
        assert_eq!(records, vec![created, rated.clone(), rated]);
    }
}
