//! Append-only JSON-lines log of task events.
//!
//! The log is the source of truth for task state; label files are derived
//! from it. A crash can leave at most one torn line at the end, which is
//! dropped on the next open.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::AnnotateError;
use crate::task::TaskEvent;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub task: String,
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: TaskEvent,
}

struct Writer {
    file: File,
    next_seq: u64,
}

pub struct Journal {
    path: PathBuf,
    writer: Mutex<Writer>,
}

fn journal_err(path: &Path, e: impl std::fmt::Display) -> AnnotateError {
    AnnotateError::Journal(format!("{}: {e}", path.display()))
}

impl Journal {
    /// Opens or creates the journal and returns the entries already in it.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<JournalEntry>), AnnotateError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| journal_err(dir, e))?;
        }
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(journal_err(&path, e)),
        };
        let mut entries = Vec::new();
        let mut valid_len = 0;
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            offset += line.len();
            let body = line.trim_end();
            if body.is_empty() {
                valid_len = offset;
                continue;
            }
            match serde_json::from_str::<JournalEntry>(body) {
                Ok(entry) if line.ends_with('\n') => {
                    entries.push(entry);
                    valid_len = offset;
                }
                // Unterminated final line: an interrupted append.
                _ if offset == text.len() && !line.ends_with('\n') => {
                    log::warn!("{}: dropping torn final line", path.display());
                }
                Ok(_) => unreachable!("only the final line can lack a newline"),
                Err(e) => {
                    return Err(journal_err(&path, format!("entry {} unreadable: {e}", entries.len() + 1)));
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| journal_err(&path, e))?;
        if valid_len < text.len() {
            file.set_len(valid_len as u64).map_err(|e| journal_err(&path, e))?;
        }
        let next_seq = entries.last().map_or(1, |e| e.seq + 1);
        let journal = Journal {
            path,
            writer: Mutex::new(Writer { file, next_seq }),
        };
        Ok((journal, entries))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one event and syncs it to disk before returning.
    pub fn append(&self, task: &str, event: TaskEvent) -> Result<JournalEntry, AnnotateError> {
        let at_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        let mut w = self.writer.lock();
        let entry = JournalEntry {
            seq: w.next_seq,
            task: task.to_string(),
            at_ms,
            event,
        };
        let mut line = serde_json::to_string(&entry).map_err(|e| journal_err(&self.path, e))?;
        line.push('\n');
        w.file.write_all(line.as_bytes()).map_err(|e| journal_err(&self.path, e))?;
        w.file.sync_data().map_err(|e| journal_err(&self.path, e))?;
        w.next_seq += 1;
        Ok(entry)
    }
}
