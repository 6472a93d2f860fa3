//! Line-oriented JSON file helpers.
//!
//! All dataset files in this project are JSONL: UTF-8, one JSON object per
//! line, `\n` endings. Parse failures report the 1-based line number.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a JSONL file into records. Empty files yield an empty list.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes records as JSONL. Key order follows struct field order.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: format!("serialization failed: {e}"),
        })?;
        buf.push_str(&line);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads a whole file as a string with path context on failure.
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes a string with path context on failure.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}
