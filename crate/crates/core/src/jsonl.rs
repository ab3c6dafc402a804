//! Line-delimited JSON readers and writers shared by every pipeline stage.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Encode { line: usize, source: serde_json::Error },
}

/// Reads every record from a JSONL stream. Blank lines are tolerated;
/// anything else that fails to parse reports its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records as one JSON object per line.
pub fn write_jsonl<T: Serialize>(
    mut writer: impl Write,
    records: impl IntoIterator<Item = impl std::borrow::Borrow<T>>,
) -> Result<(), JsonlError> {
    for (i, record) in records.into_iter().enumerate() {
        let line = serde_json::to_string(record.borrow())
            .map_err(|source| JsonlError::Encode { line: i + 1, source })?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
