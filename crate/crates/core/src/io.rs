//! File helpers shared by every artifact writer.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn schema(path: &Path, message: impl Into<String>) -> Self {
        IoError::Schema {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a half-written file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), IoError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).map_err(|e| IoError::io(path, e))?;
        w.flush().map_err(|e| IoError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Parses a file holding JSON documents: one per line, a single array, or any
/// whitespace-separated sequence of documents.
pub fn read_json_documents<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    let stream = serde_json::Deserializer::from_str(&text).into_iter::<serde_json::Value>();
    for value in stream {
        let value = value.map_err(|e| IoError::schema(path, e.to_string()))?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            other => vec![other],
        };
        for item in items {
            out.push(serde_json::from_value(item).map_err(|e| IoError::schema(path, e.to_string()))?);
        }
    }
    Ok(out)
}

/// CSV text for `{}` formatted floats: shortest form that parses back to the
/// same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
