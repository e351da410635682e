//! Line-oriented JSON reading shared by the registry and corpus loaders.

use std::io::BufRead;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Parse every non-blank line of `path` as a JSON value of type `T` and hand
/// it to `f` together with its 1-based line number.
///
/// Blank lines are tolerated (some exporters emit a trailing newline); any
/// other parse failure aborts with the offending line number.
pub(crate) fn for_each_record<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: DeserializeOwned,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            source: e,
        })?;
        f(idx + 1, record)?;
    }
    Ok(())
}

/// Serialize `records` as one JSON object per line.
pub(crate) fn write_records<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
