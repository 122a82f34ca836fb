//! File helpers: atomic writes and JSON Lines parsing.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

/// Write a file atomically (temp file in the same directory, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Parse a JSON Lines string, reporting the 1-based line number on failure.
/// Blank lines are skipped.
pub fn parse_jsonl<T: DeserializeOwned>(
    content: &str,
) -> Result<Vec<(usize, T)>, (usize, serde_json::Error)> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        // Blank lines and `#` comments are skipped so artifacts can carry
        // a provenance header (tool, seed) above the records.
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        match serde_json::from_str(line) {
            Ok(v) => out.push((lineno, v)),
            Err(e) => return Err((lineno, e)),
        }
    }
    Ok(out)
}
