//! Report emission: atomic file writes, JSON or text rendering.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Identifies the model a report was computed with.
#[derive(Clone, Debug, Serialize)]
pub struct ModelId {
    pub file: String,
    /// CRC32 of the whole model file, hex.
    pub crc32: String,
}

impl ModelId {
    pub fn new(path: &Path, bytes: &[u8]) -> Self {
        Self {
            file: path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
            crc32: format!("{:08x}", crc32fast::hash(bytes)),
        }
    }
}

pub trait Render: Serialize {
    fn text(&self) -> String;
}

pub fn render<R: Render>(report: &R, json: bool) -> Result<String> {
    if json {
        let mut s = serde_json::to_string_pretty(report)?;
        s.push('\n');
        Ok(s)
    } else {
        Ok(report.text())
    }
}

/// Writes `contents` through a temporary file in the same directory, so the
/// destination is either untouched or complete.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Sends the rendered report to `out`, or to standard output.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn join_f64(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:.4}");
    }
    s
}

pub fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}
