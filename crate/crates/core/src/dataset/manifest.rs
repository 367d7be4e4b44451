//! Recording manifest: `audio_path<TAB>scene_label<TAB>annotation_path` per line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub scene_label: String,
    pub annotation_path: PathBuf,
}

/// Parses manifest text. Relative paths are resolved against `base`.
pub fn parse_manifest_str(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!(
                    "expected audio_path<TAB>scene_label<TAB>annotation_path, got {} field(s)",
                    fields.len()
                ),
            });
        }
        entries.push(ManifestEntry {
            audio_path: base.join(fields[0]),
            scene_label: fields[1].to_string(),
            annotation_path: base.join(fields[2]),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest_str(&text, base).map_err(|e| e.in_file(path))
}

/// Writes entries relative to the manifest directory when possible.
pub fn format_manifest(entries: &[ManifestEntry], base: &Path) -> String {
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    entries
        .iter()
        .map(|e| {
            format!(
                "{}\t{}\t{}\n",
                rel(&e.audio_path),
                e.scene_label,
                rel(&e.annotation_path)
            )
        })
        .collect()
}
