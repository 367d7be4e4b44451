//! Event annotation text: one `onset offset label` triple per line,
//! tab or whitespace separated. Leading columns (audio file, scene) are
//! skipped; the triple starts at the first pair of numeric fields.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub onset: f64,
    pub offset: f64,
    pub label: String,
}

impl AnnotationEvent {
    pub fn new(onset: f64, offset: f64, label: impl Into<String>) -> Result<Self> {
        if !(onset.is_finite() && offset.is_finite()) || onset < 0.0 || offset <= onset {
            return Err(Error::InvalidInput(format!(
                "event needs 0 <= onset < offset, got [{onset}, {offset})"
            )));
        }
        Ok(Self {
            onset,
            offset,
            label: label.into(),
        })
    }
}

fn parse_time(field: &str) -> Option<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_line(line: &str) -> std::result::Result<Option<AnnotationEvent>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let fields: Vec<&str> = if trimmed.contains('\t') {
        trimmed.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect()
    } else {
        trimmed.split_whitespace().collect()
    };
    let joiner = if trimmed.contains('\t') { "\t" } else { " " };

    let start = (0..fields.len().saturating_sub(2))
        .find(|&i| parse_time(fields[i]).is_some() && parse_time(fields[i + 1]).is_some());
    let Some(i) = start else {
        return Err(format!("expected numeric onset and offset followed by a label in {trimmed:?}"));
    };
    let onset = parse_time(fields[i]).unwrap();
    let offset = parse_time(fields[i + 1]).unwrap();
    let label = fields[i + 2..].join(joiner);
    if onset < 0.0 {
        return Err(format!("negative onset {onset}"));
    }
    if offset <= onset {
        return Err(format!("offset {offset} is not after onset {onset}"));
    }
    Ok(Some(AnnotationEvent {
        onset,
        offset,
        label,
    }))
}

/// Parses annotation text; errors carry the 1-based line number.
pub fn parse_annotations_str(text: &str) -> Result<Vec<AnnotationEvent>> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        match parse_line(line) {
            Ok(Some(ev)) => events.push(ev),
            Ok(None) => {}
            Err(message) => return Err(Error::Parse { line: idx + 1, message }),
        }
    }
    Ok(events)
}

pub fn parse_annotations(path: &Path) -> Result<Vec<AnnotationEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_annotations_str(&text).map_err(|e| e.in_file(path))
}

/// Serializes events as `onset<TAB>offset<TAB>label` lines.
pub fn format_annotations(events: &[AnnotationEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        writeln!(out, "{}\t{}\t{}", ev.onset, ev.offset, ev.label).unwrap();
    }
    out
}
