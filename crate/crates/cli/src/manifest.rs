//! Training manifests.
//!
//! ```text
//! [horse jumping #0]
//! images/a.pgm 3 4 40 52
//! images/b.pgm 0 0 31 29.5
//! ```
//!
//! Each section names a phrase and an optional component id (default 0);
//! each entry is an image path relative to the manifest and its box.

use std::fs;
use std::path::{Path, PathBuf};

use spt_core::spt::normalize_phrase;
use spt_core::BoundingBox;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("manifest has no entries")]
    Empty,
    #[error("section [{phrase} #{component}] appears twice")]
    DuplicateSection { phrase: String, component: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// Path as written, used as the image id.
    pub id: String,
    pub path: PathBuf,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub phrase: String,
    pub component: u32,
    pub entries: Vec<Entry>,
}

pub fn load(path: &Path) -> Result<Vec<Section>, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text, path.parent().unwrap_or(Path::new("")))
}

pub fn parse(text: &str, base: &Path) -> Result<Vec<Section>, ManifestError> {
    let mut sections: Vec<Section> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| ManifestError::Syntax { line: ln + 1, msg };
        if let Some(inner) = line.strip_prefix('[') {
            let inner = inner.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
            let (phrase, component) = match inner.rsplit_once('#') {
                Some((p, c)) => (p, c.trim().parse().map_err(|_| err(format!("bad component id {c:?}")))?),
                None => (inner, 0),
            };
            let phrase = normalize_phrase(phrase);
            if phrase.is_empty() {
                return Err(err("empty phrase".into()));
            }
            if sections.iter().any(|s| s.phrase == phrase && s.component == component) {
                return Err(ManifestError::DuplicateSection { phrase, component });
            }
            sections.push(Section {
                phrase,
                component,
                entries: Vec::new(),
            });
            continue;
        }
        let section = sections.last_mut().ok_or_else(|| err("entry before any [phrase] header".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 5 {
            return Err(err("expected `path x0 y0 x1 y1`".into()));
        }
        let (path_tokens, coord_tokens) = tokens.split_at(tokens.len() - 4);
        let coords = coord_tokens
            .iter()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err("non-numeric box coordinate".into()))?;
        let id = path_tokens.join(" ");
        section.entries.push(Entry {
            path: base.join(&id),
            id,
            bbox: BoundingBox::new(coords[0], coords[1], coords[2], coords[3]),
        });
    }
    if sections.iter().all(|s| s.entries.is_empty()) {
        return Err(ManifestError::Empty);
    }
    Ok(sections)
}
