//! The segment-phrase table: `(phrase, component)` to segmentation model,
//! plus the top-scoring exemplar masks of each phrase.
//!
//! On disk a table is a single file:
//!
//! ```text
//! magic        8 bytes   "SPTABLE\0"
//! version      u32 LE
//! index_len    u64 LE
//! payload_len  u64 LE
//! index        JSON (entry and exemplar metadata, in payload order)
//! payload      f64 LE blocks and run-length mask bitmaps
//! crc32        u32 LE over every preceding byte
//! ```
//!
//! All floating-point values live in the payload so they round-trip bit
//! for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::GaussianMixture;
use crate::latent::{ModelMetadata, SegmentationModel};

pub const MAGIC: [u8; 8] = *b"SPTABLE\0";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EXEMPLARS: usize = 10;
const HEADER_LEN: usize = 8 + 4 + 8 + 8;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid phrase key: {0}")]
    InvalidKey(String),
    #[error("not a segment-phrase table of a supported version (magic {magic:?}, version {version})")]
    VersionMismatch { magic: [u8; 8], version: u32 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated table: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("corrupt table: {0}")]
    Corrupt(String),
}

/// Lowercases and collapses runs of whitespace to single spaces.
pub fn normalize_phrase(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhraseKey {
    phrase: String,
    component_id: u32,
}

impl PhraseKey {
    pub fn new(phrase: &str, component_id: u32) -> Result<Self, TableError> {
        let phrase = normalize_phrase(phrase);
        if phrase.is_empty() {
            return Err(TableError::InvalidKey("empty phrase".into()));
        }
        Ok(Self { phrase, component_id })
    }

    pub fn phrase(&self) -> &str {
        &self.phrase
    }

    pub fn component_id(&self) -> u32 {
        self.component_id
    }
}

/// A stored foreground mask at superpixel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarMask {
    pub image_id: String,
    /// Where the superpixel map the labels refer to can be found.
    pub sidecar: String,
    pub score: f64,
    pub labels: Vec<bool>,
    /// Appearance-and-shape descriptor used for visual similarity.
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub model: SegmentationModel,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPhraseTable {
    max_exemplars: usize,
    entries: BTreeMap<PhraseKey, TableEntry>,
    exemplars: BTreeMap<String, Vec<ExemplarMask>>,
}

impl Default for SegmentPhraseTable {
    fn default() -> Self {
        Self::new(DEFAULT_EXEMPLARS)
    }
}

impl SegmentPhraseTable {
    pub fn new(max_exemplars: usize) -> Self {
        Self {
            max_exemplars,
            entries: BTreeMap::new(),
            exemplars: BTreeMap::new(),
        }
    }

    pub fn max_exemplars(&self) -> usize {
        self.max_exemplars
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.exemplars.is_empty()
    }

    /// Inserts or replaces; returns the entry's version (1 on first insert).
    pub fn insert(&mut self, key: PhraseKey, model: SegmentationModel) -> u32 {
        let version = self.entries.get(&key).map_or(1, |e| e.version + 1);
        self.entries.insert(key, TableEntry { model, version });
        version
    }

    pub fn get(&self, key: &PhraseKey) -> Option<&TableEntry> {
        self.entries.get(key)
    }

    /// Every component of `phrase` after normalisation, by component id.
    pub fn query(&self, phrase: &str) -> Vec<(&PhraseKey, &SegmentationModel)> {
        let phrase = normalize_phrase(phrase);
        self.entries.iter().filter(|(k, _)| k.phrase == phrase).map(|(k, e)| (k, &e.model)).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&PhraseKey, &TableEntry)> {
        self.entries.iter()
    }

    pub fn phrases(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.entries.keys().map(|k| k.phrase.as_str()).chain(self.exemplars.keys().map(String::as_str)).collect();
        out.dedup();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Adds an exemplar, keeping the list sorted by descending score (ties
    /// by ascending image id) and at most `max_exemplars` long.
    pub fn add_exemplar(&mut self, phrase: &str, ex: ExemplarMask) -> Result<(), TableError> {
        let phrase = normalize_phrase(phrase);
        if phrase.is_empty() {
            return Err(TableError::InvalidKey("empty phrase".into()));
        }
        if !ex.score.is_finite() {
            return Err(TableError::InvalidKey(format!("non-finite exemplar score for {phrase:?}")));
        }
        let list = self.exemplars.entry(phrase).or_default();
        let at = list.partition_point(|e| e.score > ex.score || (e.score == ex.score && e.image_id <= ex.image_id));
        list.insert(at, ex);
        list.truncate(self.max_exemplars);
        Ok(())
    }

    pub fn exemplars(&self, phrase: &str) -> &[ExemplarMask] {
        self.exemplars.get(&normalize_phrase(phrase)).map_or(&[], Vec::as_slice)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TableError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Payload::default();
        let mut index = Index {
            max_exemplars: self.max_exemplars,
            entries: Vec::new(),
            exemplars: Vec::new(),
        };
        for (key, entry) in &self.entries {
            let m = &entry.model;
            payload.f64(m.lambda);
            payload.mixture(&m.theta_fg);
            payload.mixture(&m.theta_bg);
            index.entries.push(EntryMeta {
                key: key.clone(),
                version: entry.version,
                metadata: m.metadata.clone(),
                dim: m.dim(),
                k_fg: m.theta_fg.k(),
                k_bg: m.theta_bg.k(),
            });
        }
        for (phrase, list) in &self.exemplars {
            for ex in list {
                payload.f64(ex.score);
                payload.f64s(&ex.descriptor);
                let runs = rle_encode(&ex.labels);
                for &r in &runs {
                    payload.0.extend_from_slice(&r.to_le_bytes());
                }
                index.exemplars.push(ExemplarMeta {
                    phrase: phrase.clone(),
                    image_id: ex.image_id.clone(),
                    sidecar: ex.sidecar.clone(),
                    labels: ex.labels.len(),
                    runs: runs.len(),
                    descriptor: ex.descriptor.len(),
                });
            }
        }
        let index = serde_json::to_vec(&index).expect("index serialises");
        let mut out = Vec::with_capacity(HEADER_LEN + index.len() + payload.0.len() + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(index.len() as u64).to_le_bytes());
        out.extend_from_slice(&(payload.0.len() as u64).to_le_bytes());
        out.extend_from_slice(&index);
        out.extend_from_slice(&payload.0);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TableError> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(TableError::Truncated {
                expected: HEADER_LEN + 4,
                found: bytes.len(),
            });
        }
        let magic: [u8; 8] = bytes[..8].try_into().expect("8 bytes");
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if magic != MAGIC || version != FORMAT_VERSION {
            return Err(TableError::VersionMismatch { magic, version });
        }
        let index_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let payload_len = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
        let expected = HEADER_LEN.saturating_add(index_len).saturating_add(payload_len).saturating_add(4);
        if bytes.len() < expected {
            return Err(TableError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(TableError::Corrupt(format!("{} trailing bytes", bytes.len() - expected)));
        }
        let body = &bytes[..expected - 4];
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(TableError::Checksum { stored, computed });
        }
        let index: Index = serde_json::from_slice(&body[HEADER_LEN..HEADER_LEN + index_len]).map_err(|e| TableError::Corrupt(format!("index: {e}")))?;
        let mut rd = Reader {
            buf: &body[HEADER_LEN + index_len..],
            pos: 0,
        };

        let mut table = Self::new(index.max_exemplars);
        for meta in index.entries {
            let lambda = rd.f64()?;
            let theta_fg = rd.mixture(meta.k_fg, meta.dim)?;
            let theta_bg = rd.mixture(meta.k_bg, meta.dim)?;
            let model = SegmentationModel::new(theta_fg, theta_bg, lambda, meta.metadata).map_err(|e| TableError::Corrupt(e.to_string()))?;
            if table.entries.insert(meta.key, TableEntry { model, version: meta.version }).is_some() {
                return Err(TableError::Corrupt("duplicate key".into()));
            }
        }
        for meta in index.exemplars {
            let score = rd.f64()?;
            let descriptor = rd.f64s(meta.descriptor)?;
            let runs = (0..meta.runs).map(|_| rd.u32()).collect::<Result<Vec<_>, _>>()?;
            let labels = rle_decode(&runs, meta.labels)?;
            // stored lists are already ordered and bounded
            table.exemplars.entry(meta.phrase).or_default().push(ExemplarMask {
                image_id: meta.image_id,
                sidecar: meta.sidecar,
                score,
                labels,
                descriptor,
            });
        }
        if rd.pos != rd.buf.len() {
            return Err(TableError::Corrupt(format!("{} unread payload bytes", rd.buf.len() - rd.pos)));
        }
        Ok(table)
    }
}

#[derive(Serialize, Deserialize)]
struct Index {
    max_exemplars: usize,
    entries: Vec<EntryMeta>,
    exemplars: Vec<ExemplarMeta>,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    key: PhraseKey,
    version: u32,
    metadata: ModelMetadata,
    dim: usize,
    k_fg: usize,
    k_bg: usize,
}

#[derive(Serialize, Deserialize)]
struct ExemplarMeta {
    phrase: String,
    image_id: String,
    sidecar: String,
    labels: usize,
    runs: usize,
    descriptor: usize,
}

#[derive(Default)]
struct Payload(Vec<u8>);

impl Payload {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }

    fn mixture(&mut self, g: &GaussianMixture) {
        self.f64s(g.weights());
        g.means().iter().for_each(|m| self.f64s(m));
        g.variances().iter().for_each(|v| self.f64s(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], TableError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| TableError::Corrupt("payload shorter than index describes".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64, TableError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32, TableError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, TableError> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn mixture(&mut self, k: usize, d: usize) -> Result<GaussianMixture, TableError> {
        let weights = self.f64s(k)?;
        let means = (0..k).map(|_| self.f64s(d)).collect::<Result<_, _>>()?;
        let variances = (0..k).map(|_| self.f64s(d)).collect::<Result<_, _>>()?;
        GaussianMixture::new(weights, means, variances).map_err(|e| TableError::Corrupt(e.to_string()))
    }
}

/// Alternating run lengths, the first run counting `false` values.
fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    runs
}

fn rle_decode(runs: &[u32], n: usize) -> Result<Vec<bool>, TableError> {
    let mut out = Vec::with_capacity(n);
    for (i, &r) in runs.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    if out.len() != n {
        return Err(TableError::Corrupt(format!("mask decodes to {} labels, expected {n}", out.len())));
    }
    Ok(out)
}
