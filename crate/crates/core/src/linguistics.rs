//! Phrase embeddings and linguistically rescored semantic segmentation.
//!
//! A test image is segmented once per surviving detection with the
//! phrase's table model. The resulting masks are rescored by one round of
//! message passing over phrase similarity, sum-pooled into a single weight
//! map and cut again.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::imaging::{self, BoundingBox, Image, ImageError, PixelMask, SuperpixelGraph, SuperpixelMap};
use crate::latent::{self, LatentError};
use crate::mrf::{self, Labeling, MrfError, MrfProblem};
use crate::spt::{normalize_phrase, SegmentPhraseTable};

#[derive(Debug, Error)]
pub enum LinguisticsError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding header: {0}")]
    Header(String),
    #[error("line {line}: word {word:?} has {found} components, expected {expected}")]
    RaggedRow {
        line: usize,
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-numeric token {token:?}")]
    NonNumeric { line: usize, token: String },
    #[error("duplicate word {0:?}")]
    DuplicateWord(String),
    #[error("header declares {declared} words, file has {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("empty phrase")]
    EmptyPhrase,
    #[error("no word of {0:?} is in the vocabulary")]
    OutOfVocabulary(String),
    #[error("phrase {0:?} has a zero composite vector; cosine is undefined")]
    ZeroNorm(String),
    #[error("no masks to fuse")]
    NoMasks,
    #[error("mask for {phrase:?} has {found} labels, graph has {expected} superpixels")]
    MaskMismatch { phrase: String, expected: usize, found: usize },
    #[error("phrase {0:?} is not in the segment-phrase table")]
    UnknownPhrase(String),
    #[error("detections line {line}: {msg}")]
    Detection { line: usize, msg: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

/// Composite vector of a phrase and how many of its words were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseVector {
    pub vector: Vec<f64>,
    pub missing_words: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn insert(&mut self, word: &str, v: Vec<f64>) -> Result<(), LinguisticsError> {
        let word = word.to_lowercase();
        if v.len() != self.dim {
            return Err(LinguisticsError::RaggedRow {
                line: 0,
                word,
                expected: self.dim,
                found: v.len(),
            });
        }
        if self.vectors.contains_key(&word) {
            return Err(LinguisticsError::DuplicateWord(word));
        }
        self.vectors.insert(word, v);
        Ok(())
    }

    /// Element-wise sum of the in-vocabulary word vectors.
    pub fn phrase_vector(&self, phrase: &str) -> Result<PhraseVector, LinguisticsError> {
        let norm = normalize_phrase(phrase);
        if norm.is_empty() {
            return Err(LinguisticsError::EmptyPhrase);
        }
        let mut vector = vec![0.0; self.dim];
        let (mut found, mut missing_words) = (0, 0);
        for word in norm.split(' ') {
            match self.vectors.get(word) {
                Some(v) => {
                    vector.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                    found += 1;
                }
                None => missing_words += 1,
            }
        }
        if found == 0 {
            return Err(LinguisticsError::OutOfVocabulary(norm));
        }
        Ok(PhraseVector { vector, missing_words })
    }

    /// Cosine of the composite vectors of `p` and `q`.
    pub fn psi(&self, p: &str, q: &str) -> Result<f64, LinguisticsError> {
        let a = self.phrase_vector(p)?.vector;
        let b = self.phrase_vector(q)?.vector;
        let na = norm(&a);
        let nb = norm(&b);
        if na == 0.0 {
            return Err(LinguisticsError::ZeroNorm(normalize_phrase(p)));
        }
        if nb == 0.0 {
            return Err(LinguisticsError::ZeroNorm(normalize_phrase(q)));
        }
        if a == b {
            return Ok(1.0);
        }
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        Ok((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, LinguisticsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LinguisticsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_embeddings(&text)
}

/// word2vec text layout: a `vocab_size dim` header, then `word v1 .. vD`.
pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable, LinguisticsError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| LinguisticsError::Header("empty file".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let parse = |t: &str| t.parse::<usize>().map_err(|_| LinguisticsError::Header(format!("expected `vocab_size dim`, got {header:?}")));
    if h.len() != 2 {
        return Err(LinguisticsError::Header(format!("expected `vocab_size dim`, got {header:?}")));
    }
    let (declared, dim) = (parse(h[0])?, parse(h[1])?);
    if dim == 0 {
        return Err(LinguisticsError::Header("zero dimension".into()));
    }
    let mut table = EmbeddingTable::new(dim);
    for (ln, line) in lines {
        let mut tokens = line.split_whitespace();
        let word = tokens.next().expect("non-blank line").to_lowercase();
        let values = tokens
            .map(|t| {
                t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| LinguisticsError::NonNumeric {
                    line: ln + 1,
                    token: t.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != dim {
            return Err(LinguisticsError::RaggedRow {
                line: ln + 1,
                word,
                expected: dim,
                found: values.len(),
            });
        }
        if table.vectors.insert(word.clone(), values).is_some() {
            return Err(LinguisticsError::DuplicateWord(word));
        }
    }
    if table.len() != declared {
        return Err(LinguisticsError::CountMismatch {
            declared,
            found: table.len(),
        });
    }
    Ok(table)
}

/// Foreground mask at superpixel resolution for one phrase, with its
/// weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMask {
    pub phrase: String,
    pub mask: Vec<bool>,
    pub score: f64,
}

/// Pairwise phrase affinities used for rescoring: 1 between masks of the
/// same phrase (including each mask with itself), otherwise the cosine
/// clamped below at 0.
pub fn affinity_matrix(masks: &[WeightedMask], t: &EmbeddingTable) -> Result<Vec<Vec<f64>>, LinguisticsError> {
    let phrases: Vec<String> = masks.iter().map(|m| normalize_phrase(&m.phrase)).collect();
    let n = masks.len();
    let mut a = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if phrases[i] != phrases[j] {
                let s = t.psi(&phrases[i], &phrases[j])?.max(0.0);
                a[i][j] = s;
                a[j][i] = s;
            }
        }
    }
    Ok(a)
}

/// One simultaneous update `s'_p = Σ_q a_pq s_q`.
pub fn rescore(scores: &[f64], affinity: &[Vec<f64>]) -> Vec<f64> {
    affinity.iter().map(|row| row.iter().zip(scores).map(|(a, s)| a * s).sum()).collect()
}

pub fn message_pass(masks: &[WeightedMask], t: &EmbeddingTable) -> Result<Vec<WeightedMask>, LinguisticsError> {
    if masks.is_empty() {
        return Err(LinguisticsError::NoMasks);
    }
    let scores: Vec<f64> = masks.iter().map(|m| m.score).collect();
    let post = rescore(&scores, &affinity_matrix(masks, t)?);
    Ok(masks.iter().zip(post).map(|(m, score)| WeightedMask { score, ..m.clone() }).collect())
}

/// Per-superpixel pooled weight `Σ score * mask`, min-max normalised to
/// `[0, 1]`. A constant map becomes 1 where positive and 0 elsewhere.
pub fn fused_weights(masks: &[WeightedMask], n: usize) -> Result<Vec<f64>, LinguisticsError> {
    if masks.is_empty() {
        return Err(LinguisticsError::NoMasks);
    }
    let mut w = vec![0.0; n];
    for m in masks {
        if m.mask.len() != n {
            return Err(LinguisticsError::MaskMismatch {
                phrase: m.phrase.clone(),
                expected: n,
                found: m.mask.len(),
            });
        }
        for (acc, &on) in w.iter_mut().zip(&m.mask) {
            if on {
                *acc += m.score;
            }
        }
    }
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        w.iter_mut().for_each(|x| *x = (*x - lo) / (hi - lo));
    } else {
        w.iter_mut().for_each(|x| *x = if *x > 0.0 { 1.0 } else { 0.0 });
    }
    Ok(w)
}

/// Sum-pools the masks and cuts with per-pixel unary `[Ŵ, 1 - Ŵ]` and the
/// latent model's pairwise term. Each node's unary is summed over its
/// pixels, so it scales with the superpixel's area.
pub fn fuse_and_cut(masks: &[WeightedMask], graph: &SuperpixelGraph, lambda: f64) -> Result<Labeling, LinguisticsError> {
    let w = fused_weights(masks, graph.len())?;
    let unary = w.iter().zip(&graph.areas).map(|(&x, &a)| [a as f64 * x, a as f64 * (1.0 - x)]).collect();
    let p = MrfProblem::new(unary, latent::pairwise_terms(graph, lambda))?;
    Ok(mrf::min_cut_infer(&p)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub phrase: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Lines of `"phrase" x0 y0 x1 y1 score`; blank lines and `#` comments
/// are skipped.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, LinguisticsError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| LinguisticsError::Detection {
            line: ln + 1,
            msg: msg.to_string(),
        };
        let rest = line.strip_prefix('"').ok_or_else(|| err("phrase must be double-quoted"))?;
        let close = rest.find('"').ok_or_else(|| err("unterminated phrase"))?;
        let phrase = &rest[..close];
        let nums = rest[close + 1..]
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err("non-numeric field"))?;
        if nums.len() != 5 {
            return Err(err("expected x0 y0 x1 y1 score after the phrase"));
        }
        out.push(Detection {
            phrase: normalize_phrase(phrase),
            bbox: BoundingBox::new(nums[0], nums[1], nums[2], nums[3]),
            score: nums[4],
        });
    }
    Ok(out)
}

/// Greedy per-phrase non-maximum suppression. Returns indices into
/// `dets` of the kept detections, in input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| dets[k].phrase == dets[i].phrase && dets[k].bbox.iou(&dets[i].bbox) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticConfig {
    pub superpixel_target: usize,
    pub lambda: f64,
    pub nms_iou: f64,
    /// Detections must score strictly above this.
    pub detection_threshold: f64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            superpixel_target: 200,
            lambda: 0.05,
            nms_iou: 0.5,
            detection_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskReport {
    pub phrase: String,
    pub component_id: u32,
    pub bbox: BoundingBox,
    pub pre_score: f64,
    pub post_score: f64,
    pub foreground_superpixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SemanticOutcome {
    /// No detection survived thresholding.
    Empty,
    Segmented {
        superpixels: SuperpixelMap,
        graph: SuperpixelGraph,
        labeling: Labeling,
        masks: Vec<WeightedMask>,
        reports: Vec<MaskReport>,
    },
}

impl SemanticOutcome {
    /// Pixel mask; all background for [`SemanticOutcome::Empty`].
    pub fn pixel_mask(&self, width: usize, height: usize) -> Result<PixelMask, ImageError> {
        match self {
            Self::Empty => Ok(PixelMask::empty(width, height)),
            Self::Segmented { superpixels, labeling, .. } => superpixels.lift(labeling.as_slice()),
        }
    }
}

pub fn semantic_segment(
    img: &Image,
    detections: &[Detection],
    table: &SegmentPhraseTable,
    t: &EmbeddingTable,
    cfg: &SemanticConfig,
) -> Result<SemanticOutcome, LinguisticsError> {
    for d in detections {
        if table.query(&d.phrase).is_empty() {
            return Err(LinguisticsError::UnknownPhrase(d.phrase.clone()));
        }
    }
    let above: Vec<Detection> = detections.iter().filter(|d| d.score > cfg.detection_threshold).cloned().collect();
    let kept: Vec<&Detection> = nms(&above, cfg.nms_iou).into_iter().map(|i| &above[i]).collect();
    if kept.is_empty() {
        return Ok(SemanticOutcome::Empty);
    }
    let superpixels = imaging::compute_superpixels(img, cfg.superpixel_target.min(img.pixel_count()))?;
    let graph = imaging::extract_features(img, &superpixels)?;

    let mut masks = Vec::with_capacity(kept.len());
    let mut components = Vec::with_capacity(kept.len());
    for d in &kept {
        d.bbox.validate(img.width(), img.height())?;
        let in_box = superpixels.fraction_in_box(&d.bbox);
        // the component whose model explains the window best
        let mut best: Option<(f64, u32, Labeling)> = None;
        for (key, model) in table.query(&d.phrase) {
            let (x, e) = latent::segment_in_box(model, &graph, &in_box)?;
            if best.as_ref().is_none_or(|b| e < b.0) {
                best = Some((e, key.component_id(), x));
            }
        }
        let (_, component, x) = best.expect("phrase has at least one component");
        masks.push(WeightedMask {
            phrase: d.phrase.clone(),
            mask: x.0,
            score: d.score,
        });
        components.push(component);
    }
    let rescored = message_pass(&masks, t)?;
    let labeling = fuse_and_cut(&rescored, &graph, cfg.lambda)?;
    let reports = kept
        .iter()
        .zip(&masks)
        .zip(&rescored)
        .zip(components)
        .map(|(((d, pre), post), component_id)| MaskReport {
            phrase: d.phrase.clone(),
            component_id,
            bbox: d.bbox,
            pre_score: pre.score,
            post_score: post.score,
            foreground_superpixels: pre.mask.iter().filter(|&&b| b).count(),
        })
        .collect();
    Ok(SemanticOutcome::Segmented {
        superpixels,
        graph,
        labeling,
        masks: rescored,
        reports,
    })
}
