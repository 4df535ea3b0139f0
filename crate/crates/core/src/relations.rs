//! Visual entailment between phrases.
//!
//! Each phrase is represented by the descriptors of its top exemplar
//! masks. Directed similarity is the mean best-match cosine; entailment is
//! its asymmetry. Pairwise entailment scores can be reconciled globally by
//! a binary program with transitivity constraints.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{histogram_bin, normalize_blocks, FeatureConfig, Image, ImageError, PixelMask, SuperpixelMap, FEATURE_CHANNELS};
use crate::spt::{normalize_phrase, SegmentPhraseTable};

/// Angular bins of the shape block of a mask descriptor.
pub const SHAPE_BINS: usize = 36;

/// Largest graph the exact solver accepts.
pub const EXACT_MAX_NODES: usize = 6;

const OBJECTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RelationsError {
    #[error("phrase {0:?} has no exemplars")]
    NoExemplars(String),
    #[error("zero-norm descriptor in exemplars of {0:?}")]
    ZeroNorm(String),
    #[error("descriptor length {found} differs from {expected}")]
    DescriptorMismatch { expected: usize, found: usize },
    #[error("empty mask has no descriptor")]
    EmptyMask,
    #[error("score matrix: {0}")]
    Matrix(String),
    #[error("exact solver supports at most {max} nodes, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// The exemplar descriptors standing for one phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseExemplars {
    pub phrase: String,
    pub descriptors: Vec<Vec<f64>>,
}

impl PhraseExemplars {
    pub fn new(phrase: &str, descriptors: Vec<Vec<f64>>) -> Result<Self, RelationsError> {
        let phrase = normalize_phrase(phrase);
        let Some(first) = descriptors.first() else {
            return Err(RelationsError::NoExemplars(phrase));
        };
        let expected = first.len();
        if let Some(d) = descriptors.iter().find(|d| d.len() != expected) {
            return Err(RelationsError::DescriptorMismatch { expected, found: d.len() });
        }
        Ok(Self { phrase, descriptors })
    }

    pub fn from_table(table: &SegmentPhraseTable, phrase: &str) -> Result<Self, RelationsError> {
        let descriptors = table.exemplars(phrase).iter().map(|e| e.descriptor.clone()).collect();
        Self::new(phrase, descriptors)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Foreground colour histogram followed by a radius-weighted histogram of
/// pixel angles around the mask centroid, each block L1-normalised.
pub fn mask_descriptor(img: &Image, mask: &PixelMask) -> Result<Vec<f64>, RelationsError> {
    if mask.width != img.width() || mask.height != img.height() {
        return Err(ImageError::DimensionMismatch(format!(
            "{}x{} mask for a {}x{} image",
            mask.width,
            mask.height,
            img.width(),
            img.height()
        ))
        .into());
    }
    let count = mask.count();
    if count == 0 {
        return Err(RelationsError::EmptyMask);
    }
    let bins = FeatureConfig::default().bins_per_channel;
    let app_dim = bins * FEATURE_CHANNELS;
    let mut d = vec![0.0; app_dim + SHAPE_BINS];
    let pixels = || (0..mask.height).flat_map(|y| (0..mask.width).map(move |x| (x, y))).filter(|&(x, y)| mask.get(x, y));
    let (mut cx, mut cy) = (0.0, 0.0);
    for (x, y) in pixels() {
        for (c, v) in img.rgb(x, y).into_iter().enumerate() {
            d[c * bins + histogram_bin(v, bins)] += 1.0;
        }
        cx += x as f64;
        cy += y as f64;
    }
    cx /= count as f64;
    cy /= count as f64;
    for (x, y) in pixels() {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let r = dx.hypot(dy);
        if r > 0.0 {
            let b = (((dy.atan2(dx) + PI) / (2.0 * PI)) * SHAPE_BINS as f64) as usize;
            d[app_dim + b.min(SHAPE_BINS - 1)] += r;
        }
    }
    let (app, shape) = d.split_at_mut(app_dim);
    normalize_blocks(app, bins);
    normalize_blocks(shape, SHAPE_BINS);
    Ok(d)
}

/// Descriptor of a superpixel-level mask.
pub fn superpixel_mask_descriptor(img: &Image, map: &SuperpixelMap, labels: &[bool]) -> Result<Vec<f64>, RelationsError> {
    mask_descriptor(img, &map.lift(labels)?)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a == b {
        return a.iter().any(|&v| v != 0.0).then_some(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean over `a`'s masks of the best cosine match among `b`'s masks.
pub fn sim_r2i(a: &PhraseExemplars, b: &PhraseExemplars) -> Result<f64, RelationsError> {
    if a.is_empty() {
        return Err(RelationsError::NoExemplars(a.phrase.clone()));
    }
    if b.is_empty() {
        return Err(RelationsError::NoExemplars(b.phrase.clone()));
    }
    let (da, db) = (a.descriptors[0].len(), b.descriptors[0].len());
    if da != db {
        return Err(RelationsError::DescriptorMismatch { expected: da, found: db });
    }
    let mut total = 0.0;
    for r in &a.descriptors {
        let mut best = f64::NEG_INFINITY;
        for s in &b.descriptors {
            let c = cosine(r, s).ok_or_else(|| {
                let culprit = if r.iter().all(|&v| v == 0.0) { &a.phrase } else { &b.phrase };
                RelationsError::ZeroNorm(culprit.clone())
            })?;
            best = best.max(c);
        }
        total += best;
    }
    Ok(total / a.len() as f64)
}

/// `sim_r2i(x, y) - sim_r2i(y, x)`; exactly antisymmetric.
pub fn entail_score(x: &PhraseExemplars, y: &PhraseExemplars) -> Result<f64, RelationsError> {
    Ok(sim_r2i(x, y)? - sim_r2i(y, x)?)
}

pub fn is_paraphrase(x: &PhraseExemplars, y: &PhraseExemplars, tau: f64) -> Result<bool, RelationsError> {
    Ok(paraphrase_decision(entail_score(x, y)?, entail_score(y, x)?, tau))
}

/// Inclusive threshold on the gap between the two directed scores.
pub fn paraphrase_decision(e_xy: f64, e_yx: f64, tau: f64) -> bool {
    (e_xy - e_yx).abs() <= tau
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeSimilarity {
    pub choice: Choice,
    pub score_y: f64,
    pub score_z: f64,
}

/// Which of `y` and `z` is closer to `x`; ties go to `y`.
pub fn relative_similarity(x: &PhraseExemplars, y: &PhraseExemplars, z: &PhraseExemplars) -> Result<RelativeSimilarity, RelationsError> {
    let score_y = entail_score(x, y)?;
    let score_z = entail_score(x, z)?;
    let choice = if score_z > score_y { Choice::Z } else { Choice::Y };
    Ok(RelativeSimilarity { choice, score_y, score_z })
}

/// Square score matrix with zero diagonal and `s[y][x] = -s[x][y]`.
pub fn entailment_matrix(nodes: &[PhraseExemplars]) -> Result<Vec<Vec<f64>>, RelationsError> {
    let n = nodes.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let scores = pairs.par_iter().map(|&(i, j)| entail_score(&nodes[i], &nodes[j])).collect::<Result<Vec<_>, _>>()?;
    let mut m = vec![vec![0.0; n]; n];
    for (&(i, j), s) in pairs.iter().zip(scores) {
        m[i][j] = s;
        m[j][i] = -s;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    Exact,
    Greedy,
}

/// Scores, decisions and the objective they reach.
#[derive(Debug, Clone, PartialEq)]
pub struct EntailmentGraph {
    pub phrases: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub decisions: Vec<Vec<bool>>,
    pub objective: f64,
}

impl EntailmentGraph {
    pub fn solve(phrases: Vec<String>, scores: Vec<Vec<f64>>, lambda: f64, mode: SolveMode) -> Result<Self, RelationsError> {
        if phrases.len() != scores.len() {
            return Err(RelationsError::Matrix(format!("{} phrases for a {}-node matrix", phrases.len(), scores.len())));
        }
        let decisions = solve_entailment_graph(&scores, lambda, mode)?;
        let objective = objective(&scores, &decisions, lambda);
        Ok(Self {
            phrases,
            scores,
            decisions,
            objective,
        })
    }
}

fn check_matrix(scores: &[Vec<f64>]) -> Result<usize, RelationsError> {
    let n = scores.len();
    for (i, row) in scores.iter().enumerate() {
        if row.len() != n {
            return Err(RelationsError::Matrix(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(RelationsError::Matrix(format!("row {i} has a non-finite entry")));
        }
    }
    Ok(n)
}

/// `Σ_{x≠y} (s_xy - λ) W_xy`.
pub fn objective(scores: &[Vec<f64>], w: &[Vec<bool>], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (x, row) in w.iter().enumerate() {
        for (y, &on) in row.iter().enumerate() {
            if on && x != y {
                total += scores[x][y] - lambda;
            }
        }
    }
    total
}

/// Whether `W_xy + W_yz - W_xz ≤ 1` for every triple of distinct nodes and
/// the diagonal is empty.
pub fn is_transitive(w: &[Vec<bool>]) -> bool {
    let n = w.len();
    (0..n).all(|x| !w[x][x])
        && (0..n).all(|x| (0..n).all(|y| (0..n).all(|z| x == y || y == z || x == z || !(w[x][y] && w[y][z]) || w[x][z])))
}

pub fn solve_entailment_graph(scores: &[Vec<f64>], lambda: f64, mode: SolveMode) -> Result<Vec<Vec<bool>>, RelationsError> {
    let n = check_matrix(scores)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(RelationsError::Matrix(format!("sparsity weight must be non-negative, got {lambda}")));
    }
    match mode {
        SolveMode::Greedy => Ok(greedy(scores, lambda)),
        SolveMode::Exact if n > EXACT_MAX_NODES => Err(RelationsError::TooLarge { n, max: EXACT_MAX_NODES }),
        SolveMode::Exact => Ok(exact(scores, lambda)),
    }
}

/// Adds edges by descending score, each together with whatever it forces
/// through transitivity, whenever the bundle does not lower the objective.
fn greedy(scores: &[Vec<f64>], lambda: f64) -> Vec<Vec<bool>> {
    let n = scores.len();
    let mut w = vec![vec![false; n]; n];
    let mut order: Vec<(usize, usize)> = (0..n).flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y))).collect();
    order.sort_by(|a, b| scores[b.0][b.1].total_cmp(&scores[a.0][a.1]));
    for (x, y) in order {
        if w[x][y] || scores[x][y] - lambda <= 0.0 {
            continue;
        }
        let mut cand = w.clone();
        cand[x][y] = true;
        close(&mut cand);
        let gain = objective(scores, &cand, lambda) - objective(scores, &w, lambda);
        if gain >= 0.0 {
            w = cand;
        }
    }
    w
}

/// Transitive closure without self-loops.
fn close(w: &mut [Vec<bool>]) {
    let n = w.len();
    for k in 0..n {
        for i in 0..n {
            if w[i][k] {
                for j in 0..n {
                    if w[k][j] {
                        w[i][j] = true;
                    }
                }
            }
        }
    }
    for (i, row) in w.iter_mut().enumerate() {
        row[i] = false;
    }
}

struct Search<'a> {
    n: usize,
    gains: &'a [Vec<f64>],
    /// `None` while unassigned.
    state: Vec<Option<bool>>,
    order: Vec<(usize, usize)>,
    /// `suffix[k]` bounds what variables `k..` can still add.
    suffix: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(gains: &'a [Vec<f64>], order: Vec<(usize, usize)>) -> Self {
        let n = gains.len();
        let mut suffix = vec![0.0; order.len() + 1];
        for k in (0..order.len()).rev() {
            let (x, y) = order[k];
            suffix[k] = suffix[k + 1] + gains[x][y].max(0.0);
        }
        Self {
            n,
            gains,
            state: vec![None; n * n],
            order,
            suffix,
        }
    }

    fn get(&self, x: usize, y: usize) -> Option<bool> {
        self.state[x * self.n + y]
    }

    /// Whether `(a, b) := v` violates a triple whose other two edges are
    /// already assigned.
    fn violates(&self, a: usize, b: usize, v: bool) -> bool {
        (0..self.n).filter(|&c| c != a && c != b).any(|c| {
            if v {
                // (a,b),(b,c) ⇒ (a,c) and (c,a),(a,b) ⇒ (c,b)
                (self.get(b, c) == Some(true) && self.get(a, c) == Some(false)) || (self.get(c, a) == Some(true) && self.get(c, b) == Some(false))
            } else {
                // (a,c),(c,b) ⇒ (a,b)
                self.get(a, c) == Some(true) && self.get(c, b) == Some(true)
            }
        })
    }

    fn decisions(&self) -> Vec<Vec<bool>> {
        (0..self.n).map(|x| (0..self.n).map(|y| self.get(x, y) == Some(true)).collect()).collect()
    }

    /// Branch and bound for the optimal value, trying the sign-preferred
    /// value first.
    fn maximise(&mut self, k: usize, value: f64, best: &mut f64) {
        if value + self.suffix[k] <= *best {
            return;
        }
        if k == self.order.len() {
            *best = value;
            return;
        }
        let (x, y) = self.order[k];
        let g = self.gains[x][y];
        let first = g > 0.0;
        for v in [first, !first] {
            if !self.violates(x, y, v) {
                self.state[x * self.n + y] = Some(v);
                self.maximise(k + 1, value + if v { g } else { 0.0 }, best);
                self.state[x * self.n + y] = None;
            }
        }
    }

    /// First assignment in row-major 0-before-1 order reaching `target`.
    fn first_reaching(&mut self, k: usize, value: f64, target: f64) -> bool {
        if value + self.suffix[k] < target {
            return false;
        }
        if k == self.order.len() {
            return true;
        }
        let (x, y) = self.order[k];
        let g = self.gains[x][y];
        for v in [false, true] {
            if !self.violates(x, y, v) {
                self.state[x * self.n + y] = Some(v);
                if self.first_reaching(k + 1, value + if v { g } else { 0.0 }, target) {
                    return true;
                }
                self.state[x * self.n + y] = None;
            }
        }
        false
    }
}

/// Optimal value by branch and bound over edges ordered by `|score|`, then
/// the lexicographically smallest row-major assignment attaining it.
fn exact(scores: &[Vec<f64>], lambda: f64) -> Vec<Vec<bool>> {
    let n = scores.len();
    let gains: Vec<Vec<f64>> = scores.iter().map(|row| row.iter().map(|s| s - lambda).collect()).collect();
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y))).collect();

    let mut by_magnitude = edges.clone();
    by_magnitude.sort_by(|a, b| scores[b.0][b.1].abs().total_cmp(&scores[a.0][a.1].abs()));
    let incumbent = objective(scores, &greedy(scores, lambda), lambda);
    // start just below the greedy value so an equal optimum is still visited
    let mut best = incumbent - OBJECTIVE_TOL;
    Search::new(&gains, by_magnitude).maximise(0, 0.0, &mut best);
    let best = best.max(incumbent);

    let mut lex = Search::new(&gains, edges);
    let tol = OBJECTIVE_TOL * best.abs().max(1.0);
    let found = lex.first_reaching(0, 0.0, best - tol);
    debug_assert!(found, "optimal value is attainable");
    lex.decisions()
}

/// `N` on the first line, then `N` rows of `N` numbers.
pub fn parse_score_matrix(text: &str) -> Result<Vec<Vec<f64>>, RelationsError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| RelationsError::Matrix("empty file".into()))?;
    let n: usize = header.trim().parse().map_err(|_| RelationsError::Parse {
        line: hl + 1,
        msg: format!("expected node count, got {header:?}"),
    })?;
    let mut m = Vec::with_capacity(n);
    for (ln, line) in lines {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| RelationsError::Parse {
                line: ln + 1,
                msg: "non-numeric entry".into(),
            })?;
        if row.len() != n {
            return Err(RelationsError::Parse {
                line: ln + 1,
                msg: format!("{} entries, expected {n}", row.len()),
            });
        }
        m.push(row);
    }
    if m.len() != n {
        return Err(RelationsError::Matrix(format!("{} rows, expected {n}", m.len())));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gold {
    Entails,
    NotEntails,
    Paraphrase,
    NotParaphrase,
}

impl Gold {
    /// Whether the gold label asserts the relation.
    pub fn positive(self) -> bool {
        matches!(self, Self::Entails | Self::Paraphrase)
    }
}

impl fmt::Display for Gold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Entails => "entails",
            Self::NotEntails => "not-entails",
            Self::Paraphrase => "paraphrase",
            Self::NotParaphrase => "not-paraphrase",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationPair {
    pub x: String,
    pub y: String,
    pub gold: Gold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTriple {
    pub x: String,
    pub y: String,
    pub z: String,
    pub gold: Choice,
}

fn tab_fields(text: &str, arity: usize) -> impl Iterator<Item = Result<(usize, Vec<String>), RelationsError>> + '_ {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')).map(move |(ln, line)| {
        let fields: Vec<String> = line.split('\t').map(normalize_phrase).collect();
        if fields.len() != arity || fields.iter().any(String::is_empty) {
            return Err(RelationsError::Parse {
                line: ln + 1,
                msg: format!("expected {arity} non-empty tab-separated fields"),
            });
        }
        Ok((ln + 1, fields))
    })
}

/// `x <TAB> y <TAB> gold` lines.
pub fn parse_relations(text: &str) -> Result<Vec<RelationPair>, RelationsError> {
    tab_fields(text, 3)
        .map(|r| {
            let (line, f) = r?;
            let gold = match f[2].as_str() {
                "entails" => Gold::Entails,
                "not-entails" => Gold::NotEntails,
                "paraphrase" => Gold::Paraphrase,
                "not-paraphrase" => Gold::NotParaphrase,
                other => {
                    return Err(RelationsError::Parse {
                        line,
                        msg: format!("unknown gold label {other:?}"),
                    })
                }
            };
            Ok(RelationPair {
                x: f[0].clone(),
                y: f[1].clone(),
                gold,
            })
        })
        .collect()
}

/// `x <TAB> y <TAB> z <TAB> gold_choice` lines; the choice names `y` or `z`.
pub fn parse_similarity_triples(text: &str) -> Result<Vec<SimilarityTriple>, RelationsError> {
    tab_fields(text, 4)
        .map(|r| {
            let (line, f) = r?;
            let gold = if f[3] == f[1] {
                Choice::Y
            } else if f[3] == f[2] {
                Choice::Z
            } else {
                return Err(RelationsError::Parse {
                    line,
                    msg: format!("gold choice {:?} is neither {:?} nor {:?}", f[3], f[1], f[2]),
                });
            };
            Ok(SimilarityTriple {
                x: f[0].clone(),
                y: f[1].clone(),
                z: f[2].clone(),
                gold,
            })
        })
        .collect()
}
