//! Learning foreground/background appearance models from images that only
//! carry a bounding box.
//!
//! Superpixel labels are latent. Each round fits one mixture to the
//! features of every foreground superpixel pooled over all instances and
//! another to the background ones (M-step), then relabels every instance
//! by graph cut under those models with superpixels outside the box
//! clamped to background (E-step). After the first round the mixtures are
//! warm-started from the previous ones, which makes the pooled energy
//! non-increasing from round to round.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{self, FitOptions, GaussianMixture, GmmError};
use crate::imaging::{BoundingBox, ImageError, SuperpixelGraph, SuperpixelMap};
use crate::mrf::{self, Labeling, MrfError, MrfProblem, PairwiseTerm};

/// Additive label-1 cost for superpixels that must stay background.
pub const CLAMP_COST: f64 = 1e6;

/// Slack allowed when checking that the pooled energy does not increase.
pub const ENERGY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error("seed shrink {0} not in (0, 1]")]
    InvalidShrink(f64),
    #[error("no training instances")]
    NoInstances,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("segmentation collapsed to all {0} after retrying with a smaller seed region")]
    Collapse(&'static str),
    #[error("pooled energy rose from {before} to {after} in round {round}")]
    EnergyIncreased { round: usize, before: f64, after: f64 },
}

impl LatentError {
    /// Collapse, energy increase or likelihood decrease.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Collapse(_) | Self::EnergyIncreased { .. } | Self::Gmm(GmmError::NonMonotone { .. }))
    }
}

/// One superpixelised image and its box.
#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub graph: SuperpixelGraph,
    pub bbox: BoundingBox,
    /// Fraction of each superpixel's area inside `bbox`.
    pub sp_in_box: Vec<f64>,
}

impl TrainingInstance {
    pub fn new(graph: SuperpixelGraph, map: &SuperpixelMap, bbox: BoundingBox) -> Result<Self, LatentError> {
        if map.len() != graph.len() {
            return Err(ImageError::DimensionMismatch(format!("map has {} superpixels, graph has {}", map.len(), graph.len())).into());
        }
        bbox.validate(map.width(), map.height())?;
        let sp_in_box = map.fraction_in_box(&bbox);
        Ok(Self { graph, bbox, sp_in_box })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub phrase: String,
    pub component_id: u32,
    pub instances: usize,
}

/// Foreground and background appearance mixtures plus the pairwise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationModel {
    pub theta_fg: GaussianMixture,
    pub theta_bg: GaussianMixture,
    pub lambda: f64,
    pub metadata: ModelMetadata,
}

impl SegmentationModel {
    pub fn new(theta_fg: GaussianMixture, theta_bg: GaussianMixture, lambda: f64, metadata: ModelMetadata) -> Result<Self, LatentError> {
        if theta_fg.dim() != theta_bg.dim() {
            return Err(LatentError::DimensionMismatch {
                expected: theta_fg.dim(),
                got: theta_bg.dim(),
            });
        }
        Ok(Self {
            theta_fg,
            theta_bg,
            lambda,
            metadata,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_fg.dim()
    }
}

/// Initial labels: superpixels whose centroid lies in the box shrunk by
/// `seed_shrink` are foreground, superpixels fully outside the box are
/// background, and the rest are foreground iff at least half their area is
/// in the box.
pub fn init_labels(inst: &TrainingInstance, seed_shrink: f64) -> Result<Labeling, LatentError> {
    if !(seed_shrink > 0.0 && seed_shrink <= 1.0) {
        return Err(LatentError::InvalidShrink(seed_shrink));
    }
    if inst.bbox.area() <= 0.0 {
        return Err(ImageError::DegenerateBox(inst.bbox).into());
    }
    let seed = inst.bbox.shrink(seed_shrink);
    let labels = inst
        .graph
        .centroids
        .iter()
        .zip(&inst.sp_in_box)
        .map(|(&(cx, cy), &frac)| {
            if frac == 0.0 {
                false
            } else if seed.contains_point(cx, cy) {
                true
            } else {
                frac >= 0.5
            }
        })
        .collect();
    Ok(Labeling(labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Mixture components per side.
    pub k: usize,
    /// Number of E-steps; 0 fits the models to the initial labels only.
    pub max_iters: usize,
    pub seed: u64,
    pub lambda: f64,
    pub seed_shrink: f64,
    pub fit: FitOptions,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_iters: 10,
            seed: 0,
            lambda: 0.05,
            seed_shrink: 0.6,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub model: SegmentationModel,
    /// Final per-instance labelings.
    pub labelings: Vec<Labeling>,
    /// Pooled energy after each E-step.
    pub energies: Vec<f64>,
    pub converged: bool,
    /// Seed shrink actually used (halved once after a collapse).
    pub seed_shrink: f64,
}

impl EmOutcome {
    pub fn iterations(&self) -> usize {
        self.energies.len()
    }
}

enum Round {
    Done(Box<EmOutcome>),
    Collapsed(&'static str),
}

/// Latent EM over `instances`; `metadata.instances` is filled in.
pub fn em_learn(instances: &[TrainingInstance], cfg: &EmConfig, metadata: ModelMetadata) -> Result<EmOutcome, LatentError> {
    let first = instances.first().ok_or(LatentError::NoInstances)?;
    let d = first.graph.dim();
    for inst in instances {
        if inst.graph.dim() != d {
            return Err(LatentError::DimensionMismatch {
                expected: d,
                got: inst.graph.dim(),
            });
        }
    }
    let metadata = ModelMetadata {
        instances: instances.len(),
        ..metadata
    };
    match em_attempt(instances, cfg, cfg.seed_shrink, &metadata)? {
        Round::Done(out) => Ok(*out),
        Round::Collapsed(_) => match em_attempt(instances, cfg, cfg.seed_shrink * 0.5, &metadata)? {
            Round::Done(out) => Ok(*out),
            Round::Collapsed(side) => Err(LatentError::Collapse(side)),
        },
    }
}

fn collapse_side(labelings: &[Labeling]) -> Option<&'static str> {
    let fg: usize = labelings.iter().map(Labeling::count_foreground).sum();
    let total: usize = labelings.iter().map(Labeling::len).sum();
    if fg == 0 {
        Some("background")
    } else if fg == total {
        Some("foreground")
    } else {
        None
    }
}

fn em_attempt(instances: &[TrainingInstance], cfg: &EmConfig, shrink: f64, metadata: &ModelMetadata) -> Result<Round, LatentError> {
    let mut labelings = instances.iter().map(|i| init_labels(i, shrink)).collect::<Result<Vec<_>, _>>()?;
    if let Some(side) = collapse_side(&labelings) {
        return Ok(Round::Collapsed(side));
    }
    let mut model: Option<SegmentationModel> = None;
    let mut energies: Vec<f64> = Vec::new();
    let mut converged = false;
    for round in 0..=cfg.max_iters {
        let m = m_step(instances, &labelings, model.as_ref(), cfg, metadata)?;
        model = Some(m);
        if round == cfg.max_iters {
            break;
        }
        let m = model.as_ref().expect("fitted above");
        let next: Vec<(Labeling, f64)> = instances
            .par_iter()
            .map(|inst| -> Result<(Labeling, f64), LatentError> {
                let p = build_problem(m, &inst.graph, Some(&inst.sp_in_box))?;
                let x = mrf::min_cut_infer(&p)?;
                let e = mrf::energy(&p, &x)?;
                Ok((x, e))
            })
            .collect::<Result<_, _>>()?;
        let (next_labels, per_instance): (Vec<Labeling>, Vec<f64>) = next.into_iter().unzip();
        let total: f64 = per_instance.iter().sum();
        if let Some(&before) = energies.last() {
            if total > before + ENERGY_TOLERANCE {
                return Err(LatentError::EnergyIncreased {
                    round: energies.len(),
                    before,
                    after: total,
                });
            }
        }
        energies.push(total);
        if let Some(side) = collapse_side(&next_labels) {
            return Ok(Round::Collapsed(side));
        }
        let unchanged = next_labels == labelings;
        labelings = next_labels;
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(Round::Done(Box::new(EmOutcome {
        model: model.expect("at least one M-step runs"),
        labelings,
        energies,
        converged,
        seed_shrink: shrink,
    })))
}

fn m_step(
    instances: &[TrainingInstance],
    labelings: &[Labeling],
    prev: Option<&SegmentationModel>,
    cfg: &EmConfig,
    metadata: &ModelMetadata,
) -> Result<SegmentationModel, LatentError> {
    let mut fg: Vec<&[f64]> = Vec::new();
    let mut bg: Vec<&[f64]> = Vec::new();
    for (inst, x) in instances.iter().zip(labelings) {
        for (f, &l) in inst.graph.features.iter().zip(x.as_slice()) {
            if l {
                fg.push(f);
            } else {
                bg.push(f);
            }
        }
    }
    let fit_side = |samples: &[&[f64]], prev: Option<&GaussianMixture>, salt: u64| -> Result<GaussianMixture, GmmError> {
        match prev {
            Some(g) => g.refine(samples, &cfg.fit).map(|o| o.mixture),
            None => gmm::fit_with(samples, cfg.k.min(samples.len()), cfg.seed ^ salt, &cfg.fit).map(|o| o.mixture),
        }
    };
    let theta_fg = fit_side(&fg, prev.map(|m| &m.theta_fg), 0x9e37_79b9)?;
    let theta_bg = fit_side(&bg, prev.map(|m| &m.theta_bg), 0x7f4a_7c15)?;
    SegmentationModel::new(theta_fg, theta_bg, cfg.lambda, metadata.clone())
}

/// Unary costs are negative log-densities; pairwise weights are
/// `exp(-lambda * boundary)` paid on disagreement. With `clamp`, every
/// superpixel with zero area in the box pays [`CLAMP_COST`] for label 1.
pub fn build_problem(model: &SegmentationModel, graph: &SuperpixelGraph, clamp: Option<&[f64]>) -> Result<MrfProblem, LatentError> {
    if graph.dim() != model.dim() && !graph.is_empty() {
        return Err(LatentError::DimensionMismatch {
            expected: model.dim(),
            got: graph.dim(),
        });
    }
    let unary = graph
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let bg = -model.theta_bg.log_density(f)?;
            let mut fg = -model.theta_fg.log_density(f)?;
            if clamp.is_some_and(|c| c[i] == 0.0) {
                fg += CLAMP_COST;
            }
            Ok([bg, fg])
        })
        .collect::<Result<Vec<_>, GmmError>>()?;
    Ok(MrfProblem::new(unary, pairwise_terms(graph, model.lambda))?)
}

pub fn pairwise_terms(graph: &SuperpixelGraph, lambda: f64) -> Vec<PairwiseTerm> {
    graph
        .edges
        .iter()
        .zip(&graph.boundary_prob)
        .map(|(&(i, j), &b)| PairwiseTerm {
            i,
            j,
            weight: (-lambda * b).exp(),
        })
        .collect()
}

/// One unclamped E-step on a new image.
pub fn segment_with_model(m: &SegmentationModel, graph: &SuperpixelGraph) -> Result<Labeling, LatentError> {
    Ok(mrf::min_cut_infer(&build_problem(m, graph, None)?)?)
}

/// E-step restricted to a box: superpixels with no area inside it stay
/// background. Returns the labeling and its energy.
pub fn segment_in_box(m: &SegmentationModel, graph: &SuperpixelGraph, sp_in_box: &[f64]) -> Result<(Labeling, f64), LatentError> {
    let p = build_problem(m, graph, Some(sp_in_box))?;
    let x = mrf::min_cut_infer(&p)?;
    let e = mrf::energy(&p, &x)?;
    Ok((x, e))
}

/// Mean log-likelihood ratio `log p_fg - log p_bg` over the foreground
/// superpixels of `x`; 0 when `x` has no foreground.
pub fn foreground_confidence(m: &SegmentationModel, graph: &SuperpixelGraph, x: &Labeling) -> Result<f64, LatentError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (f, &l) in graph.features.iter().zip(x.as_slice()) {
        if l {
            sum += m.theta_fg.log_density(f)? - m.theta_bg.log_density(f)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
