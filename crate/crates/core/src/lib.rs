//! Segment-phrase tables: weakly supervised foreground models learned
//! from boxes, phrase-aware semantic segmentation, and visual entailment
//! between phrases.
//!
//! The modules build on each other in this order: [`imaging`] provides
//! images, superpixels and the superpixel graph; [`mrf`] solves binary
//! submodular energies exactly; [`gmm`] fits the appearance mixtures;
//! [`latent`] alternates the two to learn a model from boxes; [`spt`]
//! stores the models and exemplar masks; [`linguistics`] fuses per-phrase
//! masks under embedding similarity; [`relations`] scores and reconciles
//! entailment between phrases; [`eval`] measures results and synthesises
//! test scenes.

pub mod config;
pub mod eval;
pub mod gmm;
pub mod imaging;
pub mod latent;
pub mod linguistics;
pub mod mrf;
pub mod relations;
pub mod spt;

pub use config::{Config, ConfigError};
pub use eval::{declaration_curve, make_scene, seg_metrics, EvalError, SceneConfig, SegMetrics, Shape, SyntheticScene, Texture};
pub use gmm::{GaussianMixture, GmmError};
pub use imaging::{BoundingBox, Image, ImageError, PixelMask, SuperpixelGraph, SuperpixelMap};
pub use latent::{em_learn, EmConfig, EmOutcome, LatentError, ModelMetadata, SegmentationModel, TrainingInstance};
pub use linguistics::{Detection, EmbeddingTable, LinguisticsError, SemanticOutcome, WeightedMask};
pub use mrf::{Labeling, MrfError, MrfProblem, PairwiseTerm};
pub use relations::{Choice, EntailmentGraph, PhraseExemplars, RelationsError, SolveMode};
pub use spt::{ExemplarMask, PhraseKey, SegmentPhraseTable, TableError};

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Linguistics(#[from] LinguisticsError),
    #[error(transparent)]
    Relations(#[from] RelationsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl Error {
    /// Whether the failure is numerical (a degenerate or non-monotone
    /// optimisation) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Self::Latent(e) => e.is_numerical(),
            Self::Linguistics(LinguisticsError::Latent(e)) => e.is_numerical(),
            Self::Gmm(GmmError::NonMonotone { .. }) => true,
            _ => false,
        }
    }
}
