//! Segmentation metrics, declaration-rate curves and a synthetic scene
//! generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{BoundingBox, Image, PixelMask};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("mask sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("texture means {fg} and {bg} are closer than three noise deviations ({noise})")]
    IndistinctTextures { fg: f64, bg: f64, noise: f64 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegMetrics {
    /// Fraction of pixels labelled the same in both masks.
    pub precision: f64,
    /// Foreground intersection over union.
    pub jaccard: f64,
}

pub fn seg_metrics(pred: &PixelMask, gt: &PixelMask) -> Result<SegMetrics, EvalError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(EvalError::DimensionMismatch(pred.width, pred.height, gt.width, gt.height));
    }
    let total = pred.data.len();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let (mut agree, mut inter, mut union) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        agree += usize::from(p == g);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    let jaccard = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(SegMetrics {
        precision: agree as f64 / total as f64,
        jaccard,
    })
}

/// Ten evenly spaced fractions `0.1, 0.2, .., 1.0`.
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Correct decisions among the most confident `⌈f·n⌉` items for each
/// fraction `f`. A positive score declares the relation; `gold` says
/// whether it holds. Equal magnitudes keep input order.
pub fn declaration_curve(scored: &[(f64, bool)], grid: &[f64]) -> Result<Vec<(f64, usize)>, EvalError> {
    if scored.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = scored.iter().position(|(s, _)| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.abs().total_cmp(&scored[a].0.abs()));
    let mut correct_prefix = Vec::with_capacity(order.len() + 1);
    correct_prefix.push(0);
    for &i in &order {
        let (s, gold) = scored[i];
        correct_prefix.push(correct_prefix.last().unwrap() + usize::from((s > 0.0) == gold));
    }
    let n = scored.len() as f64;
    Ok(grid
        .iter()
        .map(|&f| {
            // guard against `f·n` landing a hair above an integer
            let k = ((f.clamp(0.0, 1.0) * n - 1e-9).ceil().max(0.0) as usize).min(scored.len());
            (f, correct_prefix[k])
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Ellipse,
    Rect,
    /// Star-convex region with a smoothly varying radius.
    Blob,
}

/// Mean intensity with optional diagonal stripes of the given amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub mean: f64,
    pub stripes: f64,
}

impl Texture {
    pub fn flat(mean: f64) -> Self {
        Self { mean, stripes: 0.0 }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        if self.stripes == 0.0 {
            return self.mean;
        }
        let phase = ((x + y) % STRIPE_PERIOD) as f64 / STRIPE_PERIOD as f64;
        self.mean + self.stripes * (2.0 * std::f64::consts::PI * phase).sin()
    }
}

const STRIPE_PERIOD: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub shape: Shape,
    pub fg: Texture,
    pub bg: Texture,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            shape: Shape::Ellipse,
            fg: Texture::flat(0.75),
            bg: Texture::flat(0.25),
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub gt_mask: PixelMask,
    /// Tight box around `gt_mask`.
    pub bbox: BoundingBox,
    pub config: SceneConfig,
}

/// Deterministic scene: a randomly placed shape of one texture over
/// another, plus noise, clamped to `[0, 1]`.
pub fn make_scene(cfg: &SceneConfig) -> Result<SyntheticScene, EvalError> {
    let (w, h) = (cfg.width, cfg.height);
    if w < 8 || h < 8 {
        return Err(EvalError::InvalidScene(format!("{w}x{h} is smaller than 8x8")));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(EvalError::InvalidScene(format!("noise {}", cfg.noise)));
    }
    if (cfg.fg.mean - cfg.bg.mean).abs() < 3.0 * cfg.noise {
        return Err(EvalError::IndistinctTextures {
            fg: cfg.fg.mean,
            bg: cfg.bg.mean,
            noise: cfg.noise,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (wf, hf) = (w as f64, h as f64);
    let rx = wf * rng.random_range(0.18..0.32);
    let ry = hf * rng.random_range(0.18..0.32);
    let cx = rng.random_range(rx + 2.0..wf - rx - 2.0);
    let cy = rng.random_range(ry + 2.0..hf - ry - 2.0);
    let harmonics: Vec<(f64, f64)> = (2..5).map(|_| (rng.random_range(-0.12..0.12), rng.random_range(0.0..std::f64::consts::TAU))).collect();

    let inside = |x: usize, y: usize| {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        match cfg.shape {
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
            Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            Shape::Blob => {
                let t = dy.atan2(dx);
                let r: f64 = 1.0 + harmonics.iter().enumerate().map(|(k, &(a, p))| a * ((k as f64 + 2.0) * t + p).cos()).sum::<f64>();
                dx.hypot(dy) <= r
            }
        }
    };
    let gt: Vec<bool> = (0..w * h).map(|p| inside(p % w, p / w)).collect();
    let gt_mask = PixelMask::new(w, h, gt).expect("length matches");
    let bbox = gt_mask.bounding_box().ok_or_else(|| EvalError::InvalidScene("shape covers no pixel".into()))?;

    let normal = Normal::new(0.0, cfg.noise).expect("noise checked finite and non-negative");
    let data = (0..w * h)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let tex = if gt_mask.data[p] { &cfg.fg } else { &cfg.bg };
            (tex.at(x, y) + normal.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();
    let image = Image::new(w, h, 1, data).expect("values clamped to [0, 1]");
    Ok(SyntheticScene {
        image,
        gt_mask,
        bbox,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> PixelMask {
        PixelMask::new(w, h, (0..w * h).map(|p| f(p % w, p / w)).collect()).unwrap()
    }

    #[test]
    fn metric_examples() {
        let gt = mask(10, 10, |x, _| x < 5);
        let m = seg_metrics(&gt, &gt).unwrap();
        assert_eq!((m.precision, m.jaccard), (1.0, 1.0));

        let inv = mask(10, 10, |x, _| x >= 5);
        let m = seg_metrics(&inv, &gt).unwrap();
        assert_eq!((m.precision, m.jaccard), (0.0, 0.0));

        let pred = mask(10, 10, |x, _| x < 6);
        let m = seg_metrics(&pred, &gt).unwrap();
        assert!((m.precision - 0.9).abs() < 1e-12);
        assert!((m.jaccard - 50.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_conventions() {
        let e = PixelMask::empty(4, 4);
        assert_eq!(seg_metrics(&e, &e).unwrap().jaccard, 1.0);
        let one = mask(4, 4, |x, y| x == 0 && y == 0);
        assert_eq!(seg_metrics(&e, &one).unwrap().jaccard, 0.0);
        assert!(matches!(seg_metrics(&e, &PixelMask::empty(4, 5)), Err(EvalError::DimensionMismatch(..))));
    }

    #[test]
    fn curve_examples() {
        let all = [(0.9, true), (-0.3, false), (0.2, true)];
        assert_eq!(declaration_curve(&all, &[1.0]).unwrap(), vec![(1.0, 3)]);
        assert_eq!(declaration_curve(&[(0.4, false)], &[1.0]).unwrap(), vec![(1.0, 0)]);
        let four = [(0.9, true), (0.5, false), (0.3, true), (0.1, true)];
        assert_eq!(declaration_curve(&four, &[0.5]).unwrap(), vec![(0.5, 1)]);
        assert_eq!(declaration_curve(&[], &[0.5]), Err(EvalError::Empty));
        assert_eq!(declaration_curve(&[(f64::NAN, true)], &[0.5]), Err(EvalError::NonFinite(0)));
    }

    #[test]
    fn curve_fractions_round_up() {
        let items = [(0.9, true); 10];
        let grid = default_grid();
        let counts: Vec<usize> = declaration_curve(&items, &grid).unwrap().into_iter().map(|(_, c)| c).collect();
        assert_eq!(counts, (1..=10).collect::<Vec<_>>());
        assert_eq!(declaration_curve(&items[..3], &[0.5]).unwrap(), vec![(0.5, 2)]);
    }

    #[test]
    fn noiseless_scene_thresholds_exactly() {
        for shape in [Shape::Ellipse, Shape::Rect, Shape::Blob] {
            let cfg = SceneConfig {
                shape,
                fg: Texture::flat(1.0),
                bg: Texture::flat(0.0),
                noise: 0.0,
                seed: 3,
                ..SceneConfig::default()
            };
            let s = make_scene(&cfg).unwrap();
            let thresholded: Vec<bool> = s.image.data().iter().map(|&v| v > 0.5).collect();
            assert_eq!(thresholded, s.gt_mask.data);
            assert_eq!(Some(s.bbox), s.gt_mask.bounding_box());
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig {
            seed: 11,
            ..SceneConfig::default()
        };
        assert_eq!(make_scene(&cfg).unwrap(), make_scene(&cfg).unwrap());
        let other = make_scene(&SceneConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(other.image, make_scene(&cfg).unwrap().image);
    }

    #[test]
    fn rejects_indistinct_textures() {
        let cfg = SceneConfig {
            fg: Texture::flat(0.5),
            bg: Texture::flat(0.6),
            noise: 0.05,
            ..SceneConfig::default()
        };
        assert!(matches!(make_scene(&cfg), Err(EvalError::IndistinctTextures { .. })));
    }

    proptest! {
        #[test]
        fn precision_is_symmetric(a in prop::collection::vec(any::<bool>(), 36), b in prop::collection::vec(any::<bool>(), 36)) {
            let pa = PixelMask::new(6, 6, a).unwrap();
            let pb = PixelMask::new(6, 6, b).unwrap();
            prop_assert_eq!(seg_metrics(&pa, &pb).unwrap().precision, seg_metrics(&pb, &pa).unwrap().precision);
        }

        #[test]
        fn jaccard_one_iff_equal(a in prop::collection::vec(any::<bool>(), 16), b in prop::collection::vec(any::<bool>(), 16)) {
            prop_assume!(a.iter().any(|&v| v));
            let pa = PixelMask::new(4, 4, a.clone()).unwrap();
            let pb = PixelMask::new(4, 4, b.clone()).unwrap();
            prop_assert_eq!(seg_metrics(&pa, &pb).unwrap().jaccard == 1.0, a == b);
        }

        #[test]
        fn declared_count_is_monotone(scores in prop::collection::vec((-1.0..1.0f64, any::<bool>()), 1..30), f1 in 0.0..1.0f64, f2 in 0.0..1.0f64) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let n = scores.len() as f64;
            let declared = |f: f64| (f * n - 1e-9).ceil().max(0.0) as usize;
            prop_assert!(declared(hi) >= declared(lo));
            let c = declaration_curve(&scores, &[lo, hi]).unwrap();
            prop_assert!(c[1].1 >= c[0].1);
        }
    }
}
