//! Pipeline settings in a `key = value` text format.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::latent::EmConfig;
use crate::linguistics::SemanticConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("{key} must be {requirement}, got {value}")]
    OutOfRange { key: &'static str, requirement: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    /// Contrast sensitivity of the pairwise term.
    pub lambda: f64,
    pub gmm_k: usize,
    pub em_max_iters: usize,
    pub superpixel_target: usize,
    pub k_exemplars: usize,
    /// Per-edge sparsity cost of the entailment graph.
    pub ilp_lambda: f64,
    pub nms_iou: f64,
    pub paraphrase_tau: f64,
    /// Raw entailment scores above this declare entailment.
    pub entail_threshold: f64,
    pub detection_threshold: f64,
    pub seed_shrink: f64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            gmm_k: 5,
            em_max_iters: 10,
            superpixel_target: 200,
            k_exemplars: 10,
            ilp_lambda: 0.1,
            nms_iou: 0.5,
            paraphrase_tau: 0.05,
            entail_threshold: 0.0,
            detection_threshold: 0.0,
            seed_shrink: 0.6,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Reads `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: ln + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "lambda" => self.lambda = parse(key, value)?,
            "gmm_k" => self.gmm_k = parse(key, value)?,
            "em_max_iters" => self.em_max_iters = parse(key, value)?,
            "superpixel_target" => self.superpixel_target = parse(key, value)?,
            "k_exemplars" => self.k_exemplars = parse(key, value)?,
            "ilp_lambda" => self.ilp_lambda = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "paraphrase_tau" => self.paraphrase_tau = parse(key, value)?,
            "entail_threshold" => self.entail_threshold = parse(key, value)?,
            "detection_threshold" => self.detection_threshold = parse(key, value)?,
            "seed_shrink" => self.seed_shrink = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &'static str, requirement: &'static str, value: impl fmt::Display) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    key,
                    requirement,
                    value: value.to_string(),
                })
            }
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        check(finite_nonneg(self.lambda), "lambda", "finite and non-negative", self.lambda)?;
        check(self.gmm_k > 0, "gmm_k", "positive", self.gmm_k)?;
        check(self.em_max_iters > 0, "em_max_iters", "positive", self.em_max_iters)?;
        check(self.superpixel_target > 0, "superpixel_target", "positive", self.superpixel_target)?;
        check(self.k_exemplars > 0, "k_exemplars", "positive", self.k_exemplars)?;
        check(finite_nonneg(self.ilp_lambda), "ilp_lambda", "finite and non-negative", self.ilp_lambda)?;
        check(self.nms_iou > 0.0 && self.nms_iou <= 1.0, "nms_iou", "in (0, 1]", self.nms_iou)?;
        check(self.paraphrase_tau > 0.0 && self.paraphrase_tau.is_finite(), "paraphrase_tau", "positive", self.paraphrase_tau)?;
        check(self.entail_threshold.is_finite(), "entail_threshold", "finite", self.entail_threshold)?;
        check(self.detection_threshold.is_finite(), "detection_threshold", "finite", self.detection_threshold)?;
        check(self.seed_shrink > 0.0 && self.seed_shrink <= 1.0, "seed_shrink", "in (0, 1]", self.seed_shrink)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "gmm_k = {}", self.gmm_k);
        let _ = writeln!(s, "em_max_iters = {}", self.em_max_iters);
        let _ = writeln!(s, "superpixel_target = {}", self.superpixel_target);
        let _ = writeln!(s, "k_exemplars = {}", self.k_exemplars);
        let _ = writeln!(s, "ilp_lambda = {}", self.ilp_lambda);
        let _ = writeln!(s, "nms_iou = {}", self.nms_iou);
        let _ = writeln!(s, "paraphrase_tau = {}", self.paraphrase_tau);
        let _ = writeln!(s, "entail_threshold = {}", self.entail_threshold);
        let _ = writeln!(s, "detection_threshold = {}", self.detection_threshold);
        let _ = writeln!(s, "seed_shrink = {}", self.seed_shrink);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            k: self.gmm_k,
            max_iters: self.em_max_iters,
            seed: self.seed,
            lambda: self.lambda,
            seed_shrink: self.seed_shrink,
            ..EmConfig::default()
        }
    }

    pub fn semantic(&self) -> SemanticConfig {
        SemanticConfig {
            superpixel_target: self.superpixel_target,
            lambda: self.lambda,
            nms_iou: self.nms_iou,
            detection_threshold: self.detection_threshold,
        }
    }
}
