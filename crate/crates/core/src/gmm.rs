//! Diagonal-covariance Gaussian mixtures fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("component count must be positive")]
    ZeroComponents,
    #[error("invalid mixture: {0}")]
    Invalid(String),
    #[error("log-likelihood decreased from {before} to {after}")]
    NonMonotone { before: f64, after: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood change falls below this.
    pub tol: f64,
    pub variance_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// A fitted mixture and the total log-likelihood after initialisation and
/// after every EM iteration.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub mixture: GaussianMixture,
    pub log_likelihoods: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self, GmmError> {
        let k = weights.len();
        if k == 0 {
            return Err(GmmError::ZeroComponents);
        }
        if means.len() != k || variances.len() != k {
            return Err(GmmError::Invalid("weights, means and variances disagree on k".into()));
        }
        let d = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(GmmError::Invalid("ragged parameter rows".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GmmError::Invalid("weights are not a probability vector".into()));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) || variances.iter().flatten().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(GmmError::Invalid("non-finite mean or non-positive variance".into()));
        }
        Ok(Self { weights, means, variances })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// `log Σ_c w_c N(f; μ_c, diag(σ²_c))`.
    pub fn log_density(&self, f: &[f64]) -> Result<f64, GmmError> {
        if f.len() != self.dim() {
            return Err(GmmError::DimensionMismatch {
                expected: self.dim(),
                got: f.len(),
            });
        }
        let mut scratch = vec![0.0; self.k()];
        Ok(self.log_density_into(f, &mut scratch))
    }

    /// Fills `out[c]` with `log w_c + log N_c(f)` and returns their
    /// log-sum-exp.
    fn log_density_into(&self, f: &[f64], out: &mut [f64]) -> f64 {
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = if self.weights[c] > 0.0 {
                self.weights[c].ln() + component_log_pdf(f, &self.means[c], &self.variances[c])
            } else {
                f64::NEG_INFINITY
            };
        }
        log_sum_exp(out)
    }

    pub fn log_likelihood<S: AsRef<[f64]>>(&self, samples: &[S]) -> Result<f64, GmmError> {
        samples.iter().map(|s| self.log_density(s.as_ref())).sum()
    }

    /// Runs EM starting from `self` rather than from a fresh seeding. The
    /// log-likelihood of `samples` never drops below its value under `self`.
    pub fn refine<S: AsRef<[f64]>>(&self, samples: &[S], opts: &FitOptions) -> Result<FitOutcome, GmmError> {
        let d = self.dim();
        check_samples(samples, 1, d)?;
        run_em(self.clone(), samples, opts)
    }
}

fn component_log_pdf(f: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((x, m), v) in f.iter().zip(mean).zip(var) {
        let diff = x - m;
        acc += LN_2PI + v.ln() + diff * diff / v;
    }
    -0.5 * acc
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_samples<S: AsRef<[f64]>>(samples: &[S], needed: usize, d: usize) -> Result<(), GmmError> {
    if samples.len() < needed {
        return Err(GmmError::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.as_ref().len() != d) {
        return Err(GmmError::DimensionMismatch {
            expected: d,
            got: bad.as_ref().len(),
        });
    }
    Ok(())
}

pub fn fit<S: AsRef<[f64]>>(samples: &[S], k: usize, seed: u64) -> Result<GaussianMixture, GmmError> {
    fit_with(samples, k, seed, &FitOptions::default()).map(|o| o.mixture)
}

/// k-means++ seeding followed by EM. Initial means are the seeds, initial
/// variances the floored global per-dimension variance, weights uniform.
pub fn fit_with<S: AsRef<[f64]>>(samples: &[S], k: usize, seed: u64, opts: &FitOptions) -> Result<FitOutcome, GmmError> {
    if k == 0 {
        return Err(GmmError::ZeroComponents);
    }
    let d = samples.first().map_or(0, |s| s.as_ref().len());
    check_samples(samples, k, d)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = kmeans_plus_plus(samples, k, &mut rng);
    let n = samples.len() as f64;
    let global_mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s.as_ref()[j]).sum::<f64>() / n).collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let v = samples.iter().map(|s| (s.as_ref()[j] - global_mean[j]).powi(2)).sum::<f64>() / n;
            v.max(opts.variance_floor)
        })
        .collect();
    let init = GaussianMixture {
        weights: vec![1.0 / k as f64; k],
        means,
        variances: vec![global_var; k],
    };
    run_em(init, samples, opts)
}

fn kmeans_plus_plus<S: AsRef<[f64]>>(samples: &[S], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let first = rng.random_range(0..samples.len());
    let mut centers = vec![samples[first].as_ref().to_vec()];
    let mut nearest: Vec<f64> = samples.iter().map(|s| sq(s.as_ref(), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            nearest
                .iter()
                .position(|&d| {
                    target -= d;
                    target < 0.0
                })
                .unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..samples.len())
        };
        let c = samples[pick].as_ref().to_vec();
        for (d, s) in nearest.iter_mut().zip(samples) {
            *d = d.min(sq(s.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

/// Responsibilities (row per sample) and total log-likelihood.
fn e_step<S: AsRef<[f64]>>(g: &GaussianMixture, samples: &[S]) -> (Vec<Vec<f64>>, f64) {
    let mut total = 0.0;
    let resp = samples
        .iter()
        .map(|s| {
            let mut r = vec![0.0; g.k()];
            let lse = g.log_density_into(s.as_ref(), &mut r);
            total += lse;
            r.iter_mut().for_each(|x| *x = (*x - lse).exp());
            r
        })
        .collect();
    (resp, total)
}

fn m_step<S: AsRef<[f64]>>(prev: &GaussianMixture, samples: &[S], resp: &[Vec<f64>], floor: f64) -> GaussianMixture {
    let (k, d) = (prev.k(), prev.dim());
    let n = samples.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        if nk <= 1e-12 {
            // a starved component keeps its shape with zero weight
            weights.push(0.0);
            means.push(prev.means[c].clone());
            variances.push(prev.variances[c].clone());
            continue;
        }
        let mut mean = vec![0.0; d];
        for (s, r) in samples.iter().zip(resp) {
            for (m, x) in mean.iter_mut().zip(s.as_ref()) {
                *m += r[c] * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; d];
        for (s, r) in samples.iter().zip(resp) {
            for ((v, x), m) in var.iter_mut().zip(s.as_ref()).zip(&mean) {
                *v += r[c] * (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / nk).max(floor));
        weights.push(nk / n);
        means.push(mean);
        variances.push(var);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture { weights, means, variances }
}

fn run_em<S: AsRef<[f64]>>(init: GaussianMixture, samples: &[S], opts: &FitOptions) -> Result<FitOutcome, GmmError> {
    let mut g = init;
    let (mut resp, mut ll) = e_step(&g, samples);
    let mut trace = vec![ll];
    for _ in 0..opts.max_iters {
        let next = m_step(&g, samples, &resp, opts.variance_floor);
        let (next_resp, next_ll) = e_step(&next, samples);
        if next_ll < ll - 1e-9 * ll.abs().max(1.0) {
            return Err(GmmError::NonMonotone {
                before: ll,
                after: next_ll,
            });
        }
        let converged = (next_ll - ll).abs() <= opts.tol * ll.abs().max(f64::MIN_POSITIVE);
        g = next;
        resp = next_resp;
        ll = next_ll;
        trace.push(ll);
        if converged {
            break;
        }
    }
    Ok(FitOutcome {
        mixture: g,
        log_likelihoods: trace,
    })
}
