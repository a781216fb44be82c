//! Sample entropy, multiscale entropy and noise injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("series of length {len} too short for embedding dimension {m} (need at least {})", m + 2)]
    SeriesTooShort { len: usize, m: usize },
    #[error("scale {scale} leaves {len} coarse-grained points, need at least {needed}")]
    ScaleTooLarge { scale: usize, len: usize, needed: usize },
    #[error("invalid entropy parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyParams {
    /// Embedding dimension.
    pub m: usize,
    /// Tolerance as a fraction of the series standard deviation.
    pub r_factor: f64,
    pub max_scale: usize,
}

impl Default for EntropyParams {
    fn default() -> Self {
        EntropyParams {
            m: 2,
            r_factor: 0.15,
            max_scale: 10,
        }
    }
}

impl EntropyParams {
    pub fn validate(&self) -> Result<(), EntropyError> {
        if self.m < 1 {
            return Err(EntropyError::InvalidParams("m must be >= 1".into()));
        }
        if !(self.r_factor > 0.0 && self.r_factor < 1.0) {
            return Err(EntropyError::InvalidParams(format!(
                "r_factor {} outside (0, 1)",
                self.r_factor
            )));
        }
        if self.max_scale < 1 {
            return Err(EntropyError::InvalidParams("max_scale must be >= 1".into()));
        }
        Ok(())
    }
}

/// Template match counts behind a sample entropy value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchCounts {
    /// Pairs of (m+1)-length templates within tolerance.
    pub a: u64,
    /// Pairs of m-length templates within tolerance.
    pub b: u64,
}

impl MatchCounts {
    /// `-ln(A/B)`, or `None` when either count is zero.
    pub fn sampen(&self) -> Option<f64> {
        if self.a == 0 || self.b == 0 {
            None
        } else {
            Some(-(self.a as f64 / self.b as f64).ln())
        }
    }
}

pub fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Counts template matches with an absolute tolerance `r` (Chebyshev
/// distance `<= r`, self-matches excluded).
///
/// `B` ranges over all `N - m + 1` templates of length `m` and `A` over all
/// `N - m` templates of length `m + 1`.
pub fn match_counts(series: &[f64], m: usize, r: f64) -> Result<MatchCounts, EntropyError> {
    let n = series.len();
    if n < m + 2 {
        return Err(EntropyError::SeriesTooShort { len: n, m });
    }
    let short = n - m + 1;
    let (mut a, mut b) = (0u64, 0u64);
    for i in 0..short {
        for j in (i + 1)..short {
            if (0..m).all(|k| (series[i + k] - series[j + k]).abs() <= r) {
                b += 1;
                if j + m < n && (series[i + m] - series[j + m]).abs() <= r {
                    a += 1;
                }
            }
        }
    }
    Ok(MatchCounts { a, b })
}

/// Sample entropy with tolerance `r_factor * std(series)`.
pub fn sample_entropy(series: &[f64], params: &EntropyParams) -> Result<Option<f64>, EntropyError> {
    let r = params.r_factor * population_std(series);
    Ok(match_counts(series, params.m, r)?.sampen())
}

/// Non-overlapping means of `scale` consecutive samples; the trailing
/// remainder is dropped.
pub fn coarse_grain(series: &[f64], scale: usize) -> Vec<f64> {
    assert!(scale >= 1, "scale must be >= 1");
    series
        .chunks_exact(scale)
        .map(|c| c.iter().sum::<f64>() / scale as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntropy {
    pub tau: usize,
    pub sampen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub per_scale: Vec<ScaleEntropy>,
    /// Sum of the defined per-scale entropies.
    pub complexity_index: f64,
}

impl EntropyProfile {
    pub fn recomputed_ci(&self) -> f64 {
        self.per_scale.iter().filter_map(|s| s.sampen).sum()
    }
}

/// Multiscale entropy over scales `1..=max_scale`. The tolerance is fixed
/// from the scale-1 series at every scale. Undefined scales are kept as
/// `None` and left out of the complexity index.
pub fn multiscale_entropy(series: &[f64], params: &EntropyParams) -> Result<EntropyProfile, EntropyError> {
    params.validate()?;
    let needed = params.m + 2;
    let shortest = series.len() / params.max_scale;
    if shortest < needed {
        return Err(EntropyError::ScaleTooLarge {
            scale: params.max_scale,
            len: shortest,
            needed,
        });
    }
    let r = params.r_factor * population_std(series);
    let mut per_scale = Vec::with_capacity(params.max_scale);
    for tau in 1..=params.max_scale {
        let grained = coarse_grain(series, tau);
        let sampen = match_counts(&grained, params.m, r)?.sampen();
        if sampen.is_none() {
            log::warn!("sample entropy undefined at scale {tau}; excluded from complexity index");
        }
        per_scale.push(ScaleEntropy { tau, sampen });
    }
    let complexity_index = per_scale.iter().filter_map(|s| s.sampen).sum();
    Ok(EntropyProfile {
        per_scale,
        complexity_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub max_magnitude: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            max_magnitude: 4.0,
            seed: 0,
        }
    }
}

/// Draws from a zero-mean Gaussian with `sigma = max_magnitude / 3`,
/// re-sampling anything outside `[-max_magnitude, max_magnitude]`.
pub struct TruncatedGaussian {
    normal: Normal<f64>,
    bound: f64,
}

impl TruncatedGaussian {
    pub fn new(max_magnitude: f64) -> Self {
        assert!(max_magnitude > 0.0, "max_magnitude must be positive");
        TruncatedGaussian {
            normal: Normal::new(0.0, max_magnitude / 3.0).expect("finite sigma"),
            bound: max_magnitude,
        }
    }
}

impl Distribution<f64> for TruncatedGaussian {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let d = self.normal.sample(rng);
            if d.abs() <= self.bound {
                return d;
            }
        }
    }
}

/// Adds bounded Gaussian noise to every element, row-major draw order.
pub fn add_gaussian_noise(window: &[Vec<f64>], spec: &NoiseSpec) -> Vec<Vec<f64>> {
    let dist = TruncatedGaussian::new(spec.max_magnitude);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    window
        .iter()
        .map(|row| row.iter().map(|v| v + dist.sample(&mut rng)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelShift {
    pub channel: usize,
    pub clean: EntropyProfile,
    pub noisy: EntropyProfile,
    pub delta: f64,
}

/// Per-channel complexity indices of a clean window and its noisy version.
pub fn complexity_shift_report(
    clean: &[Vec<f64>],
    noisy: &[Vec<f64>],
    params: &EntropyParams,
) -> Result<Vec<ChannelShift>, EntropyError> {
    if clean.len() != noisy.len() || clean.iter().zip(noisy).any(|(c, n)| c.len() != n.len()) {
        return Err(EntropyError::ShapeMismatch(
            "clean and noisy windows differ in shape".into(),
        ));
    }
    clean
        .iter()
        .zip(noisy)
        .enumerate()
        .map(|(channel, (c, n))| {
            let clean = multiscale_entropy(c, params)?;
            let noisy = multiscale_entropy(n, params)?;
            let delta = noisy.complexity_index - clean.complexity_index;
            Ok(ChannelShift {
                channel,
                clean,
                noisy,
                delta,
            })
        })
        .collect()
}
