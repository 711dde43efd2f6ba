//! Per-token calibration features extracted from a next-token distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Infinite margins (one-hot distributions) clamp here so features stay
/// bounded for training.
pub const DEFAULT_MARGIN_CAP_NATS: f64 = 30.0;

/// Tolerance on `sum(p) == 1` for incoming distributions.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("distribution needs at least 2 entries, got {0}")]
    TooFewEntries(usize),
    #[error("distribution sums to {0}, expected 1 within {NORMALIZATION_TOLERANCE}")]
    NotNormalized(f64),
    #[error("distribution entry {index} is negative ({value})")]
    NegativeProbability { index: usize, value: f64 },
    #[error("selected index {0} out of bounds for {1} entries")]
    SelectedOutOfBounds(usize, usize),
    #[error("selected entry has zero probability")]
    DegenerateSelection,
}

/// Entropy, selected-token log-probability, and top-two margin, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarFeatures {
    /// Distribution entropy; zero iff the distribution is one-hot.
    pub entropy: f64,
    /// `ln p(selected)`; always <= 0.
    pub log_prob: f64,
    /// `ln p(selected) - ln p(runner-up)` when the selected entry is the
    /// argmax; otherwise `ln p(selected) - ln p(argmax)`, which is negative
    /// and flagged via `non_argmax`.
    pub margin: f64,
    /// True when the selected token was not the argmax (sampled decoding).
    pub non_argmax: bool,
}

impl ScalarFeatures {
    pub fn as_vector(&self) -> [f64; 3] {
        [self.entropy, self.log_prob, self.margin]
    }

    pub fn from_vector(v: [f64; 3]) -> Self {
        Self { entropy: v[0], log_prob: v[1], margin: v[2], non_argmax: v[2] < 0.0 }
    }
}

pub fn compute_scalar_features(
    distribution: &[f64],
    selected_index: usize,
) -> Result<ScalarFeatures, FeatureError> {
    compute_scalar_features_capped(distribution, selected_index, DEFAULT_MARGIN_CAP_NATS)
}

pub fn compute_scalar_features_capped(
    distribution: &[f64],
    selected_index: usize,
    margin_cap: f64,
) -> Result<ScalarFeatures, FeatureError> {
    if distribution.len() < 2 {
        return Err(FeatureError::TooFewEntries(distribution.len()));
    }
    let mut sum = 0.0;
    for (index, &p) in distribution.iter().enumerate() {
        if p < 0.0 {
            return Err(FeatureError::NegativeProbability { index, value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(FeatureError::NotNormalized(sum));
    }
    if selected_index >= distribution.len() {
        return Err(FeatureError::SelectedOutOfBounds(selected_index, distribution.len()));
    }
    let selected = distribution[selected_index];
    if selected <= 0.0 {
        return Err(FeatureError::DegenerateSelection);
    }

    let entropy = distribution
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0);
    let log_prob = selected.ln().min(0.0);

    let max_other = distribution
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != selected_index)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);

    let (margin, non_argmax) = if selected >= max_other {
        let m = if max_other > 0.0 { (log_prob - max_other.ln()).min(margin_cap) } else { margin_cap };
        (m, false)
    } else {
        (log_prob - max_other.ln(), true)
    };

    Ok(ScalarFeatures { entropy, log_prob, margin, non_argmax })
}
