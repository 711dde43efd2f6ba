//! Focal loss for the commit/fallback classifier.
//!
//! Good prefixes dominate the training pool, so plain cross-entropy lets the
//! easy majority swamp the rare-but-costly bad-prefix decisions. The focal
//! exponent downweights well-classified examples; per-class weights rebalance
//! the rest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PrefixLabel;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("class weights must be positive (good {0}, bad {1})")]
    NonPositiveWeight(f64, f64),
    #[error("gamma must be non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("epsilon must lie in (0, 0.5), got {0}")]
    BadEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub alpha_good: f64,
    pub alpha_bad: f64,
    pub gamma: f64,
    /// Confidence clamp keeping `ln` finite.
    pub epsilon: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self { alpha_good: 0.25, alpha_bad: 0.75, gamma: 2.0, epsilon: 1e-7 }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.alpha_good <= 0.0 || self.alpha_bad <= 0.0 {
            return Err(LossError::NonPositiveWeight(self.alpha_good, self.alpha_bad));
        }
        if self.gamma < 0.0 {
            return Err(LossError::NegativeGamma(self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(LossError::BadEpsilon(self.epsilon));
        }
        Ok(())
    }

    fn alpha(&self, label: PrefixLabel) -> f64 {
        match label {
            PrefixLabel::Good => self.alpha_good,
            PrefixLabel::Bad => self.alpha_bad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLoss {
    pub loss: f64,
    /// Analytic `d loss / d confidence`, evaluated at the clamped point.
    pub grad_wrt_confidence: f64,
}

/// The model outputs `confidence` = probability of the good class; the
/// correct-class probability is `confidence` for good examples and
/// `1 - confidence` for bad ones.
pub fn focal_loss(confidence: f64, label: PrefixLabel, config: &FocalLossConfig) -> FocalLoss {
    let eps = config.epsilon;
    let c = confidence.clamp(eps, 1.0 - eps);
    let (p_correct, dp_dc) = match label {
        PrefixLabel::Good => (c, 1.0),
        PrefixLabel::Bad => (1.0 - c, -1.0),
    };
    let alpha = config.alpha(label);
    let one_minus = 1.0 - p_correct;
    let focal_weight = one_minus.powf(config.gamma);
    let loss = -alpha * focal_weight * p_correct.ln();

    // d/dp [ -a (1-p)^g ln p ] = a [ g (1-p)^(g-1) ln p - (1-p)^g / p ]
    let dterm = if config.gamma == 0.0 {
        -1.0 / p_correct
    } else {
        config.gamma * one_minus.powf(config.gamma - 1.0) * p_correct.ln()
            - focal_weight / p_correct
    };
    let grad_wrt_confidence = alpha * dterm * dp_dc;

    FocalLoss { loss, grad_wrt_confidence }
}

/// Plain binary cross-entropy with the same clamping; the gamma = 0,
/// alpha = 1 reference point.
pub fn binary_cross_entropy(confidence: f64, label: PrefixLabel, epsilon: f64) -> f64 {
    let c = confidence.clamp(epsilon, 1.0 - epsilon);
    match label {
        PrefixLabel::Good => -c.ln(),
        PrefixLabel::Bad => -(1.0 - c).ln(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bce_config() -> FocalLossConfig {
        FocalLossConfig { alpha_good: 1.0, alpha_bad: 1.0, gamma: 0.0, epsilon: 1e-7 }
    }

    #[test]
    fn gamma_zero_alpha_one_reduces_to_bce() {
        let config = bce_config();
        for &c in &[0.01, 0.2, 0.5, 0.77, 0.99, 0.0, 1.0] {
            for label in [PrefixLabel::Good, PrefixLabel::Bad] {
                let focal = focal_loss(c, label, &config);
                let bce = binary_cross_entropy(c, label, config.epsilon);
                assert!(
                    (focal.loss - bce).abs() <= 1e-12,
                    "c={c} label={label:?}: {} vs {}",
                    focal.loss,
                    bce
                );
            }
        }
    }

    #[test]
    fn perfect_prediction_has_negligible_loss() {
        let config = FocalLossConfig::default();
        let good = focal_loss(1.0, PrefixLabel::Good, &config);
        assert!(good.loss.abs() < 1e-6);
        let bad = focal_loss(0.0, PrefixLabel::Bad, &config);
        assert!(bad.loss.abs() < 1e-6);
    }

    // Closed form: alpha (1-p)^gamma (-ln p) = 0.25 * 0.25 * ln 2.
    #[test]
    fn mid_confidence_matches_closed_form() {
        let config = FocalLossConfig { alpha_good: 0.25, alpha_bad: 0.25, gamma: 2.0, epsilon: 1e-7 };
        let expected = 0.25 * 0.25 * std::f64::consts::LN_2;
        let good = focal_loss(0.5, PrefixLabel::Good, &config);
        assert!((good.loss - expected).abs() < 1e-12);
        assert!((good.loss - 0.04332169878499658).abs() < 1e-12);
        // p_correct = 0.5 for either label at c = 0.5.
        let bad = focal_loss(0.5, PrefixLabel::Bad, &config);
        assert!((bad.loss - expected).abs() < 1e-12);
    }

    // Oracle: central finite differences over the confidence.
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let configs = [
            FocalLossConfig::default(),
            bce_config(),
            FocalLossConfig { alpha_good: 0.4, alpha_bad: 1.7, gamma: 1.0, epsilon: 1e-7 },
            FocalLossConfig { alpha_good: 2.0, alpha_bad: 0.5, gamma: 3.5, epsilon: 1e-7 },
        ];
        let h = 1e-6;
        for config in &configs {
            for &c in &[0.05, 0.3, 0.5, 0.72, 0.95] {
                for label in [PrefixLabel::Good, PrefixLabel::Bad] {
                    let grad = focal_loss(c, label, config).grad_wrt_confidence;
                    let plus = focal_loss(c + h, label, config).loss;
                    let minus = focal_loss(c - h, label, config).loss;
                    let fd = (plus - minus) / (2.0 * h);
                    let denom = grad.abs().max(fd.abs()).max(1.0);
                    assert!(
                        ((grad - fd) / denom).abs() < 1e-6,
                        "config={config:?} c={c} label={label:?}: analytic {grad} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_points_the_right_way() {
        let config = FocalLossConfig::default();
        // For a good label, increasing confidence decreases loss.
        assert!(focal_loss(0.5, PrefixLabel::Good, &config).grad_wrt_confidence < 0.0);
        // For a bad label, increasing confidence increases loss.
        assert!(focal_loss(0.5, PrefixLabel::Bad, &config).grad_wrt_confidence > 0.0);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        assert!(FocalLossConfig { alpha_good: 0.0, ..Default::default() }.validate().is_err());
        assert!(FocalLossConfig { gamma: -1.0, ..Default::default() }.validate().is_err());
        assert!(FocalLossConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        assert!(FocalLossConfig { epsilon: 0.6, ..Default::default() }.validate().is_err());
        assert!(FocalLossConfig::default().validate().is_ok());
    }
}
