//! Selective prefix-handoff verification: the gating network, its focal-loss
//! training loop, calibration-feature extraction, and the out-of-fold
//! dataset pipeline.

pub mod features;
pub mod kfold;
pub mod loss;
pub mod net;
pub mod train;
pub mod weights_io;

use serde::{Deserialize, Serialize};

pub use features::{compute_scalar_features, compute_scalar_features_capped, ScalarFeatures};
pub use kfold::{
    build_kfold_dataset, load_dataset, save_dataset, FileLabelOracle, FoldScopedSource,
    LabelOracle, LabeledPrefix, RuleLabelOracle,
};
pub use loss::{binary_cross_entropy, focal_loss, FocalLoss, FocalLossConfig};
pub use net::{decide, Decision, ForwardTrace, ParamVector, VerifierConfig, VerifierError, VerifierModel};
pub use train::{
    auroc, average_precision_bad, threshold_sweep, train, ThresholdOperatingPoint, TrainConfig,
    TrainingReport,
};
pub use weights_io::{load_weights, save_weights};

/// Binary quality label for a drafted prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixLabel {
    Good,
    Bad,
}

impl PrefixLabel {
    pub fn parse(s: &str) -> Option<PrefixLabel> {
        match s {
            "good" => Some(PrefixLabel::Good),
            "bad" => Some(PrefixLabel::Bad),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrefixLabel::Good => "good",
            PrefixLabel::Bad => "bad",
        }
    }
}
