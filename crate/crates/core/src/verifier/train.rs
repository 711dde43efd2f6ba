//! Deterministic training and evaluation for the prefix gate.
//!
//! Plain stochastic gradient descent with momentum over focal loss, seeded
//! shuffling, and a stratified held-out split. Given the same dataset, config
//! and seed, two runs produce bit-identical models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kfold::LabeledPrefix;
use super::loss::{focal_loss, FocalLossConfig, LossError};
use super::net::{ParamVector, VerifierConfig, VerifierError, VerifierModel};
use super::PrefixLabel;
use crate::seed::derive_rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset must contain both classes (got {good} good, {bad} bad)")]
    SingleClass { good: usize, bad: usize },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: VerifierConfig,
    pub loss: FocalLossConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Fraction of each class held out for evaluation.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: VerifierConfig::default(),
            loss: FocalLossConfig::default(),
            epochs: 30,
            learning_rate: 0.05,
            momentum: 0.9,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_size: usize,
    pub holdout_size: usize,
    pub epochs: usize,
    pub parameter_count: usize,
    pub final_train_loss: f64,
    /// Held-out AUROC for the good class as positive.
    pub auroc: f64,
    /// Held-out average precision with the bad class as positive.
    pub average_precision_bad: f64,
    /// Held-out recall on the bad class at threshold 0.5.
    pub bad_recall_at_half: f64,
    pub holdout_bad_count: usize,
}

/// Trains a fresh model. Deterministic for a fixed (dataset, config) pair.
pub fn train(
    dataset: &[LabeledPrefix],
    config: &TrainConfig,
) -> Result<(VerifierModel, TrainingReport), TrainError> {
    use rand::seq::SliceRandom;

    config.loss.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Empty);
    }
    let good: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].label == PrefixLabel::Good)
        .collect();
    let bad: Vec<usize> =
        (0..dataset.len()).filter(|&i| dataset[i].label == PrefixLabel::Bad).collect();
    if good.is_empty() || bad.is_empty() {
        return Err(TrainError::SingleClass { good: good.len(), bad: bad.len() });
    }

    // Stratified holdout keeps the minority class represented on both sides.
    let mut split_rng = derive_rng(config.seed, &["train", "split"]);
    let mut good = good;
    let mut bad = bad;
    good.shuffle(&mut split_rng);
    bad.shuffle(&mut split_rng);
    // A class with a single example stays in the training set; the held-out
    // metrics are then undefined (NaN) rather than training being impossible.
    let stratum = |len: usize| -> usize {
        let lower = usize::from(len > 1);
        ((len as f64 * config.holdout_fraction).round() as usize).clamp(lower, len - 1)
    };
    let hold_good = stratum(good.len());
    let hold_bad = stratum(bad.len());
    let mut holdout: Vec<usize> = good[..hold_good].to_vec();
    holdout.extend_from_slice(&bad[..hold_bad]);
    let mut train_set: Vec<usize> = good[hold_good..].to_vec();
    train_set.extend_from_slice(&bad[hold_bad..]);
    holdout.sort_unstable();
    train_set.sort_unstable();

    let mut model = VerifierModel::init_seeded(config.model, config.seed)?;
    let mut velocity = ParamVector::zeros(&config.model);

    let mut final_train_loss = 0.0;
    for epoch in 0..config.epochs {
        let mut order = train_set.clone();
        let mut epoch_rng = derive_rng(config.seed, &["train", "epoch", &epoch.to_string()]);
        order.shuffle(&mut epoch_rng);

        let mut epoch_loss = 0.0;
        for &index in &order {
            let example = &dataset[index];
            let trace = model.forward_trace_prefix(&example.prefix)?;
            let loss = focal_loss(trace.confidence, example.label, &config.loss);
            epoch_loss += loss.loss;
            let grads = model.backward(&trace, loss.grad_wrt_confidence);

            let v = velocity.as_mut_slice();
            let g = grads.as_slice();
            let p = model.params.as_mut_slice();
            for i in 0..p.len() {
                v[i] = config.momentum * v[i] - config.learning_rate * g[i];
                p[i] += v[i];
            }
        }
        final_train_loss = epoch_loss / order.len().max(1) as f64;
    }

    // Held-out evaluation.
    let mut scored: Vec<(f64, PrefixLabel)> = Vec::with_capacity(holdout.len());
    for &index in &holdout {
        let example = &dataset[index];
        let confidence = model.forward(&example.prefix)?;
        scored.push((confidence, example.label));
    }
    let auroc = auroc(&scored);
    let average_precision_bad = average_precision_bad(&scored);
    let bad_total = scored.iter().filter(|(_, l)| *l == PrefixLabel::Bad).count();
    let bad_caught = scored
        .iter()
        .filter(|(c, l)| *l == PrefixLabel::Bad && *c < 0.5)
        .count();
    let bad_recall_at_half =
        if bad_total > 0 { bad_caught as f64 / bad_total as f64 } else { 0.0 };

    let report = TrainingReport {
        train_size: train_set.len(),
        holdout_size: holdout.len(),
        epochs: config.epochs,
        parameter_count: model.param_count(),
        final_train_loss,
        auroc,
        average_precision_bad,
        bad_recall_at_half,
        holdout_bad_count: bad_total,
    };
    Ok((model, report))
}

/// Rank-based AUROC with midranks for ties; the good class is positive.
pub fn auroc(scored: &[(f64, PrefixLabel)]) -> f64 {
    let positives = scored.iter().filter(|(_, l)| *l == PrefixLabel::Good).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));

    let mut rank_sum_positive = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        // Average rank over the tie group (1-based ranks).
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if scored[k].1 == PrefixLabel::Good {
                rank_sum_positive += midrank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    (rank_sum_positive - p * (p + 1.0) / 2.0) / (p * n)
}

/// Average precision with the bad class as positive, scored by `1 - c`.
pub fn average_precision_bad(scored: &[(f64, PrefixLabel)]) -> f64 {
    let total_bad = scored.iter().filter(|(_, l)| *l == PrefixLabel::Bad).count();
    if total_bad == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    // Descending bad-score = ascending confidence; ties resolved by index for
    // determinism.
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0).then(a.cmp(&b)));

    let mut true_positives = 0usize;
    let mut sum = 0.0;
    for (seen, &k) in order.iter().enumerate() {
        if scored[k].1 == PrefixLabel::Bad {
            true_positives += 1;
            sum += true_positives as f64 / (seen + 1) as f64;
        }
    }
    sum / total_bad as f64
}

/// One row of a threshold sweep over a scored evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOperatingPoint {
    pub threshold: f64,
    /// Fraction of bad prefixes incorrectly committed.
    pub bad_commit_rate: f64,
    /// Fraction of good prefixes correctly committed.
    pub good_commit_rate: f64,
    /// Fraction of all prefixes that fall back.
    pub fallback_rate: f64,
}

/// Commit/fallback accounting across thresholds for a fixed evaluation set.
pub fn threshold_sweep(
    scored: &[(f64, PrefixLabel)],
    thresholds: &[f64],
) -> Vec<ThresholdOperatingPoint> {
    let total = scored.len().max(1) as f64;
    let total_bad = scored.iter().filter(|(_, l)| *l == PrefixLabel::Bad).count();
    let total_good = scored.len() - total_bad;
    thresholds
        .iter()
        .map(|&threshold| {
            let committed_bad = scored
                .iter()
                .filter(|(c, l)| *l == PrefixLabel::Bad && *c >= threshold)
                .count();
            let committed_good = scored
                .iter()
                .filter(|(c, l)| *l == PrefixLabel::Good && *c >= threshold)
                .count();
            let fallbacks = scored.iter().filter(|(c, _)| *c < threshold).count();
            ThresholdOperatingPoint {
                threshold,
                bad_commit_rate: if total_bad > 0 {
                    committed_bad as f64 / total_bad as f64
                } else {
                    0.0
                },
                good_commit_rate: if total_good > 0 {
                    committed_good as f64 / total_good as f64
                } else {
                    0.0
                },
                fallback_rate: fallbacks as f64 / total,
            }
        })
        .collect()
}
