//! Out-of-fold dataset construction for gate training.
//!
//! The scripts are partitioned into K folds and each fold's prefixes are
//! produced by a draft source configured without that fold, so no example is
//! ever labeled by a generator that saw it. The label oracle is pluggable:
//! ground-truth label files for replay corpora, or a rule-based checker for
//! synthetic drafts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PrefixLabel;
use crate::fast_path::{DraftError, DraftPrefix, DraftRequest, DraftSource, ForkKind};
use crate::timeline::{Channel, ControlToken, ConversationScript, Payload, Tick};

#[derive(Debug, Error)]
pub enum KfoldError {
    #[error("K must be at least 2, got {0}")]
    BadK(usize),
    #[error("cannot split {scripts} scripts into {k} folds")]
    TooFewScripts { k: usize, scripts: usize },
    #[error("factory for fold {expected} returned a source excluding fold {got:?}")]
    FoldMismatch { expected: usize, got: Option<usize> },
    #[error("no label for {0}")]
    MissingLabel(String),
    #[error(transparent)]
    Draft(#[from] DraftError),
    #[error("label file line {line}: {message}")]
    LabelFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training example: the drafted prefix's verifier inputs plus its
/// oracle label and fold bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrefix {
    pub script_id: String,
    pub fold: usize,
    /// The fold the generating source was configured to exclude; must equal
    /// `fold` for the out-of-fold property to hold.
    pub generator_excluded_fold: usize,
    pub label: PrefixLabel,
    pub prefix: DraftPrefix,
}

pub trait LabelOracle {
    fn label(&self, script_id: &str, prefix: &DraftPrefix) -> Result<PrefixLabel, KfoldError>;
}

/// Ground-truth labels (and optional 1-5 quality scores) loaded from a file:
/// one `id | good|bad [| score]` record per line, `#` comments ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileLabelOracle {
    labels: BTreeMap<String, PrefixLabel>,
    quality: BTreeMap<String, u8>,
}

impl FileLabelOracle {
    pub fn from_path(path: &Path) -> Result<Self, KfoldError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self, KfoldError> {
        let mut labels = BTreeMap::new();
        let mut quality = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('|').map(str::trim).collect();
            if parts.len() < 2 || parts.len() > 3 {
                return Err(KfoldError::LabelFormat {
                    line: idx + 1,
                    message: "expected `id | label [| score]`".into(),
                });
            }
            let label = PrefixLabel::parse(parts[1]).ok_or_else(|| KfoldError::LabelFormat {
                line: idx + 1,
                message: format!("unknown label {:?}", parts[1]),
            })?;
            labels.insert(parts[0].to_string(), label);
            if parts.len() == 3 {
                let score: u8 = parts[2].parse().map_err(|_| KfoldError::LabelFormat {
                    line: idx + 1,
                    message: format!("bad quality score {:?}", parts[2]),
                })?;
                if !(1..=5).contains(&score) {
                    return Err(KfoldError::LabelFormat {
                        line: idx + 1,
                        message: format!("quality score {score} outside 1..=5"),
                    });
                }
                quality.insert(parts[0].to_string(), score);
            }
        }
        Ok(Self { labels, quality })
    }

    pub fn from_labels(labels: BTreeMap<String, PrefixLabel>) -> Self {
        Self { labels, quality: BTreeMap::new() }
    }

    pub fn quality_scores(&self) -> &BTreeMap<String, u8> {
        &self.quality
    }

    pub fn label_distribution(&self) -> (usize, usize) {
        let bad = self.labels.values().filter(|l| **l == PrefixLabel::Bad).count();
        (self.labels.len() - bad, bad)
    }
}

impl LabelOracle for FileLabelOracle {
    fn label(&self, script_id: &str, _prefix: &DraftPrefix) -> Result<PrefixLabel, KfoldError> {
        self.labels
            .get(script_id)
            .copied()
            .ok_or_else(|| KfoldError::MissingLabel(script_id.to_string()))
    }
}

/// Rule-based checker over drafted prefixes: a draft is bad when its mean
/// next-token entropy is high or it stutters (immediate word repeat).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleLabelOracle {
    pub max_mean_entropy_nats: f64,
    pub flag_immediate_repeats: bool,
}

impl Default for RuleLabelOracle {
    fn default() -> Self {
        Self { max_mean_entropy_nats: 1.2, flag_immediate_repeats: true }
    }
}

impl LabelOracle for RuleLabelOracle {
    fn label(&self, _script_id: &str, prefix: &DraftPrefix) -> Result<PrefixLabel, KfoldError> {
        let mean_entropy = prefix.scalar_features.iter().map(|f| f.entropy).sum::<f64>()
            / prefix.len() as f64;
        if mean_entropy > self.max_mean_entropy_nats {
            return Ok(PrefixLabel::Bad);
        }
        if self.flag_immediate_repeats
            && prefix.words.windows(2).any(|pair| pair[0] == pair[1])
        {
            return Ok(PrefixLabel::Bad);
        }
        Ok(PrefixLabel::Good)
    }
}

/// A draft source plus the fold it was configured to exclude. The factory
/// handing these out is the stand-in for "train the generator on the other
/// K-1 folds".
pub struct FoldScopedSource {
    pub excluded_fold: usize,
    pub source: Box<dyn DraftSource>,
}

/// Builds one labeled prefix per script under the out-of-fold discipline.
/// Fold assignment is round-robin by script order, so fold sizes differ by at
/// most one and coverage is total.
pub fn build_kfold_dataset(
    scripts: &[ConversationScript],
    k: usize,
    factory: &mut dyn FnMut(usize) -> FoldScopedSource,
    oracle: &dyn LabelOracle,
    prefix_len: usize,
) -> Result<Vec<LabeledPrefix>, KfoldError> {
    if k < 2 {
        return Err(KfoldError::BadK(k));
    }
    if k > scripts.len() {
        return Err(KfoldError::TooFewScripts { k, scripts: scripts.len() });
    }

    let mut sources: Vec<FoldScopedSource> = Vec::with_capacity(k);
    for fold in 0..k {
        let scoped = factory(fold);
        if scoped.excluded_fold != fold {
            return Err(KfoldError::FoldMismatch {
                expected: fold,
                got: Some(scoped.excluded_fold),
            });
        }
        sources.push(scoped);
    }

    let mut dataset = Vec::with_capacity(scripts.len());
    for (index, script) in scripts.iter().enumerate() {
        let fold = index % k;
        let scoped = &mut sources[fold];
        let (fork_tick, context_words) = first_agent_turn(script);
        let request = DraftRequest {
            script_id: &script.metadata.id,
            turn_index: 0,
            fork_tick,
            kind: ForkKind::Response,
            max_words: prefix_len,
            context_words: &context_words,
        };
        let prefix = scoped.source.draft(&request)?;
        let label = oracle.label(&script.metadata.id, &prefix)?;
        dataset.push(LabeledPrefix {
            script_id: script.metadata.id.clone(),
            fold,
            generator_excluded_fold: scoped.excluded_fold,
            label,
            prefix,
        });
    }
    Ok(dataset)
}

/// Writes a dataset as one JSON record per line: fold, label, prefix length,
/// and the flattened feature payloads.
pub fn save_dataset(path: &Path, dataset: &[LabeledPrefix]) -> Result<(), KfoldError> {
    let mut out = String::new();
    for example in dataset {
        out.push_str(&serde_json::to_string(example).map_err(|e| KfoldError::LabelFormat {
            line: 0,
            message: e.to_string(),
        })?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<LabeledPrefix>, KfoldError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| KfoldError::LabelFormat {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// First response opening in the script: the opening `[BOS]` tick and the
/// agent words up to the turn's close.
pub fn first_agent_turn(script: &ConversationScript) -> (Tick, Vec<String>) {
    let bos = script
        .reference_actions
        .iter()
        .find(|(_, a)| *a == ControlToken::Bos)
        .map(|(t, _)| *t)
        .unwrap_or(Tick(0));
    let close = script
        .reference_actions
        .iter()
        .find(|(t, a)| *t > bos && matches!(a, ControlToken::Eos | ControlToken::Stp))
        .map(|(t, _)| *t)
        .unwrap_or(Tick(u64::MAX));
    let words = script
        .events
        .iter()
        .filter(|e| e.channel == Channel::Agent && e.tick >= bos && e.tick <= close)
        .filter_map(|e| match &e.payload {
            Payload::Word(w) => Some(w.clone()),
            Payload::Control(_) => None,
        })
        .collect();
    (bos, words)
}
