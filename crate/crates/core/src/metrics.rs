//! Latency decomposition, percentile aggregation, turn-taking event scoring
//! with a tolerance window, and per-session report assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relay_buffer::AudioTimeline;
use crate::timeline::{ControlToken, Tick};
use crate::verifier::PrefixLabel;

/// A per-script control-token emission log.
pub type EventLog = Vec<(Tick, ControlToken)>;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("latency mode {mode:?} requires component {component}")]
    MissingComponent { mode: LatencyMode, component: &'static str },
    #[error("percentile of an empty sample set")]
    EmptySamples,
    #[error("percentile {0} outside 1..=100")]
    BadPercentile(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    S2sOnly,
    Cascaded,
    Commit,
    Fallback,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyComponents {
    pub t_generate_ms: Option<f64>,
    pub t_asr_ms: Option<f64>,
    pub t_verifier_ms: Option<f64>,
}

impl LatencyComponents {
    pub fn generate(t_generate_ms: f64) -> Self {
        Self { t_generate_ms: Some(t_generate_ms), ..Default::default() }
    }

    pub fn cascaded(t_asr_ms: f64, t_generate_ms: f64) -> Self {
        Self { t_asr_ms: Some(t_asr_ms), t_generate_ms: Some(t_generate_ms), ..Default::default() }
    }

    pub fn commit(t_generate_ms: f64, t_verifier_ms: f64) -> Self {
        Self {
            t_generate_ms: Some(t_generate_ms),
            t_verifier_ms: Some(t_verifier_ms),
            ..Default::default()
        }
    }
}

/// Response-onset latency for one turn: the mode's formula applied to its
/// components, exact in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnLatency {
    pub mode: LatencyMode,
    pub components: LatencyComponents,
    pub total_ms: f64,
}

pub fn latency(
    mode: LatencyMode,
    components: LatencyComponents,
) -> Result<TurnLatency, MetricsError> {
    let need = |value: Option<f64>, component: &'static str| {
        value.ok_or(MetricsError::MissingComponent { mode, component })
    };
    let total_ms = match mode {
        LatencyMode::S2sOnly => need(components.t_generate_ms, "t_generate")?,
        LatencyMode::Cascaded | LatencyMode::Fallback => {
            need(components.t_asr_ms, "t_asr")? + need(components.t_generate_ms, "t_generate")?
        }
        LatencyMode::Commit => {
            need(components.t_generate_ms, "t_generate")?
                + need(components.t_verifier_ms, "t_verifier")?
        }
    };
    Ok(TurnLatency { mode, components, total_ms })
}

/// Nearest-rank percentile: the `ceil(pct/100 * n)`-th order statistic.
pub fn percentile_nearest_rank(samples: &[f64], percentile: usize) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if !(1..=100).contains(&percentile) {
        return Err(MetricsError::BadPercentile(percentile));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (percentile * sorted.len()).div_ceil(100);
    Ok(sorted[rank - 1])
}

pub fn p90(samples: &[f64]) -> Result<f64, MetricsError> {
    percentile_nearest_rank(samples, 90)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMatch {
    pub reference_tick: Tick,
    pub predicted_tick: Tick,
    pub offset_ticks: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTypeScore {
    pub token: ControlToken,
    pub predicted_count: usize,
    pub reference_count: usize,
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matches: Vec<EventMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatchReport {
    pub tolerance_frames: u64,
    pub per_type: Vec<EventTypeScore>,
}

impl EventMatchReport {
    pub fn score_for(&self, token: ControlToken) -> Option<&EventTypeScore> {
        self.per_type.iter().find(|s| s.token == token)
    }
}

/// One-to-one matching of predictions to references within a symmetric
/// tolerance window, per event type.
///
/// References are walked in tick order and each takes the earliest unmatched
/// prediction inside its window. For a fixed symmetric window this greedy
/// achieves maximum match cardinality (leaving later predictions for later
/// references can only help), which the acceptance suite re-verifies against
/// exhaustive search.
pub fn score_events(
    predicted: &[(Tick, ControlToken)],
    reference: &[(Tick, ControlToken)],
    tolerance_frames: u64,
) -> EventMatchReport {
    let tokens = [
        ControlToken::Bos,
        ControlToken::Sil,
        ControlToken::Stp,
        ControlToken::Boc,
        ControlToken::Eos,
        ControlToken::Pause,
    ];
    let mut per_type = Vec::new();
    for token in tokens {
        let mut preds: Vec<Tick> =
            predicted.iter().filter(|(_, t)| *t == token).map(|(t, _)| *t).collect();
        let mut refs: Vec<Tick> =
            reference.iter().filter(|(_, t)| *t == token).map(|(t, _)| *t).collect();
        if preds.is_empty() && refs.is_empty() {
            continue;
        }
        preds.sort_unstable();
        refs.sort_unstable();

        let tol = tolerance_frames as i64;
        let mut matches = Vec::new();
        let mut next_pred = 0usize;
        for &reference_tick in &refs {
            let r = reference_tick.0 as i64;
            // Predictions before the window can never match later references.
            while next_pred < preds.len() && (preds[next_pred].0 as i64) < r - tol {
                next_pred += 1;
            }
            if next_pred < preds.len() && (preds[next_pred].0 as i64) <= r + tol {
                let predicted_tick = preds[next_pred];
                matches.push(EventMatch {
                    reference_tick,
                    predicted_tick,
                    offset_ticks: predicted_tick.0 as i64 - r,
                });
                next_pred += 1;
            }
        }

        let matched = matches.len();
        let precision = if preds.is_empty() { 0.0 } else { matched as f64 / preds.len() as f64 };
        let recall = if refs.is_empty() { 0.0 } else { matched as f64 / refs.len() as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_type.push(EventTypeScore {
            token,
            predicted_count: preds.len(),
            reference_count: refs.len(),
            matched,
            precision,
            recall,
            f1,
            matches,
        });
    }
    EventMatchReport { tolerance_frames, per_type }
}

/// Scores independent event streams (one per script) and merges the counts;
/// matching never crosses a stream boundary.
pub fn score_event_groups(
    groups: &[(EventLog, EventLog)],
    tolerance_frames: u64,
) -> EventMatchReport {
    let mut merged: Vec<EventTypeScore> = Vec::new();
    for (predicted, reference) in groups {
        let report = score_events(predicted, reference, tolerance_frames);
        for score in report.per_type {
            match merged.iter_mut().find(|s| s.token == score.token) {
                Some(existing) => {
                    existing.predicted_count += score.predicted_count;
                    existing.reference_count += score.reference_count;
                    existing.matched += score.matched;
                    existing.matches.extend(score.matches);
                }
                None => merged.push(score),
            }
        }
    }
    for score in &mut merged {
        score.precision = if score.predicted_count == 0 {
            0.0
        } else {
            score.matched as f64 / score.predicted_count as f64
        };
        score.recall = if score.reference_count == 0 {
            0.0
        } else {
            score.matched as f64 / score.reference_count as f64
        };
        score.f1 = if score.precision + score.recall > 0.0 {
            2.0 * score.precision * score.recall / (score.precision + score.recall)
        } else {
            0.0
        };
    }
    EventMatchReport { tolerance_frames, per_type: merged }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Response,
    Backchannel,
}

/// Gate outcome for one turn. Fallback carries no diagnostics: a suppressed
/// draft leaves no trace, which keeps an always-fallback run byte-identical
/// to the plain cascaded pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnOutcome {
    Commit { confidence: f64 },
    Fallback,
    Failed { diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub script_id: String,
    pub turn_key: String,
    pub turn_kind: TurnKind,
    pub opened_at_tick: u64,
    pub outcome: TurnOutcome,
    pub latency: Option<TurnLatency>,
    /// Oracle label for the drafted prefix, when a labeling oracle ran.
    pub label: Option<PrefixLabel>,
    pub relay_margin_ms: Option<f64>,
    pub seamless: Option<bool>,
    pub response_words: Vec<String>,
    pub timeline: AudioTimeline,
    pub stopped_at_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAggregates {
    pub turns: usize,
    pub commits: usize,
    pub fallbacks: usize,
    pub failures: usize,
    pub fallback_rate: f64,
    pub p90_onset_ms: Option<f64>,
    pub p90_commit_onset_ms: Option<f64>,
    pub p90_fallback_onset_ms: Option<f64>,
    /// Fraction of labeled bad prefixes that were committed.
    pub bad_commit_rate: Option<f64>,
    /// Fraction of labeled good prefixes that were committed.
    pub good_commit_rate: Option<f64>,
    pub mean_relay_margin_ms: Option<f64>,
    pub seamless_rate: Option<f64>,
    /// Fraction of quality-scored turns rated 3 or lower, when an oracle
    /// quality file is supplied. Scores are never generated here.
    pub low_quality_rate: Option<f64>,
    pub quality_scored_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub schema_version: u32,
    pub seed: u64,
    pub turns: Vec<TurnRecord>,
    pub aggregates: SessionAggregates,
    pub event_scores: EventMatchReport,
}

pub const SESSION_REPORT_SCHEMA_VERSION: u32 = 1;

/// Aggregates completed turn records and per-script event logs into one
/// serializable report.
pub fn session_report(
    seed: u64,
    turns: Vec<TurnRecord>,
    event_groups: &[(EventLog, EventLog)],
    tolerance_frames: u64,
    quality_labels: Option<&BTreeMap<String, u8>>,
) -> SessionReport {
    let response_turns: Vec<&TurnRecord> =
        turns.iter().filter(|t| t.turn_kind == TurnKind::Response).collect();
    let commits = response_turns
        .iter()
        .filter(|t| matches!(t.outcome, TurnOutcome::Commit { .. }))
        .count();
    let fallbacks =
        response_turns.iter().filter(|t| t.outcome == TurnOutcome::Fallback).count();
    let failures = response_turns
        .iter()
        .filter(|t| matches!(t.outcome, TurnOutcome::Failed { .. }))
        .count();

    let onsets: Vec<f64> =
        response_turns.iter().filter_map(|t| t.latency.map(|l| l.total_ms)).collect();
    let commit_onsets: Vec<f64> = response_turns
        .iter()
        .filter(|t| matches!(t.outcome, TurnOutcome::Commit { .. }))
        .filter_map(|t| t.latency.map(|l| l.total_ms))
        .collect();
    let fallback_onsets: Vec<f64> = response_turns
        .iter()
        .filter(|t| t.outcome == TurnOutcome::Fallback)
        .filter_map(|t| t.latency.map(|l| l.total_ms))
        .collect();

    let labeled_bad: Vec<&&TurnRecord> =
        response_turns.iter().filter(|t| t.label == Some(PrefixLabel::Bad)).collect();
    let labeled_good: Vec<&&TurnRecord> =
        response_turns.iter().filter(|t| t.label == Some(PrefixLabel::Good)).collect();
    let bad_commit_rate = if labeled_bad.is_empty() {
        None
    } else {
        let committed =
            labeled_bad.iter().filter(|t| matches!(t.outcome, TurnOutcome::Commit { .. })).count();
        Some(committed as f64 / labeled_bad.len() as f64)
    };
    let good_commit_rate = if labeled_good.is_empty() {
        None
    } else {
        let committed = labeled_good
            .iter()
            .filter(|t| matches!(t.outcome, TurnOutcome::Commit { .. }))
            .count();
        Some(committed as f64 / labeled_good.len() as f64)
    };

    let margins: Vec<f64> = response_turns.iter().filter_map(|t| t.relay_margin_ms).collect();
    let seamless: Vec<bool> = response_turns.iter().filter_map(|t| t.seamless).collect();

    let (low_quality_rate, quality_scored_turns) = match quality_labels {
        Some(scores) => {
            let scored: Vec<u8> = response_turns
                .iter()
                .filter_map(|t| scores.get(&t.turn_key).copied())
                .collect();
            if scored.is_empty() {
                (None, 0)
            } else {
                let low = scored.iter().filter(|&&s| s <= 3).count();
                (Some(low as f64 / scored.len() as f64), scored.len())
            }
        }
        None => (None, 0),
    };

    let aggregates = SessionAggregates {
        turns: response_turns.len(),
        commits,
        fallbacks,
        failures,
        fallback_rate: if response_turns.is_empty() {
            0.0
        } else {
            fallbacks as f64 / response_turns.len() as f64
        },
        p90_onset_ms: p90(&onsets).ok(),
        p90_commit_onset_ms: p90(&commit_onsets).ok(),
        p90_fallback_onset_ms: p90(&fallback_onsets).ok(),
        bad_commit_rate,
        good_commit_rate,
        mean_relay_margin_ms: if margins.is_empty() {
            None
        } else {
            Some(margins.iter().sum::<f64>() / margins.len() as f64)
        },
        seamless_rate: if seamless.is_empty() {
            None
        } else {
            Some(seamless.iter().filter(|&&s| s).count() as f64 / seamless.len() as f64)
        },
        low_quality_rate,
        quality_scored_turns,
    };

    SessionReport {
        schema_version: SESSION_REPORT_SCHEMA_VERSION,
        seed,
        turns,
        aggregates,
        event_scores: score_event_groups(event_groups, tolerance_frames),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_formulas_match_modes() {
        let commit = latency(LatencyMode::Commit, LatencyComponents::commit(71.0, 10.0)).unwrap();
        assert_eq!(commit.total_ms, 81.0);

        let cascaded =
            latency(LatencyMode::Cascaded, LatencyComponents::cascaded(250.0, 841.0)).unwrap();
        assert_eq!(cascaded.total_ms, 1091.0);

        let s2s = latency(LatencyMode::S2sOnly, LatencyComponents::generate(0.0)).unwrap();
        assert_eq!(s2s.total_ms, 0.0);

        let fallback =
            latency(LatencyMode::Fallback, LatencyComponents::cascaded(250.0, 170.0)).unwrap();
        assert_eq!(fallback.total_ms, 420.0);
    }

    #[test]
    fn missing_component_is_a_specification_error() {
        let err = latency(LatencyMode::Commit, LatencyComponents::generate(71.0)).unwrap_err();
        assert_eq!(
            err,
            MetricsError::MissingComponent { mode: LatencyMode::Commit, component: "t_verifier" }
        );
        assert!(latency(LatencyMode::Cascaded, LatencyComponents::generate(100.0)).is_err());
    }

    // Oracle: nearest rank by hand. ceil(0.9 * 10) = 9, so the 9th order
    // statistic of 1..10 is 9.
    #[test]
    fn p90_nearest_rank_by_hand() {
        let samples: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert_eq!(p90(&samples).unwrap(), 9.0);
    }

    #[test]
    fn p90_degenerate_cases() {
        assert_eq!(p90(&[42.0]).unwrap(), 42.0);
        assert_eq!(p90(&[7.0; 25]).unwrap(), 7.0);
        assert_eq!(p90(&[]), Err(MetricsError::EmptySamples));
    }

    #[test]
    fn percentile_is_permutation_invariant_and_sandwiched() {
        let a = [5.0, 1.0, 9.0, 3.0, 7.0, 2.0];
        let mut b = a;
        b.reverse();
        let pa = p90(&a).unwrap();
        assert_eq!(pa, p90(&b).unwrap());
        let min = a.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min <= pa && pa <= max);
    }

    fn events(list: &[(u64, ControlToken)]) -> Vec<(Tick, ControlToken)> {
        list.iter().map(|(t, a)| (Tick(*t), *a)).collect()
    }

    #[test]
    fn one_frame_offset_matches_within_tolerance() {
        let predicted = events(&[(10, ControlToken::Bos)]);
        let reference = events(&[(11, ControlToken::Bos)]);
        let report = score_events(&predicted, &reference, 1);
        let bos = report.score_for(ControlToken::Bos).unwrap();
        assert_eq!(bos.matched, 1);
        assert_eq!(bos.precision, 1.0);
        assert_eq!(bos.recall, 1.0);
        assert_eq!(bos.f1, 1.0);
        assert_eq!(bos.matches[0].offset_ticks, -1);

        // Outside the window, nothing matches.
        let strict = score_events(&predicted, &reference, 0);
        assert_eq!(strict.score_for(ControlToken::Bos).unwrap().matched, 0);
    }

    #[test]
    fn identical_lists_score_perfectly() {
        let list = events(&[
            (0, ControlToken::Sil),
            (3, ControlToken::Bos),
            (9, ControlToken::Eos),
            (12, ControlToken::Boc),
        ]);
        let report = score_events(&list, &list, 1);
        for score in &report.per_type {
            assert_eq!(score.precision, 1.0);
            assert_eq!(score.recall, 1.0);
            assert_eq!(score.f1, 1.0);
        }
    }

    #[test]
    fn swapping_lists_swaps_precision_and_recall() {
        let predicted = events(&[(1, ControlToken::Bos), (5, ControlToken::Bos), (9, ControlToken::Bos)]);
        let reference = events(&[(1, ControlToken::Bos), (20, ControlToken::Bos)]);
        let forward = score_events(&predicted, &reference, 1);
        let backward = score_events(&reference, &predicted, 1);
        let f = forward.score_for(ControlToken::Bos).unwrap();
        let b = backward.score_for(ControlToken::Bos).unwrap();
        assert_eq!(f.precision, b.recall);
        assert_eq!(f.recall, b.precision);
        assert_eq!(f.f1, b.f1);
    }

    // The two-pointer greedy must not burn a prediction a later reference
    // needs when an earlier one has an alternative.
    #[test]
    fn greedy_matching_reaches_optimal_cardinality_on_adversarial_case() {
        // refs 4 and 5, preds 3 and 4, tolerance 1: matching (4,4) first
        // would leave 3 unusable for ref 5; leftmost assignment pairs
        // (3,4) and (4,5) for cardinality 2.
        let predicted = events(&[(3, ControlToken::Stp), (4, ControlToken::Stp)]);
        let reference = events(&[(4, ControlToken::Stp), (5, ControlToken::Stp)]);
        let report = score_events(&predicted, &reference, 1);
        assert_eq!(report.score_for(ControlToken::Stp).unwrap().matched, 2);
    }

    #[test]
    fn each_event_matches_at_most_once() {
        let predicted = events(&[(5, ControlToken::Bos)]);
        let reference = events(&[(4, ControlToken::Bos), (5, ControlToken::Bos), (6, ControlToken::Bos)]);
        let report = score_events(&predicted, &reference, 1);
        let bos = report.score_for(ControlToken::Bos).unwrap();
        assert_eq!(bos.matched, 1);
        assert_eq!(bos.precision, 1.0);
        assert!((bos.recall - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_is_monotone_in_tolerance() {
        let predicted = events(&[(2, ControlToken::Bos), (8, ControlToken::Bos), (15, ControlToken::Bos)]);
        let reference = events(&[(4, ControlToken::Bos), (9, ControlToken::Bos), (11, ControlToken::Bos)]);
        let mut prev = -1.0;
        for tol in 0..6 {
            let report = score_events(&predicted, &reference, tol);
            let f1 = report.score_for(ControlToken::Bos).unwrap().f1;
            assert!(f1 >= prev, "tolerance {tol}: f1 {f1} < {prev}");
            prev = f1;
        }
    }

    fn record(key: &str, outcome: TurnOutcome, total_ms: f64, label: Option<PrefixLabel>) -> TurnRecord {
        let mode = match outcome {
            TurnOutcome::Commit { .. } => LatencyMode::Commit,
            _ => LatencyMode::Fallback,
        };
        let components = match mode {
            LatencyMode::Commit => LatencyComponents::commit(total_ms - 10.0, 10.0),
            _ => LatencyComponents::cascaded(250.0, total_ms - 250.0),
        };
        TurnRecord {
            script_id: "s".into(),
            turn_key: key.into(),
            turn_kind: TurnKind::Response,
            opened_at_tick: 0,
            outcome,
            latency: Some(latency(mode, components).unwrap()),
            label,
            relay_margin_ms: None,
            seamless: None,
            response_words: vec![],
            timeline: AudioTimeline::default(),
            stopped_at_ms: None,
        }
    }

    #[test]
    fn all_commit_session_has_zero_fallback_rate() {
        let turns = vec![
            record("s#0", TurnOutcome::Commit { confidence: 0.9 }, 81.0, None),
            record("s#1", TurnOutcome::Commit { confidence: 0.8 }, 81.0, None),
        ];
        let report = session_report(1, turns, &[], 1, None);
        assert_eq!(report.aggregates.fallback_rate, 0.0);
        assert_eq!(report.aggregates.commits, 2);
        assert_eq!(report.aggregates.p90_onset_ms, Some(81.0));
    }

    #[test]
    fn bad_commit_rate_counts_committed_bad_over_total_bad() {
        let turns = vec![
            record("s#0", TurnOutcome::Commit { confidence: 0.9 }, 81.0, Some(PrefixLabel::Bad)),
            record("s#1", TurnOutcome::Fallback, 420.0, Some(PrefixLabel::Bad)),
            record("s#2", TurnOutcome::Fallback, 420.0, Some(PrefixLabel::Bad)),
            record("s#3", TurnOutcome::Commit { confidence: 0.9 }, 81.0, Some(PrefixLabel::Good)),
        ];
        let report = session_report(1, turns, &[], 1, None);
        assert!((report.aggregates.bad_commit_rate.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.aggregates.good_commit_rate, Some(1.0));
    }

    #[test]
    fn quality_labels_drive_low_quality_rate() {
        let turns = vec![
            record("s#0", TurnOutcome::Fallback, 420.0, None),
            record("s#1", TurnOutcome::Fallback, 420.0, None),
            record("s#2", TurnOutcome::Fallback, 420.0, None),
        ];
        let mut scores = BTreeMap::new();
        scores.insert("s#0".to_string(), 5u8);
        scores.insert("s#1".to_string(), 3u8);
        scores.insert("s#2".to_string(), 2u8);
        let report = session_report(1, turns, &[], 1, Some(&scores));
        assert!((report.aggregates.low_quality_rate.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.aggregates.quality_scored_turns, 3);
    }

    #[test]
    fn report_serialization_is_deterministic() {
        let turns = vec![record("s#0", TurnOutcome::Commit { confidence: 0.75 }, 81.0, None)];
        let report = session_report(9, turns, &[], 1, None);
        let a = serde_json::to_string(&report).unwrap();
        let b = serde_json::to_string(&report).unwrap();
        assert_eq!(a, b);
        let parsed: SessionReport = serde_json::from_str(&a).unwrap();
        assert_eq!(parsed, report);
    }
}
