//! End-to-end session orchestration on the virtual clock.
//!
//! Each script replays tick by tick: the duplex controller emits one control
//! token per tick; a `[BOS]` forks the speculative draft, runs the gate,
//! launches the slow path, and assembles the turn's response buffer; `[STP]`
//! truncates in-flight audio; `[EOS]` finalizes the turn record. Everything
//! is closed-form arithmetic over sampled latencies, so a fixed seed
//! reproduces a session bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_synth::agent_turns;
use crate::fast_path::{
    draft_onset_latency, DraftPrefix, DraftRequest, DraftSource, DraftTiming,
    DuplexController, FastPathError, ForkKind, ScriptedSource, StochasticSource,
    StochasticSourceConfig, TurnPolicy,
};
use crate::metrics::{
    latency, session_report, EventLog, LatencyComponents, LatencyMode, MetricsError,
    SessionReport, TurnKind, TurnOutcome, TurnRecord,
};
use crate::relay_buffer::{drain, relay_margin, ResponseBuffer, TtsSinkModel};
use crate::slow_path::{
    generate, DialogueTurn, ExternalLlmClient, LatencyModel, LlmClient, SimulatedAsr,
    SimulatedLlm, UserTurnTracker,
};
use crate::timeline::{ControlToken, ConversationScript, Payload, Tick};
use crate::verifier::kfold::{LabelOracle, RuleLabelOracle};
use crate::verifier::{PrefixLabel, VerifierError, VerifierModel};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    FastPath(#[from] FastPathError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("threshold sweep violated monotonicity: {0}")]
    Monotonicity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Fast path drafts, the gate decides, the slow path continues.
    Relay,
    /// Always-fallback operating point: the plain cascaded pipeline.
    Cascaded,
    /// Fast path alone speaks the whole response; no slow path.
    S2sOnly,
}

/// How commit/fallback is decided for a drafted prefix.
#[derive(Debug, Clone)]
pub enum GateSpec {
    /// Learned verifier scored against the threshold.
    Model(Box<VerifierModel>),
    /// Rule-based quality check stands in for the verifier.
    Rule(RuleLabelOracle),
    AlwaysCommit,
    AlwaysFallback,
}

/// Optional per-draft labeling for commit-rate bookkeeping.
#[derive(Debug, Clone, Default)]
pub enum DraftLabeler {
    #[default]
    None,
    Rule(RuleLabelOracle),
    /// Ground-truth labels keyed by turn key.
    File(BTreeMap<String, PrefixLabel>),
}

#[derive(Debug, Clone)]
pub enum DraftSourceSpec {
    /// Draft the opening of the script's own agent turn.
    Context,
    /// Seeded synthetic drafts with a latent quality coin.
    Stochastic { bad_rate: f64, cluster_separation: f64 },
    /// Replay a recorded prefix file.
    PrefixFile { text: String },
}

#[derive(Debug, Clone)]
pub enum SlowBackendSpec {
    Simulated,
    External { endpoint: String },
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub mode: RunMode,
    pub seed: u64,
    pub prefix_len: usize,
    pub backchannel_prefix_len: usize,
    pub threshold: f64,
    pub sink: TtsSinkModel,
    pub hidden_dim: usize,
    pub draft_timing: DraftTiming,
    pub verifier_latency_ms: f64,
    pub asr_latency: LatencyModel,
    pub first_chunk_latency: LatencyModel,
    pub inter_chunk_latency: LatencyModel,
    pub words_per_chunk: usize,
    pub gate: GateSpec,
    pub draft_labeler: DraftLabeler,
    pub draft_source: DraftSourceSpec,
    pub slow_backend: SlowBackendSpec,
    pub policy: PolicySpec,
    pub tolerance_frames: u64,
    /// Oracle 1-5 quality scores keyed by turn key; never generated here.
    pub quality_labels: Option<BTreeMap<String, u8>>,
    /// Sleep one tick of wall time per simulated tick (external clients).
    pub realtime: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Scripted,
    Heuristic { silence_ticks_to_respond: u32, response_ticks: u32 },
}

impl SessionConfig {
    pub fn simulated_defaults(seed: u64) -> Self {
        Self {
            mode: RunMode::Relay,
            seed,
            prefix_len: 5,
            backchannel_prefix_len: 2,
            threshold: 0.5,
            sink: TtsSinkModel::default(),
            hidden_dim: 896,
            draft_timing: DraftTiming::ConstantTotalMs(71.0),
            verifier_latency_ms: 10.0,
            asr_latency: LatencyModel::Constant { ms: 250.0 },
            first_chunk_latency: LatencyModel::Constant { ms: 170.0 },
            inter_chunk_latency: LatencyModel::Constant { ms: 200.0 },
            words_per_chunk: 5,
            gate: GateSpec::Rule(RuleLabelOracle::default()),
            draft_labeler: DraftLabeler::Rule(RuleLabelOracle::default()),
            draft_source: DraftSourceSpec::Context,
            slow_backend: SlowBackendSpec::Simulated,
            policy: PolicySpec::Scripted,
            tolerance_frames: 1,
            quality_labels: None,
            realtime: false,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SessionError::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.prefix_len == 0 {
            return Err(SessionError::Config("prefix_len must be at least 1".into()));
        }
        if let GateSpec::Model(model) = &self.gate {
            let max = model.config.max_prefix_len;
            if self.prefix_len > max {
                return Err(SessionError::Config(format!(
                    "prefix_len {} exceeds the gate's maximum {}",
                    self.prefix_len, max
                )));
            }
            if model.config.hidden_dim != self.hidden_dim {
                return Err(SessionError::Config(format!(
                    "gate expects hidden dim {}, config says {}",
                    model.config.hidden_dim, self.hidden_dim
                )));
            }
        }
        Ok(())
    }

    fn make_source(&self) -> Result<Box<dyn DraftSource>, SessionError> {
        match &self.draft_source {
            DraftSourceSpec::Context => Ok(Box::new(ScriptedSource::from_context(
                self.hidden_dim,
                self.seed,
                self.draft_timing,
            ))),
            DraftSourceSpec::Stochastic { bad_rate, cluster_separation } => {
                Ok(Box::new(StochasticSource::new(StochasticSourceConfig {
                    seed: self.seed,
                    hidden_dim: self.hidden_dim,
                    bad_rate: *bad_rate,
                    cluster_separation: *cluster_separation,
                    timing: self.draft_timing,
                    excluded_fold: None,
                })))
            }
            DraftSourceSpec::PrefixFile { text } => {
                ScriptedSource::from_prefix_text(text, self.hidden_dim, self.seed)
                    .map(|s| Box::new(s) as Box<dyn DraftSource>)
                    .map_err(|e| SessionError::Config(format!("prefix file: {e}")))
            }
        }
    }

    fn make_llm(&self) -> Box<dyn LlmClient> {
        match &self.slow_backend {
            SlowBackendSpec::Simulated => Box::new(SimulatedLlm {
                first_chunk_latency: self.first_chunk_latency,
                inter_chunk_latency: self.inter_chunk_latency,
                words_per_chunk: self.words_per_chunk,
                seed: self.seed,
            }),
            SlowBackendSpec::External { endpoint } => {
                Box::new(ExternalLlmClient { endpoint: endpoint.clone() })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GateVerdict {
    Commit { confidence: f64 },
    Fallback,
}

struct ActiveTurn {
    turn_key: String,
    bos_tick: Tick,
    buffer: ResponseBuffer,
    outcome: TurnOutcome,
    latency: Option<crate::metrics::TurnLatency>,
    label: Option<PrefixLabel>,
    relay_margin_ms: Option<f64>,
    transcript_text: Option<String>,
    stopped_at_ms: Option<f64>,
}

/// Replays one script end to end and returns its turn records plus the
/// predicted/reference event logs.
struct ScriptRun<'a> {
    config: &'a SessionConfig,
    script: &'a ConversationScript,
    controller: DuplexController,
    tracker: UserTurnTracker,
    source: Box<dyn DraftSource>,
    asr: SimulatedAsr,
    llm: Box<dyn LlmClient>,
    history: Vec<DialogueTurn>,
    records: Vec<TurnRecord>,
    predicted: Vec<(Tick, ControlToken)>,
    active: Option<ActiveTurn>,
    agent_turn_cursor: usize,
    backchannel_counter: usize,
}

impl<'a> ScriptRun<'a> {
    fn new(config: &'a SessionConfig, script: &'a ConversationScript) -> Result<Self, SessionError> {
        let policy = match config.policy {
            PolicySpec::Scripted => TurnPolicy::scripted(script),
            PolicySpec::Heuristic { silence_ticks_to_respond, response_ticks } => {
                TurnPolicy::Heuristic { silence_ticks_to_respond, response_ticks }
            }
        };
        Ok(Self {
            config,
            script,
            controller: DuplexController::new(policy),
            tracker: UserTurnTracker::new(),
            source: config.make_source()?,
            asr: SimulatedAsr { latency: config.asr_latency, seed: config.seed },
            llm: config.make_llm(),
            history: Vec::new(),
            records: Vec::new(),
            predicted: Vec::new(),
            active: None,
            agent_turn_cursor: 0,
            backchannel_counter: 0,
        })
    }

    fn run(mut self) -> Result<(Vec<TurnRecord>, EventLog), SessionError> {
        let turn_views = agent_turns(self.script);
        let last = self.script.last_tick().0 + 2;
        for t in 0..=last {
            let tick = Tick(t);
            let user_event = crate::fast_path::user_event_at(self.script, tick);
            if let Some(Payload::Word(w)) = user_event {
                self.tracker.on_user_word(tick, w);
            }
            let step = self.controller.step(tick, user_event)?;
            self.predicted.push((tick, step.emitted));

            match step.emitted {
                ControlToken::Bos => {
                    let context: Vec<String> = turn_views
                        .get(self.agent_turn_cursor)
                        .map(|v| v.words.iter().map(|(_, w)| w.clone()).collect())
                        .unwrap_or_default();
                    self.agent_turn_cursor += 1;
                    self.open_response_turn(tick, context)?;
                }
                ControlToken::Boc => {
                    self.run_backchannel(tick)?;
                }
                ControlToken::Stp => {
                    self.stop_active(tick);
                    self.finalize_active();
                }
                ControlToken::Eos => {
                    self.finalize_active();
                }
                ControlToken::Sil | ControlToken::Pause => {}
            }

            if self.config.realtime {
                std::thread::sleep(std::time::Duration::from_millis(
                    crate::timeline::TICK_MS as u64,
                ));
            }
        }
        self.finalize_active();
        Ok((self.records, self.predicted))
    }

    fn label_draft(&self, turn_key: &str, draft: &DraftPrefix) -> Option<PrefixLabel> {
        match &self.config.draft_labeler {
            DraftLabeler::None => None,
            DraftLabeler::Rule(rule) => rule.label(turn_key, draft).ok(),
            DraftLabeler::File(map) => map.get(turn_key).copied(),
        }
    }

    fn gate_verdict(&self, draft: &DraftPrefix) -> Result<GateVerdict, VerifierError> {
        Ok(match &self.config.gate {
            GateSpec::Model(model) => {
                let confidence = model.forward(draft)?;
                if confidence >= self.config.threshold {
                    GateVerdict::Commit { confidence }
                } else {
                    GateVerdict::Fallback
                }
            }
            GateSpec::Rule(rule) => match rule.label("gate", draft) {
                Ok(PrefixLabel::Good) => GateVerdict::Commit { confidence: 1.0 },
                _ => GateVerdict::Fallback,
            },
            GateSpec::AlwaysCommit => GateVerdict::Commit { confidence: 1.0 },
            GateSpec::AlwaysFallback => GateVerdict::Fallback,
        })
    }

    fn open_response_turn(&mut self, bos_tick: Tick, context: Vec<String>) -> Result<(), SessionError> {
        self.tracker.mark_bos(&self.script.metadata.id, bos_tick);
        let buffered = self
            .tracker
            .trigger(bos_tick)
            .expect("trigger immediately after mark_bos cannot fail");
        let turn_key = buffered.turn_key.clone();
        let bos_ms = bos_tick.as_ms();

        // The fast path always forks; the cascaded baseline is the
        // always-fallback operating point of the same machinery, which is
        // what makes it byte-comparable to a relay run with the gate shut.
        let max_words = match self.config.mode {
            RunMode::S2sOnly => context.len().max(1),
            _ => self.config.prefix_len,
        };
        let request = DraftRequest {
            script_id: &self.script.metadata.id,
            turn_index: self.tracker_ordinal(&turn_key),
            fork_tick: bos_tick,
            kind: ForkKind::Response,
            max_words,
            context_words: &context,
        };
        let mut handle = match self.controller.fork(bos_tick, self.source.as_mut(), &request) {
            Ok(handle) => handle,
            Err(e) => {
                self.controller.reset_turn();
                self.fail_turn(turn_key, bos_tick, e.to_string());
                return Ok(());
            }
        };
        let draft = handle.prefix().expect("fresh fork is not discarded").clone();
        let label = self.label_draft(&turn_key, &draft);

        let verdict = match self.config.mode {
            RunMode::S2sOnly => GateVerdict::Commit { confidence: 1.0 },
            RunMode::Cascaded => GateVerdict::Fallback,
            RunMode::Relay => match self.gate_verdict(&draft) {
                Ok(v) => v,
                Err(e) => {
                    self.controller.reset_turn();
                    self.fail_turn(turn_key, bos_tick, e.to_string());
                    return Ok(());
                }
            },
        };
        let mut committed: Option<(DraftPrefix, f64, f64)> = None; // draft, confidence, onset
        if let GateVerdict::Commit { confidence } = verdict {
            let verifier_ms = if self.config.mode == RunMode::S2sOnly {
                0.0
            } else {
                self.config.verifier_latency_ms
            };
            let onset = draft_onset_latency(&draft, verifier_ms);
            committed = Some((draft, confidence, onset));
            self.controller.mark_speaking();
        } else {
            // A suppressed draft forwards nothing downstream.
            handle.discard();
        }

        let mut buffer = ResponseBuffer::new();
        let mut turn_latency = None;
        let mut margin = None;
        let transcript_text;
        let mut outcome = TurnOutcome::Fallback;

        if let Some((draft, confidence, onset)) = &committed {
            buffer
                .push_fast(draft.words.clone(), bos_ms + onset)
                .expect("fast segment is first");
            outcome = TurnOutcome::Commit { confidence: *confidence };
            if self.config.mode == RunMode::S2sOnly {
                turn_latency =
                    Some(latency(LatencyMode::S2sOnly, LatencyComponents::generate(draft.draft_duration_ms))?);
            } else {
                turn_latency = Some(latency(
                    LatencyMode::Commit,
                    LatencyComponents::commit(draft.draft_duration_ms, self.config.verifier_latency_ms),
                )?);
            }
        }

        // The slow path triggers off the same [BOS]; the fast path only ever
        // buys time in front of it.
        if self.config.mode != RunMode::S2sOnly {
            let prefix_words: Option<Vec<String>> =
                committed.as_ref().map(|(d, _, _)| d.words.clone());
            let slow = generate(
                &mut self.asr,
                self.llm.as_mut(),
                &buffered,
                &self.history,
                prefix_words.as_deref(),
                Some(&context),
            );
            match slow {
                Ok(result) => {
                    debug_assert_eq!(
                        result.used_prefix.as_deref(),
                        prefix_words.as_deref(),
                        "the slow path must never rewrite the committed prefix"
                    );
                    for chunk in &result.continuation {
                        buffer
                            .push_slow(chunk.words.clone(), bos_ms + chunk.arrival_ms)
                            .expect("chunks arrive in order");
                    }
                    if let Some((draft, _, onset)) = &committed {
                        margin = Some(relay_margin(
                            draft.len(),
                            *onset,
                            self.config.sink.word_duration_ms,
                            result.first_chunk_latency_ms,
                        ));
                    } else {
                        let t_asr = result.transcript.latency_ms;
                        let t_generate = result.first_chunk_latency_ms - t_asr;
                        turn_latency = Some(latency(
                            LatencyMode::Fallback,
                            LatencyComponents::cascaded(t_asr, t_generate),
                        )?);
                    }
                    transcript_text = Some(result.transcript.text.clone());
                }
                Err(e) => {
                    self.controller.reset_turn();
                    self.fail_turn(turn_key, bos_tick, e.to_string());
                    return Ok(());
                }
            }
        } else {
            transcript_text = Some(buffered.words.join(" "));
        }

        self.active = Some(ActiveTurn {
            turn_key,
            bos_tick,
            buffer,
            outcome,
            latency: turn_latency,
            label,
            relay_margin_ms: margin,
            transcript_text,
            stopped_at_ms: None,
        });
        Ok(())
    }

    /// `turn_key` is `script#ordinal`; recover the ordinal for draft-stream
    /// derivation.
    fn tracker_ordinal(&self, turn_key: &str) -> usize {
        turn_key.rsplit('#').next().and_then(|s| s.parse().ok()).unwrap_or(0)
    }

    fn run_backchannel(&mut self, tick: Tick) -> Result<(), SessionError> {
        let turn_key = format!("{}#bc{}", self.script.metadata.id, self.backchannel_counter);
        self.backchannel_counter += 1;

        // The inserted backchannel word sits on the agent channel at this
        // tick.
        let context: Vec<String> = self
            .script
            .events
            .iter()
            .filter(|e| e.tick == tick && e.channel == crate::timeline::Channel::Agent)
            .filter_map(|e| e.payload.as_word().map(str::to_string))
            .collect();
        let request = DraftRequest {
            script_id: &self.script.metadata.id,
            turn_index: 1_000_000 + self.backchannel_counter,
            fork_tick: tick,
            kind: ForkKind::Backchannel,
            max_words: self.config.backchannel_prefix_len.max(1),
            context_words: &context,
        };
        let mut handle = match self.controller.fork(tick, self.source.as_mut(), &request) {
            Ok(handle) => handle,
            Err(e) => {
                self.controller.reset_turn();
                self.records.push(TurnRecord {
                    script_id: self.script.metadata.id.clone(),
                    turn_key,
                    turn_kind: TurnKind::Backchannel,
                    opened_at_tick: tick.0,
                    outcome: TurnOutcome::Failed { diagnostic: e.to_string() },
                    latency: None,
                    label: None,
                    relay_margin_ms: None,
                    seamless: None,
                    response_words: vec![],
                    timeline: Default::default(),
                    stopped_at_ms: None,
                });
                return Ok(());
            }
        };
        let draft = handle.prefix().expect("fresh fork is not discarded").clone();
        let label = self.label_draft(&turn_key, &draft);
        let verdict = match self.config.mode {
            RunMode::S2sOnly => GateVerdict::Commit { confidence: 1.0 },
            RunMode::Cascaded => GateVerdict::Fallback,
            RunMode::Relay => match self.gate_verdict(&draft) {
                Ok(v) => v,
                Err(e) => {
                    self.controller.reset_turn();
                    self.fail_turn(turn_key, tick, e.to_string());
                    return Ok(());
                }
            },
        };

        let mut buffer = ResponseBuffer::new();
        let mut turn_latency = None;
        let outcome = match verdict {
            GateVerdict::Commit { confidence } => {
                let verifier_ms = if self.config.mode == RunMode::S2sOnly {
                    0.0
                } else {
                    self.config.verifier_latency_ms
                };
                let onset = draft_onset_latency(&draft, verifier_ms);
                buffer
                    .push_fast(draft.words.clone(), tick.as_ms() + onset)
                    .expect("fast segment is first");
                turn_latency = Some(if self.config.mode == RunMode::S2sOnly {
                    latency(
                        LatencyMode::S2sOnly,
                        LatencyComponents::generate(draft.draft_duration_ms),
                    )?
                } else {
                    latency(
                        LatencyMode::Commit,
                        LatencyComponents::commit(draft.draft_duration_ms, verifier_ms),
                    )?
                });
                TurnOutcome::Commit { confidence }
            }
            GateVerdict::Fallback => {
                handle.discard();
                TurnOutcome::Fallback
            }
        };
        let timeline = drain(&buffer, &self.config.sink);
        self.records.push(TurnRecord {
            script_id: self.script.metadata.id.clone(),
            turn_key,
            turn_kind: TurnKind::Backchannel,
            opened_at_tick: tick.0,
            outcome,
            latency: turn_latency,
            label,
            relay_margin_ms: None,
            seamless: None,
            response_words: timeline.words(),
            timeline,
            stopped_at_ms: None,
        });

        // Backchannels are atomic: the turn closes before the next tick.
        self.controller.reset_turn();
        Ok(())
    }

    fn stop_active(&mut self, stp_tick: Tick) {
        if let Some(active) = self.active.as_mut() {
            let stp_ms = stp_tick.as_ms();
            active.buffer.truncate_on_stp(&self.config.sink, stp_ms);
            active.stopped_at_ms = Some(stp_ms);
        }
    }

    fn finalize_active(&mut self) {
        let Some(active) = self.active.take() else { return };
        let timeline = drain(&active.buffer, &self.config.sink);
        let seamless = if matches!(active.outcome, TurnOutcome::Commit { .. })
            && active.stopped_at_ms.is_none()
            && self.config.mode == RunMode::Relay
        {
            Some(timeline.is_seamless())
        } else {
            None
        };
        let response_words = timeline.words();

        if let Some(user_text) = &active.transcript_text {
            self.history.push(DialogueTurn::user(user_text.clone()));
            self.history.push(DialogueTurn::assistant(response_words.join(" ")));
        }

        self.records.push(TurnRecord {
            script_id: self.script.metadata.id.clone(),
            turn_key: active.turn_key,
            turn_kind: TurnKind::Response,
            opened_at_tick: active.bos_tick.0,
            outcome: active.outcome,
            latency: active.latency,
            label: active.label,
            relay_margin_ms: active.relay_margin_ms,
            seamless,
            response_words,
            timeline,
            stopped_at_ms: active.stopped_at_ms,
        });
    }

    fn fail_turn(&mut self, turn_key: String, tick: Tick, diagnostic: String) {
        self.records.push(TurnRecord {
            script_id: self.script.metadata.id.clone(),
            turn_key,
            turn_kind: TurnKind::Response,
            opened_at_tick: tick.0,
            outcome: TurnOutcome::Failed { diagnostic },
            latency: None,
            label: None,
            relay_margin_ms: None,
            seamless: None,
            response_words: vec![],
            timeline: Default::default(),
            stopped_at_ms: None,
        });
    }
}

/// Expands the sparse reference actions to one action per tick: ticks
/// without an explicit decision are `[SIL]`.
pub fn expand_reference(script: &ConversationScript) -> EventLog {
    let last = script.last_tick().0 + 2;
    (0..=last)
        .map(|t| {
            let tick = Tick(t);
            (tick, script.reference_action_at(tick).unwrap_or(ControlToken::Sil))
        })
        .collect()
}

/// Runs every script through the session driver and aggregates one report.
pub fn run_session(
    config: &SessionConfig,
    scripts: &[ConversationScript],
) -> Result<SessionReport, SessionError> {
    config.validate()?;
    let mut all_records = Vec::new();
    let mut event_groups = Vec::new();
    for script in scripts {
        let run = ScriptRun::new(config, script)?;
        let (records, predicted_events) = run.run()?;
        all_records.extend(records);
        event_groups.push((predicted_events, expand_reference(script)));
    }
    Ok(session_report(
        config.seed,
        all_records,
        &event_groups,
        config.tolerance_frames,
        config.quality_labels.as_ref(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub threshold: f64,
    pub prefix_len: usize,
    pub commits: usize,
    pub fallbacks: usize,
    pub fallback_rate: f64,
    pub bad_commit_rate: Option<f64>,
    pub good_commit_rate: Option<f64>,
    pub labeled_bad: usize,
    pub committed_bad: usize,
    pub p90_onset_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

/// One report row per (threshold, prefix length) cell. Within each prefix
/// length, commit counts must shrink and fallbacks grow as the threshold
/// rises; a violation is an error, not a warning.
pub fn run_sweep(
    config: &SessionConfig,
    scripts: &[ConversationScript],
    thresholds: &[f64],
    prefix_lens: &[usize],
) -> Result<SweepTable, SessionError> {
    if thresholds.is_empty() || prefix_lens.is_empty() {
        return Err(SessionError::Config("sweep needs thresholds and prefix lengths".into()));
    }
    let mut cells = Vec::new();
    for &prefix_len in prefix_lens {
        let mut previous: Option<(usize, usize, f64)> = None;
        for &threshold in thresholds {
            let cell_config =
                SessionConfig { threshold, prefix_len, ..config.clone() };
            let report = run_session(&cell_config, scripts)?;
            let turns: Vec<_> = report
                .turns
                .iter()
                .filter(|t| t.turn_kind == TurnKind::Response)
                .collect();
            let committed_bad = turns
                .iter()
                .filter(|t| {
                    t.label == Some(PrefixLabel::Bad)
                        && matches!(t.outcome, TurnOutcome::Commit { .. })
                })
                .count();
            let committed_good = turns
                .iter()
                .filter(|t| {
                    t.label == Some(PrefixLabel::Good)
                        && matches!(t.outcome, TurnOutcome::Commit { .. })
                })
                .count();
            let labeled_bad =
                turns.iter().filter(|t| t.label == Some(PrefixLabel::Bad)).count();

            if let Some((prev_bad, prev_good, prev_fallback)) = previous {
                if committed_bad > prev_bad || committed_good > prev_good {
                    return Err(SessionError::Monotonicity(format!(
                        "prefix {prefix_len}: commits grew as threshold rose to {threshold}"
                    )));
                }
                if report.aggregates.fallback_rate < prev_fallback {
                    return Err(SessionError::Monotonicity(format!(
                        "prefix {prefix_len}: fallback rate shrank as threshold rose to {threshold}"
                    )));
                }
            }
            previous = Some((committed_bad, committed_good, report.aggregates.fallback_rate));

            cells.push(SweepCell {
                threshold,
                prefix_len,
                commits: report.aggregates.commits,
                fallbacks: report.aggregates.fallbacks,
                fallback_rate: report.aggregates.fallback_rate,
                bad_commit_rate: report.aggregates.bad_commit_rate,
                good_commit_rate: report.aggregates.good_commit_rate,
                labeled_bad,
                committed_bad,
                p90_onset_ms: report.aggregates.p90_onset_ms,
            });
        }
    }
    Ok(SweepTable { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_synth::{build_corpus, CorpusConfig, InjectionConfig};
    use crate::metrics::LatencyMode;

    fn corpus(seed: u64, scripts: usize) -> Vec<ConversationScript> {
        build_corpus(&CorpusConfig {
            scripts,
            seed,
            injection: InjectionConfig {
                interruption_rate: 0.3,
                backchannel_rate: 0.5,
                pause_insertion_rate: 0.05,
                seed,
                ..Default::default()
            },
            ..Default::default()
        })
        .unwrap()
        .into_iter()
        .map(|e| e.script)
        .collect()
    }

    #[test]
    fn scripted_replay_commits_at_expected_latency() {
        let scripts = corpus(1, 6);
        let config = SessionConfig::simulated_defaults(7);
        let report = run_session(&config, &scripts).unwrap();
        assert!(report.aggregates.turns > 0);
        for turn in report.turns.iter().filter(|t| t.turn_kind == TurnKind::Response) {
            match &turn.outcome {
                TurnOutcome::Commit { .. } => {
                    let latency = turn.latency.expect("commit has latency");
                    assert_eq!(latency.mode, LatencyMode::Commit);
                    assert_eq!(latency.total_ms, 81.0);
                }
                TurnOutcome::Fallback => {
                    let latency = turn.latency.expect("fallback has latency");
                    assert_eq!(latency.mode, LatencyMode::Fallback);
                    assert_eq!(latency.total_ms, 420.0);
                }
                TurnOutcome::Failed { diagnostic } => panic!("unexpected failure: {diagnostic}"),
            }
        }
        // Scripted policy replays the reference exactly except for barge-in
        // stops, which land within one frame.
        let bos = report.event_scores.score_for(ControlToken::Bos).unwrap();
        assert_eq!(bos.f1, 1.0);
        if let Some(stp) = report.event_scores.score_for(ControlToken::Stp) {
            assert_eq!(stp.f1, 1.0, "stops must match within the tolerance window");
        }
    }

    #[test]
    fn session_replay_is_bit_identical() {
        let scripts = corpus(3, 5);
        let config = SessionConfig::simulated_defaults(11);
        let a = run_session(&config, &scripts).unwrap();
        let b = run_session(&config, &scripts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn always_fallback_equals_cascaded_byte_for_byte() {
        let scripts = corpus(5, 6);
        let mut relay = SessionConfig::simulated_defaults(13);
        relay.mode = RunMode::Relay;
        relay.gate = GateSpec::AlwaysFallback;
        relay.draft_labeler = DraftLabeler::None;

        let mut cascaded = SessionConfig::simulated_defaults(13);
        cascaded.mode = RunMode::Cascaded;
        cascaded.draft_labeler = DraftLabeler::None;

        let a = run_session(&relay, &scripts).unwrap();
        let b = run_session(&cascaded, &scripts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.aggregates.fallback_rate, 1.0);
    }

    #[test]
    fn barge_in_truncates_playback_and_discards_drafts() {
        let scripts = corpus(9, 10);
        let config = SessionConfig::simulated_defaults(17);
        let report = run_session(&config, &scripts).unwrap();
        let stopped: Vec<_> = report.turns.iter().filter(|t| t.stopped_at_ms.is_some()).collect();
        assert!(!stopped.is_empty(), "corpus must exercise interruptions");
        for turn in stopped {
            let stop = turn.stopped_at_ms.unwrap();
            for interval in &turn.timeline.intervals {
                assert!(interval.start_ms < stop);
                assert!(interval.end_ms <= stop);
                for (i, _) in interval.words.iter().enumerate() {
                    let word_start =
                        interval.start_ms + i as f64 * config.sink.word_duration_ms;
                    assert!(word_start < stop, "word starts after the stop");
                }
            }
        }
    }

    #[test]
    fn s2s_only_mode_reports_generate_latency() {
        let scripts = corpus(21, 4);
        let mut config = SessionConfig::simulated_defaults(23);
        config.mode = RunMode::S2sOnly;
        let report = run_session(&config, &scripts).unwrap();
        for turn in report.turns.iter().filter(|t| t.turn_kind == TurnKind::Response) {
            if let Some(lat) = turn.latency {
                assert_eq!(lat.mode, LatencyMode::S2sOnly);
                assert_eq!(lat.total_ms, 71.0);
            }
        }
        assert_eq!(report.aggregates.fallback_rate, 0.0);
    }

    #[test]
    fn sweep_single_cell_matches_run_session() {
        let scripts = corpus(31, 4);
        let mut config = SessionConfig::simulated_defaults(29);
        config.gate = GateSpec::Model(Box::new(
            VerifierModel::init_seeded(
                crate::verifier::VerifierConfig {
                    hidden_dim: config.hidden_dim,
                    ..Default::default()
                },
                29,
            )
            .unwrap(),
        ));
        let table = run_sweep(&config, &scripts, &[0.5], &[5]).unwrap();
        assert_eq!(table.cells.len(), 1);
        let report = run_session(&config, &scripts).unwrap();
        assert_eq!(table.cells[0].commits, report.aggregates.commits);
        assert_eq!(table.cells[0].fallback_rate, report.aggregates.fallback_rate);
    }

    #[test]
    fn sweep_rates_are_monotone_in_threshold() {
        let scripts = corpus(41, 8);
        let mut config = SessionConfig::simulated_defaults(37);
        config.draft_source =
            DraftSourceSpec::Stochastic { bad_rate: 0.25, cluster_separation: 6.0 };
        config.gate = GateSpec::Model(Box::new(
            VerifierModel::init_seeded(
                crate::verifier::VerifierConfig {
                    hidden_dim: config.hidden_dim,
                    ..Default::default()
                },
                37,
            )
            .unwrap(),
        ));
        let table =
            run_sweep(&config, &scripts, &[0.0, 0.25, 0.5, 0.75], &[3, 5, 7]).unwrap();
        assert_eq!(table.cells.len(), 12);
        for window in table.cells.chunks(4) {
            // Zero threshold commits everything.
            assert_eq!(window[0].fallback_rate, 0.0);
            assert_eq!(window[0].fallbacks, 0);
            for pair in window.windows(2) {
                assert!(pair[1].fallback_rate >= pair[0].fallback_rate);
                assert!(pair[1].committed_bad <= pair[0].committed_bad);
            }
        }
    }

    // Constructed label files with bad rates growing in prefix length: with
    // the gate shut, the uncommitted-bad rate reproduces the configured
    // ordering exactly.
    #[test]
    fn constructed_label_files_order_uncommitted_bad_rates() {
        let scripts = corpus(61, 12);
        let mut uncommitted_rates = Vec::new();
        for (prefix_len, bad_every) in [(3usize, 10usize), (5, 5), (7, 3)] {
            let mut config = SessionConfig::simulated_defaults(67);
            config.prefix_len = prefix_len;
            config.threshold = 1.0;
            config.gate = GateSpec::Model(Box::new(
                VerifierModel::init_seeded(
                    crate::verifier::VerifierConfig {
                        hidden_dim: config.hidden_dim,
                        ..Default::default()
                    },
                    67,
                )
                .unwrap(),
            ));
            // Label every `bad_every`-th turn bad; smaller step = higher rate.
            let dry = run_session(&config, &scripts).unwrap();
            let labels: std::collections::BTreeMap<String, PrefixLabel> = dry
                .turns
                .iter()
                .filter(|t| t.turn_kind == TurnKind::Response)
                .enumerate()
                .map(|(i, t)| {
                    let label =
                        if i % bad_every == 0 { PrefixLabel::Bad } else { PrefixLabel::Good };
                    (t.turn_key.clone(), label)
                })
                .collect();
            config.draft_labeler = DraftLabeler::File(labels);
            let report = run_session(&config, &scripts).unwrap();
            let turns: Vec<_> = report
                .turns
                .iter()
                .filter(|t| t.turn_kind == TurnKind::Response)
                .collect();
            let uncommitted_bad = turns
                .iter()
                .filter(|t| {
                    t.label == Some(PrefixLabel::Bad) && t.outcome == TurnOutcome::Fallback
                })
                .count();
            uncommitted_rates.push(uncommitted_bad as f64 / turns.len() as f64);
        }
        assert!(
            uncommitted_rates[0] < uncommitted_rates[1]
                && uncommitted_rates[1] < uncommitted_rates[2],
            "rates {uncommitted_rates:?} must follow the configured ordering"
        );
    }

    #[test]
    fn empty_sweep_inputs_are_rejected() {
        let scripts = corpus(1, 2);
        let config = SessionConfig::simulated_defaults(1);
        assert!(run_sweep(&config, &scripts, &[], &[5]).is_err());
        assert!(run_sweep(&config, &scripts, &[0.5], &[]).is_err());
    }

    #[test]
    fn heuristic_controller_fires_premature_bos_on_pauses() {
        // A corpus with aggressive pauses; the naive policy reads a long
        // hesitation as end of turn and opens early, costing precision.
        let scripts: Vec<ConversationScript> = build_corpus(&CorpusConfig {
            scripts: 6,
            seed: 51,
            injection: InjectionConfig {
                pause_insertion_rate: 0.9,
                pause_ticks: 4,
                interruption_rate: 0.0,
                backchannel_rate: 0.0,
                seed: 51,
                ..Default::default()
            },
            ..Default::default()
        })
        .unwrap()
        .into_iter()
        .map(|e| e.script)
        .collect();

        let mut config = SessionConfig::simulated_defaults(53);
        config.policy = PolicySpec::Heuristic { silence_ticks_to_respond: 2, response_ticks: 6 };
        let report = run_session(&config, &scripts).unwrap();
        let bos = report.event_scores.score_for(ControlToken::Bos).unwrap();
        assert!(
            bos.precision < 1.0,
            "premature openings must cost precision, got {}",
            bos.precision
        );
    }

    #[test]
    fn config_validation_rejects_bad_thresholds_and_lengths() {
        let mut config = SessionConfig::simulated_defaults(1);
        config.threshold = 1.5;
        assert!(config.validate().is_err());
        let mut config = SessionConfig::simulated_defaults(1);
        config.prefix_len = 0;
        assert!(config.validate().is_err());
        let mut config = SessionConfig::simulated_defaults(1);
        config.prefix_len = 9;
        config.gate = GateSpec::Model(Box::new(
            VerifierModel::init_seeded(
                crate::verifier::VerifierConfig {
                    hidden_dim: config.hidden_dim,
                    ..Default::default()
                },
                1,
            )
            .unwrap(),
        ));
        assert!(config.validate().is_err());
    }
}
