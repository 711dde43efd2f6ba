//! Duplex controller: a tick-synchronous state machine that emits one control
//! token per tick and, at response onset, forks a free-running speculative
//! draft stream off the live monitoring stream.
//!
//! The controller stays on the tick clock and never produces response text;
//! drafted words reach the response buffer only through the verifier's commit
//! decision. The speculative stream is frozen at fork time — it sees no user
//! events after the fork, so perturbing post-fork input can change control
//! emissions but never the drafted words.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_rng, sample_standard_normal};
use crate::timeline::{Channel, ControlToken, ConversationScript, Payload, Tick};
use crate::verifier::features::{compute_scalar_features, ScalarFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Listening,
    Drafting,
    Speaking,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplexState {
    pub phase: Phase,
    pub turn_open: bool,
    pub fork_tick: Option<Tick>,
}

impl Default for DuplexState {
    fn default() -> Self {
        Self { phase: Phase::Listening, turn_open: false, fork_tick: None }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FastPathError {
    #[error("tick {got} is not after the previous tick {prev}")]
    OutOfOrderTick { prev: Tick, got: Tick },
    #[error("fork requires a response initiation from Listening")]
    ForkWithoutInitiation,
    #[error("fork while already forked (fork tick {0})")]
    AlreadyForked(Tick),
    #[error("draft source produced an invalid prefix: {0}")]
    BadDraft(String),
    #[error("draft source failed: {0}")]
    SourceFailed(String),
}

/// What the turn-taking policy wants to do this tick. The automaton enforces
/// legality; illegal requests degrade to `[SIL]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyAction {
    Wait,
    Respond,
    Backchannel,
    Finish,
}

/// Pluggable turn-taking decision source for the main stream.
#[derive(Debug, Clone)]
pub enum TurnPolicy {
    /// Replays a script's reference openings and closings. Barge-in stops
    /// come from the automaton itself, not the reference stream.
    Scripted { reference: BTreeMap<Tick, ControlToken> },
    /// Naive silence-triggered policy: opens a response after a fixed run of
    /// silent ticks following user speech, and closes it after a fixed
    /// response length. Deliberately fooled by mid-utterance pauses.
    Heuristic { silence_ticks_to_respond: u32, response_ticks: u32 },
}

impl TurnPolicy {
    pub fn scripted(script: &ConversationScript) -> Self {
        TurnPolicy::Scripted {
            reference: script.reference_actions.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub emitted: ControlToken,
    /// True when this step detected a barge-in and stopped the response.
    pub barge_in: bool,
    /// True when any in-flight draft must be discarded (set on every stop).
    pub discard_draft: bool,
}

/// The main online stream: consumes live user events tick by tick and emits
/// exactly one control token per tick.
#[derive(Debug, Clone)]
pub struct DuplexController {
    state: DuplexState,
    policy: TurnPolicy,
    last_tick: Option<Tick>,
    // Heuristic policy bookkeeping.
    heard_speech: bool,
    silence_run: u32,
    open_ticks: u32,
}

impl DuplexController {
    pub fn new(policy: TurnPolicy) -> Self {
        Self {
            state: DuplexState::default(),
            policy,
            last_tick: None,
            heard_speech: false,
            silence_run: 0,
            open_ticks: 0,
        }
    }

    pub fn state(&self) -> DuplexState {
        self.state
    }

    /// Advances one tick. `user_event` is the user channel's payload at this
    /// tick, if any.
    pub fn step(
        &mut self,
        tick: Tick,
        user_event: Option<&Payload>,
    ) -> Result<StepOutcome, FastPathError> {
        if let Some(prev) = self.last_tick {
            if tick <= prev {
                return Err(FastPathError::OutOfOrderTick { prev, got: tick });
            }
        }
        self.last_tick = Some(tick);

        // A stopped turn is over; the controller resumes listening on the
        // next tick.
        if self.state.phase == Phase::Stopped {
            self.state = DuplexState::default();
        }

        let user_word = matches!(user_event, Some(Payload::Word(_)));
        if user_word {
            self.heard_speech = true;
            self.silence_run = 0;
        } else {
            self.silence_run += 1;
        }

        // Barge-in overrides everything: stop within the same tick.
        if user_word && matches!(self.state.phase, Phase::Drafting | Phase::Speaking) {
            self.state.phase = Phase::Stopped;
            self.state.turn_open = false;
            self.open_ticks = 0;
            return Ok(StepOutcome {
                emitted: ControlToken::Stp,
                barge_in: true,
                discard_draft: true,
            });
        }

        let action = self.decide(tick, user_word);
        let emitted = self.apply(action);
        Ok(StepOutcome { emitted, barge_in: false, discard_draft: false })
    }

    fn decide(&mut self, tick: Tick, user_word: bool) -> PolicyAction {
        match &self.policy {
            TurnPolicy::Scripted { reference } => match reference.get(&tick) {
                Some(ControlToken::Bos) => PolicyAction::Respond,
                Some(ControlToken::Boc) => PolicyAction::Backchannel,
                Some(ControlToken::Eos) => PolicyAction::Finish,
                // Reference stops replay as barge-in in the event stream; the
                // automaton already handles them.
                _ => PolicyAction::Wait,
            },
            TurnPolicy::Heuristic { silence_ticks_to_respond, response_ticks } => {
                let respond_after = *silence_ticks_to_respond;
                let response_len = *response_ticks;
                if self.state.turn_open {
                    self.open_ticks += 1;
                    if self.open_ticks >= response_len {
                        self.open_ticks = 0;
                        return PolicyAction::Finish;
                    }
                    return PolicyAction::Wait;
                }
                if !user_word && self.heard_speech && self.silence_run >= respond_after {
                    self.heard_speech = false;
                    return PolicyAction::Respond;
                }
                PolicyAction::Wait
            }
        }
    }

    fn apply(&mut self, action: PolicyAction) -> ControlToken {
        match action {
            PolicyAction::Respond | PolicyAction::Backchannel
                if self.state.phase == Phase::Listening && !self.state.turn_open =>
            {
                self.state.turn_open = true;
                if action == PolicyAction::Respond {
                    ControlToken::Bos
                } else {
                    ControlToken::Boc
                }
            }
            PolicyAction::Finish
                if matches!(self.state.phase, Phase::Drafting | Phase::Speaking) =>
            {
                self.state = DuplexState::default();
                ControlToken::Eos
            }
            // Anything else is illegal in the current phase and degrades to
            // continued listening, preserving the one-token-per-tick contract.
            _ => ControlToken::Sil,
        }
    }

    /// Splits off the speculative stream right after a `[BOS]`/`[BOC]`
    /// emission. The draft is produced immediately from a context frozen at
    /// the fork tick, so later user events cannot influence it.
    pub fn fork(
        &mut self,
        tick: Tick,
        source: &mut dyn DraftSource,
        request: &DraftRequest,
    ) -> Result<ForkHandle, FastPathError> {
        if let Some(t) = self.state.fork_tick {
            return Err(FastPathError::AlreadyForked(t));
        }
        if self.state.phase != Phase::Listening || !self.state.turn_open {
            return Err(FastPathError::ForkWithoutInitiation);
        }
        let prefix = source
            .draft(request)
            .map_err(|e| FastPathError::SourceFailed(e.to_string()))?;
        if prefix.len() > request.max_words {
            return Err(FastPathError::BadDraft(format!(
                "source produced {} words, cap is {}",
                prefix.len(),
                request.max_words
            )));
        }
        if prefix.hidden_dim() != source.hidden_dim() {
            return Err(FastPathError::BadDraft(format!(
                "hidden dim {} does not match source dim {}",
                prefix.hidden_dim(),
                source.hidden_dim()
            )));
        }
        self.state.phase = Phase::Drafting;
        self.state.fork_tick = Some(tick);
        Ok(ForkHandle { fork_tick: tick, kind: request.kind, prefix, discarded: false })
    }

    /// Marks the transition from drafting to audible playback.
    pub fn mark_speaking(&mut self) {
        if self.state.phase == Phase::Drafting {
            self.state.phase = Phase::Speaking;
        }
    }

    /// Closes the current turn without emitting anything. Backchannels end
    /// this way (they are atomic interjections, not responses), and failed
    /// turns recover through it.
    pub fn reset_turn(&mut self) {
        self.state = DuplexState::default();
        self.open_ticks = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForkKind {
    Response,
    Backchannel,
}

/// The detached speculative stream's output. The [`DuplexController`] itself
/// remains the main stream; this handle owns only what the speculative
/// branch produced from its zeroed-input context.
#[derive(Debug, Clone, PartialEq)]
pub struct ForkHandle {
    pub fork_tick: Tick,
    pub kind: ForkKind,
    prefix: DraftPrefix,
    discarded: bool,
}

impl ForkHandle {
    pub fn prefix(&self) -> Option<&DraftPrefix> {
        if self.discarded {
            None
        } else {
            Some(&self.prefix)
        }
    }

    /// Marks the draft as discarded (barge-in before commit). After this,
    /// zero words are forwarded downstream.
    pub fn discard(&mut self) {
        self.discarded = true;
    }

    pub fn is_discarded(&self) -> bool {
        self.discarded
    }
}

/// Speculative tokens plus the per-token verifier inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftPrefix {
    pub words: Vec<String>,
    pub hidden_states: Vec<Vec<f64>>,
    pub scalar_features: Vec<ScalarFeatures>,
    pub draft_duration_ms: f64,
}

impl DraftPrefix {
    pub fn new(
        words: Vec<String>,
        hidden_states: Vec<Vec<f64>>,
        scalar_features: Vec<ScalarFeatures>,
        draft_duration_ms: f64,
    ) -> Result<Self, String> {
        let n = words.len();
        if n == 0 {
            return Err("prefix must contain at least one word".into());
        }
        if hidden_states.len() != n || scalar_features.len() != n {
            return Err(format!(
                "length mismatch: {} words, {} hidden states, {} feature rows",
                n,
                hidden_states.len(),
                scalar_features.len()
            ));
        }
        let dim = hidden_states[0].len();
        if hidden_states.iter().any(|h| h.len() != dim) {
            return Err("hidden-state dimension varies across positions".into());
        }
        for (i, f) in scalar_features.iter().enumerate() {
            if f.entropy < 0.0 {
                return Err(format!("position {i}: negative entropy"));
            }
            if f.log_prob > 0.0 {
                return Err(format!("position {i}: positive log-probability"));
            }
            if f.margin < 0.0 {
                return Err(format!("position {i}: negative margin"));
            }
        }
        if draft_duration_ms.is_nan() || draft_duration_ms < 0.0 {
            return Err("draft duration must be non-negative".into());
        }
        Ok(Self { words, hidden_states, scalar_features, draft_duration_ms })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_states.first().map(|h| h.len()).unwrap_or(0)
    }
}

/// Time from prefix commit decision to a synthesizable prefix: decode time
/// plus the gate's overhead.
pub fn draft_onset_latency(prefix: &DraftPrefix, verifier_ms: f64) -> f64 {
    prefix.draft_duration_ms + verifier_ms
}

/// Per-word decode latency model for simulated draft sources. The speculative
/// stream is off the tick clock, so this is wall time, not ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftTiming {
    /// Fixed total decode time for the whole prefix regardless of length.
    ConstantTotalMs(f64),
    /// Per-word decode time; total scales with prefix length.
    PerWordMs(f64),
}

impl DraftTiming {
    pub fn duration_ms(&self, words: usize) -> f64 {
        match self {
            DraftTiming::ConstantTotalMs(total) => *total,
            DraftTiming::PerWordMs(per_word) => per_word * words as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DraftRequest<'a> {
    pub script_id: &'a str,
    pub turn_index: usize,
    pub fork_tick: Tick,
    pub kind: ForkKind,
    pub max_words: usize,
    /// Agent-side scripted words for this turn, frozen at fork time.
    pub context_words: &'a [String],
}

#[derive(Debug, Error)]
pub enum DraftError {
    #[error("no prefix recorded for turn {0:?}")]
    UnknownTurn(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("prefix file line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Emits up to `max_words` draft words with per-word hidden states and
/// calibration features. Implementations report decode latency in wall
/// milliseconds; the tick clock does not apply to them.
pub trait DraftSource {
    fn hidden_dim(&self) -> usize;
    fn draft(&mut self, request: &DraftRequest) -> Result<DraftPrefix, DraftError>;
}

/// Replays prefixes either from a prefix file (`turn_id | words | per-word-ms`)
/// or from the script's own agent turn, with synthetic hidden states and
/// features derived deterministically from the source seed.
pub struct ScriptedSource {
    hidden_dim: usize,
    seed: u64,
    timing: DraftTiming,
    /// turn id ("<script>#<turn>") -> (words, per-word ms override)
    recorded: Option<BTreeMap<String, (Vec<String>, f64)>>,
}

impl ScriptedSource {
    /// Drafts the opening of the script's own agent turn.
    pub fn from_context(hidden_dim: usize, seed: u64, timing: DraftTiming) -> Self {
        Self { hidden_dim, seed, timing, recorded: None }
    }

    /// Loads a prefix file: one `turn_id | word1 word2 ... | per-word-ms`
    /// record per line, `#` comments ignored.
    pub fn from_prefix_file(
        path: &Path,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self, DraftError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_prefix_text(&text, hidden_dim, seed)
    }

    pub fn from_prefix_text(text: &str, hidden_dim: usize, seed: u64) -> Result<Self, DraftError> {
        let mut recorded = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '|').map(str::trim);
            let (id, words_s, ms_s) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(DraftError::Format {
                        line: idx + 1,
                        message: "expected `turn_id | words | per-word-ms`".into(),
                    })
                }
            };
            let words: Vec<String> = words_s.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(DraftError::Format { line: idx + 1, message: "empty word list".into() });
            }
            let per_word_ms: f64 = ms_s.parse().map_err(|_| DraftError::Format {
                line: idx + 1,
                message: format!("bad per-word-ms {ms_s:?}"),
            })?;
            recorded.insert(id.to_string(), (words, per_word_ms));
        }
        Ok(Self {
            hidden_dim,
            seed,
            timing: DraftTiming::PerWordMs(0.0),
            recorded: Some(recorded),
        })
    }

    fn synth_states(
        &self,
        request: &DraftRequest,
        n: usize,
    ) -> (Vec<Vec<f64>>, Vec<ScalarFeatures>) {
        let mut rng = derive_rng(
            self.seed,
            &["scripted-source", request.script_id, &request.turn_index.to_string()],
        );
        let mut hidden = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        for _ in 0..n {
            hidden.push((0..self.hidden_dim).map(|_| sample_standard_normal(&mut rng)).collect());
            // Scripted replays stand in for confident decoding: a peaked
            // 8-way distribution with a greedy selection.
            let mut logits: Vec<f64> =
                (0..8).map(|_| sample_standard_normal(&mut rng) * 0.3).collect();
            logits[0] += 4.0;
            let dist = softmax(&logits);
            let argmax = argmax_index(&dist);
            features.push(compute_scalar_features(&dist, argmax).expect("valid distribution"));
        }
        (hidden, features)
    }
}

impl DraftSource for ScriptedSource {
    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn draft(&mut self, request: &DraftRequest) -> Result<DraftPrefix, DraftError> {
        let (words, duration_ms) = match &self.recorded {
            Some(map) => {
                let turn_id = format!("{}#{}", request.script_id, request.turn_index);
                let (words, per_word_ms) = map
                    .get(&turn_id)
                    .ok_or_else(|| DraftError::UnknownTurn(turn_id.clone()))?;
                let take = words.len().min(request.max_words);
                (words[..take].to_vec(), per_word_ms * take as f64)
            }
            None => {
                let take = request.context_words.len().min(request.max_words);
                if take == 0 {
                    return Err(DraftError::Invalid(format!(
                        "no agent words to draft for {}#{}",
                        request.script_id, request.turn_index
                    )));
                }
                let words = request.context_words[..take].to_vec();
                (words, self.timing.duration_ms(take))
            }
        };
        let n = words.len();
        let (hidden, features) = self.synth_states(request, n);
        DraftPrefix::new(words, hidden, features, duration_ms).map_err(DraftError::Invalid)
    }
}

/// Configuration for [`StochasticSource`]: draft quality is a latent
/// coin-flip, and the two quality classes occupy separated clusters in both
/// hidden-state space and calibration-feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticSourceConfig {
    pub seed: u64,
    pub hidden_dim: usize,
    /// Probability that a drafted prefix is degenerate.
    pub bad_rate: f64,
    /// Distance between the good and bad hidden-state cluster means.
    pub cluster_separation: f64,
    pub timing: DraftTiming,
    /// Folds whose scripts this source must never draft for; mixed into the
    /// derivation of every stream so distinct exclusions give distinct
    /// generations.
    pub excluded_fold: Option<usize>,
}

impl Default for StochasticSourceConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden_dim: 896,
            bad_rate: 0.054,
            cluster_separation: 6.0,
            timing: DraftTiming::PerWordMs(14.0),
            excluded_fold: None,
        }
    }
}

const DRAFT_LEXICON: &[&str] = &[
    "sure", "well", "that", "sounds", "great", "let", "me", "think", "about", "it", "i", "can",
    "help", "you", "with", "this", "of", "course", "happy", "to",
];

/// Samples draft words, hidden states, and calibration features from seeded
/// class-conditional distributions. Degenerate drafts get flatter next-token
/// distributions (higher entropy, lower margin) and a shifted hidden cluster,
/// plus a stuttered word repeat, so both rule-based and learned gates have
/// signal to work with.
pub struct StochasticSource {
    config: StochasticSourceConfig,
}

impl StochasticSource {
    pub fn new(config: StochasticSourceConfig) -> Self {
        Self { config }
    }
}

impl DraftSource for StochasticSource {
    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn draft(&mut self, request: &DraftRequest) -> Result<DraftPrefix, DraftError> {
        use rand::Rng;
        let fold_tag = match self.config.excluded_fold {
            Some(f) => format!("excl-{f}"),
            None => "all".to_string(),
        };
        let mut rng = derive_rng(
            self.config.seed,
            &["stochastic-source", &fold_tag, request.script_id, &request.turn_index.to_string()],
        );
        let n = request.max_words.max(1);
        let bad = rng.random::<f64>() < self.config.bad_rate;

        // Good drafts never stutter; degenerate ones repeat a word.
        let mut words: Vec<String> = Vec::with_capacity(n);
        for _ in 0..n {
            loop {
                let w = DRAFT_LEXICON[rng.random_range(0..DRAFT_LEXICON.len())];
                if words.last().map(String::as_str) != Some(w) {
                    words.push(w.to_string());
                    break;
                }
            }
        }
        if bad && n >= 2 {
            let at = rng.random_range(1..n);
            words[at] = words[at - 1].clone();
        }

        let dim = self.config.hidden_dim;
        let shift = self.config.cluster_separation / (2.0 * (dim as f64).sqrt());
        let mean = if bad { -shift } else { shift };
        let mut hidden = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        for _ in 0..n {
            hidden.push(
                (0..dim)
                    .map(|_| mean + sample_standard_normal(&mut rng))
                    .collect::<Vec<f64>>(),
            );
            let boost = if bad { 0.8 } else { 4.0 };
            let mut logits: Vec<f64> =
                (0..8).map(|_| sample_standard_normal(&mut rng) * 0.3).collect();
            logits[0] += boost;
            let dist = softmax(&logits);
            let argmax = argmax_index(&dist);
            features.push(compute_scalar_features(&dist, argmax).expect("valid distribution"));
        }

        let duration = self.config.timing.duration_ms(n);
        DraftPrefix::new(words, hidden, features, duration).map_err(DraftError::Invalid)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Extracts the user payload for a tick from a script, plus all user words at
/// that tick (scripts normally carry at most one).
pub fn user_event_at(script: &ConversationScript, tick: Tick) -> Option<&Payload> {
    script
        .events
        .iter()
        .find(|e| e.tick == tick && e.channel == Channel::User)
        .map(|e| &e.payload)
}
