//! Synthetic duplex phenomena at the timed-event level: barge-in
//! interruptions, backchannels, and mid-utterance pauses injected into
//! conversation scripts, plus a small template generator that produces the
//! source dialogues.
//!
//! Injections are pure functions over scripts, deterministic per
//! (input, config, seed), and keyed on shift-invariant ordinals so that
//! injections into distinct turns commute event-for-event.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_rng, derive_seed};
use crate::timeline::{
    Channel, ControlToken, ConversationScript, Payload, ScriptMetadata, Tick, TimedEvent, TICK_MS,
};

/// Short acknowledgments available to the backchannel injector.
pub const BACKCHANNEL_LEXICON: &[&str] = &["uh-huh", "right", "yeah", "mm-hmm", "I see"];

#[derive(Debug, Error, PartialEq)]
pub enum InjectError {
    #[error("turn index {0} does not name an assistant turn")]
    InvalidTurnIndex(usize),
    #[error("invalid injection config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    /// Fraction of the assistant turn retained before the cut is drawn from
    /// this range.
    pub interruption_truncation_range: (f64, f64),
    /// How far the interrupting user turn overlaps the truncated audio.
    pub interruption_overlap_ms: f64,
    pub inter_turn_silence_ms: f64,
    /// Probability that an eligible assistant turn gets interrupted.
    pub interruption_rate: f64,
    /// Probability per candidate insertion point.
    pub backchannel_rate: f64,
    /// Probability per eligible mid-turn user word.
    pub pause_insertion_rate: f64,
    /// How many ticks a pause stretches the utterance.
    pub pause_ticks: u64,
    /// Spoken word duration used to map truncation fractions to audio time.
    pub word_duration_ms: f64,
    pub seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            interruption_truncation_range: (0.20, 0.60),
            interruption_overlap_ms: 320.0,
            inter_turn_silence_ms: 200.0,
            interruption_rate: 0.35,
            backchannel_rate: 0.5,
            pause_insertion_rate: 0.08,
            pause_ticks: 3,
            word_duration_ms: 400.0,
            seed: 0,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<(), InjectError> {
        let (lo, hi) = self.interruption_truncation_range;
        if lo <= 0.0 || hi >= 1.0 || lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(InjectError::BadConfig(format!(
                "truncation range ({lo}, {hi}) must sit inside (0, 1)"
            )));
        }
        if self.interruption_overlap_ms < 0.0 {
            return Err(InjectError::BadConfig("overlap must be non-negative".into()));
        }
        if self.word_duration_ms <= 0.0 {
            return Err(InjectError::BadConfig("word duration must be positive".into()));
        }
        Ok(())
    }
}

/// What an injection pass did; skips and rejections are recorded, not errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionOutcome {
    pub applied: usize,
    pub notes: Vec<String>,
}

impl InjectionOutcome {
    fn note(&mut self, message: impl Into<String>) {
        self.notes.push(message.into());
    }
}

/// An assistant turn reconstructed from the reference actions: the opening
/// `[BOS]`, its closing action, and the agent words in between.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTurnView {
    pub ordinal: usize,
    pub open_tick: Tick,
    pub close_tick: Tick,
    pub close: ControlToken,
    pub words: Vec<(Tick, String)>,
}

/// Assistant turns in script order. Backchannel insertions (`[BOC]` plus one
/// lexicon word) are not turns and are excluded.
pub fn agent_turns(script: &ConversationScript) -> Vec<AgentTurnView> {
    let mut turns = Vec::new();
    let mut open: Option<Tick> = None;
    for &(tick, action) in &script.reference_actions {
        match action {
            ControlToken::Bos => open = Some(tick),
            ControlToken::Eos | ControlToken::Stp => {
                if let Some(open_tick) = open.take() {
                    let words = script
                        .events
                        .iter()
                        .filter(|e| {
                            e.channel == Channel::Agent
                                && e.tick >= open_tick
                                && e.tick <= tick
                        })
                        .filter_map(|e| {
                            e.payload.as_word().map(|w| (e.tick, w.to_string()))
                        })
                        .collect();
                    turns.push(AgentTurnView {
                        ordinal: turns.len(),
                        open_tick,
                        close_tick: tick,
                        close: action,
                        words,
                    });
                }
            }
            _ => {}
        }
    }
    turns
}

/// User word events with their shift-invariant ordinal.
fn user_words(script: &ConversationScript) -> Vec<(usize, Tick, String)> {
    script
        .events
        .iter()
        .filter(|e| e.channel == Channel::User)
        .filter_map(|e| e.payload.as_word().map(|w| (e.tick, w.to_string())))
        .enumerate()
        .map(|(i, (t, w))| (i, t, w))
        .collect()
}

fn shift_from(script: &mut [TimedEvent], refs: &mut [(Tick, ControlToken)], from: Tick, delta: i64) {
    if delta == 0 {
        return;
    }
    for event in script.iter_mut() {
        if event.tick >= from {
            let shifted = event.tick.0 as i64 + delta;
            assert!(shifted >= 0, "shift drove tick negative");
            event.tick = Tick(shifted as u64);
        }
    }
    for (tick, _) in refs.iter_mut() {
        if *tick >= from {
            let shifted = tick.0 as i64 + delta;
            assert!(shifted >= 0, "shift drove tick negative");
            *tick = Tick(shifted as u64);
        }
    }
}

/// Truncates the named assistant turn at a seeded fraction of its spoken
/// duration, slides the following user turn forward so it overlaps the cut
/// by `interruption_overlap_ms`, and replaces the turn's close with a
/// reference `[STP]` one tick after overlap onset.
pub fn inject_interruption(
    script: &ConversationScript,
    turn_index: usize,
    config: &InjectionConfig,
) -> Result<(ConversationScript, InjectionOutcome), InjectError> {
    use rand::Rng;
    config.validate()?;
    let mut outcome = InjectionOutcome::default();
    let turns = agent_turns(script);
    let Some(turn) = turns.get(turn_index) else {
        return Err(InjectError::InvalidTurnIndex(turn_index));
    };
    let word_count = turn.words.len();
    if word_count < 2 {
        outcome.note(format!(
            "assistant turn {turn_index} has {word_count} word(s); too short to truncate"
        ));
        return Ok((script.clone(), outcome));
    }

    let mut events = script.events.clone();
    let mut refs = script.reference_actions.clone();

    let (lo, hi) = config.interruption_truncation_range;
    let mut rng = derive_rng(config.seed, &["interruption", &turn_index.to_string()]);
    let fraction = lo + (hi - lo) * rng.random::<f64>();
    let retained = ((fraction * word_count as f64).round() as usize).clamp(1, word_count - 1);

    // Audio-time cut point, mapped back onto the tick grid.
    let cut_ms = turn.open_tick.as_ms() + retained as f64 * config.word_duration_ms;
    let overlap_onset_ms = (cut_ms - config.interruption_overlap_ms).max(0.0);
    let overlap_tick = Tick((overlap_onset_ms / TICK_MS as f64).round() as u64);
    let stp_tick = Tick(overlap_tick.0 + 1);

    // Drop the truncated words.
    let dropped: Vec<(Tick, String)> = turn.words[retained..].to_vec();
    for (tick, word) in &dropped {
        let position = events.iter().position(|e| {
            e.channel == Channel::Agent && e.tick == *tick && e.payload.as_word() == Some(word)
        });
        if let Some(i) = position {
            events.remove(i);
        }
    }

    // The turn no longer completes; it gets stopped instead.
    if let Some(i) = refs.iter().position(|(t, a)| *t == turn.close_tick && *a == turn.close) {
        refs.remove(i);
    }

    // Slide the interrupting user turn (and everything after it) to overlap.
    let following = script
        .events
        .iter()
        .filter(|e| e.channel == Channel::User && e.tick > turn.open_tick)
        .filter_map(|e| e.payload.as_word().map(|_| e.tick))
        .min();
    let Some(u0) = following else {
        outcome.note(format!("assistant turn {turn_index} has no following user turn"));
        return Ok((script.clone(), outcome));
    };
    let delta = overlap_tick.0 as i64 - u0.0 as i64;
    shift_from(&mut events, &mut refs, u0, delta);

    refs.push((stp_tick, ControlToken::Stp));

    // A backchannel that slid inside the now-open response window would be
    // nonsensical (the agent cannot backchannel its own speech); drop it.
    let misplaced: Vec<Tick> = refs
        .iter()
        .filter(|(t, a)| *a == ControlToken::Boc && *t >= turn.open_tick && *t <= stp_tick)
        .map(|(t, _)| *t)
        .collect();
    for tick in misplaced {
        refs.retain(|(t, a)| !(*t == tick && *a == ControlToken::Boc));
        if let Some(i) = events.iter().position(|e| {
            e.channel == Channel::Agent
                && e.tick == tick
                && e.payload.as_word().is_some_and(|w| BACKCHANNEL_LEXICON.contains(&w))
        }) {
            events.remove(i);
        }
        outcome.note(format!("removed backchannel at tick {tick} swallowed by the interruption"));
    }

    outcome.applied = 1;
    outcome.note(format!(
        "assistant turn {turn_index}: retained {retained}/{word_count} words, stop at tick {stp_tick}"
    ));
    Ok((
        ConversationScript::new(script.metadata.clone(), events, refs),
        outcome,
    ))
}

/// Supplies candidate backchannel insertion ticks; each must be the tick of
/// a user word.
pub trait BackchannelLocator {
    fn candidates(&self, script: &ConversationScript) -> Vec<Tick>;
}

/// Rule-based insertion points: after clause-final user words (trailing
/// punctuation), excluding each turn's final word.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedLocator;

impl BackchannelLocator for RuleBasedLocator {
    fn candidates(&self, script: &ConversationScript) -> Vec<Tick> {
        let words = user_words(script);
        words
            .iter()
            .filter(|(i, tick, word)| {
                let clause_final = word.ends_with(',') || word.ends_with(';');
                // A next user word close by means we are mid-turn.
                let mid_turn = words
                    .get(i + 1)
                    .is_some_and(|(_, next, _)| next.0.saturating_sub(tick.0) <= 2);
                clause_final && mid_turn
            })
            .map(|(_, tick, _)| *tick)
            .collect()
    }
}

/// Fixed candidate list, mostly for tests and replays.
#[derive(Debug, Clone, Default)]
pub struct FixedLocator(pub Vec<Tick>);

impl BackchannelLocator for FixedLocator {
    fn candidates(&self, _script: &ConversationScript) -> Vec<Tick> {
        self.0.clone()
    }
}

/// Inserts a reference `[BOC]` plus one lexicon word at accepted insertion
/// points. The user channel is never modified and nothing shifts.
pub fn inject_backchannel(
    script: &ConversationScript,
    config: &InjectionConfig,
    locator: &dyn BackchannelLocator,
) -> Result<(ConversationScript, InjectionOutcome), InjectError> {
    use rand::Rng;
    config.validate()?;
    let mut outcome = InjectionOutcome::default();
    let mut events = script.events.clone();
    let mut refs = script.reference_actions.clone();
    let words = user_words(script);
    let spans: Vec<(Tick, Tick)> =
        agent_turns(script).iter().map(|t| (t.open_tick, t.close_tick)).collect();

    for tick in locator.candidates(script) {
        let Some((ordinal, _, _)) = words.iter().find(|(_, t, _)| *t == tick) else {
            outcome.note(format!("candidate tick {tick} is not inside a user turn; rejected"));
            continue;
        };
        if spans.iter().any(|(open, close)| tick >= *open && tick <= *close) {
            outcome.note(format!(
                "candidate tick {tick} overlaps an open assistant response; rejected"
            ));
            continue;
        }
        if refs.iter().any(|(t, a)| *t == tick && *a == ControlToken::Boc) {
            outcome.note(format!("candidate tick {tick} already carries a backchannel; rejected"));
            continue;
        }
        let mut rng = derive_rng(config.seed, &["backchannel", &ordinal.to_string()]);
        if rng.random::<f64>() >= config.backchannel_rate {
            continue;
        }
        let word = BACKCHANNEL_LEXICON[rng.random_range(0..BACKCHANNEL_LEXICON.len())];
        events.push(TimedEvent::new(tick, Channel::Agent, Payload::word(word)));
        refs.push((tick, ControlToken::Boc));
        outcome.applied += 1;
    }

    Ok((
        ConversationScript::new(script.metadata.clone(), events, refs),
        outcome,
    ))
}

/// Inserts `[PAUSE]` markers after seeded mid-turn user words and stretches
/// the remainder of the script by the pause length. The reference stream is
/// untouched: the expected agent behavior through a hesitation is continued
/// silence.
pub fn inject_pause(
    script: &ConversationScript,
    config: &InjectionConfig,
) -> Result<(ConversationScript, InjectionOutcome), InjectError> {
    use rand::Rng;
    config.validate()?;
    let mut outcome = InjectionOutcome::default();
    let mut events = script.events.clone();
    let mut refs = script.reference_actions.clone();

    let words = user_words(script);
    let spans: Vec<(Tick, Tick)> =
        agent_turns(script).iter().map(|t| (t.open_tick, t.close_tick)).collect();
    let mut accumulated: i64 = 0;
    for (index, (ordinal, tick, _)) in words.iter().enumerate() {
        // Mid-turn means another user word follows closely.
        let mid_turn = words
            .get(index + 1)
            .is_some_and(|(_, next, _)| next.0.saturating_sub(tick.0) <= 2);
        if !mid_turn {
            continue;
        }
        // Hesitations model normal user speech; words overlapping an open
        // agent response (barge-in onsets) keep their timing.
        if spans.iter().any(|(open, close)| tick >= open && tick <= close) {
            continue;
        }
        let mut rng = derive_rng(config.seed, &["pause", &ordinal.to_string()]);
        if rng.random::<f64>() >= config.pause_insertion_rate {
            continue;
        }
        let at = Tick((tick.0 as i64 + accumulated) as u64);
        shift_from(&mut events, &mut refs, Tick(at.0 + 1), config.pause_ticks as i64);
        events.push(TimedEvent::new(
            Tick(at.0 + 1),
            Channel::User,
            Payload::Control(ControlToken::Pause),
        ));
        accumulated += config.pause_ticks as i64;
        outcome.applied += 1;
    }

    Ok((
        ConversationScript::new(script.metadata.clone(), events, refs),
        outcome,
    ))
}

const USER_LEXICON: &[&str] = &[
    "what", "time", "does", "the", "next", "train", "leave", "today", "please", "tell", "me",
    "about", "your", "weekend", "plans", "how", "do", "you", "make", "coffee", "where", "can",
    "we", "find", "a", "good", "restaurant", "nearby",
];

const AGENT_LEXICON: &[&str] = &[
    "sure", "the", "next", "one", "leaves", "at", "seven", "thirty", "from", "platform", "two",
    "you", "can", "try", "the", "corner", "place", "it", "has", "great", "reviews", "let", "me",
    "check", "that", "for", "you", "happy", "to", "help",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateScriptConfig {
    pub exchanges: (usize, usize),
    pub user_turn_words: (usize, usize),
    pub agent_turn_words: (usize, usize),
    pub inter_turn_silence_ms: f64,
}

impl Default for TemplateScriptConfig {
    fn default() -> Self {
        Self {
            exchanges: (2, 4),
            user_turn_words: (4, 10),
            agent_turn_words: (6, 12),
            inter_turn_silence_ms: 200.0,
        }
    }
}

/// Generates one clean alternating user/agent dialogue on the tick grid:
/// one word per tick, the configured inter-turn silence (rounded to ticks)
/// between turns, and reference `[BOS]`/`[EOS]` actions framing every
/// assistant turn.
pub fn generate_template_script(
    id: &str,
    seed: u64,
    config: &TemplateScriptConfig,
) -> ConversationScript {
    use rand::Rng;
    let mut rng = derive_rng(seed, &["template", id]);
    let silence_ticks = ((config.inter_turn_silence_ms / TICK_MS as f64).round() as u64).max(1);
    let exchanges = rng.random_range(config.exchanges.0..=config.exchanges.1);

    let mut events = Vec::new();
    let mut refs = Vec::new();
    let mut tick = 0u64;
    for _ in 0..exchanges {
        let user_len = rng.random_range(config.user_turn_words.0..=config.user_turn_words.1);
        for w in 0..user_len {
            let mut word = USER_LEXICON[rng.random_range(0..USER_LEXICON.len())].to_string();
            if w + 1 == user_len {
                word.push('.');
            } else if w > 0 && rng.random::<f64>() < 0.25 {
                word.push(',');
            }
            events.push(TimedEvent::new(Tick(tick), Channel::User, Payload::word(word)));
            tick += 1;
        }
        tick += silence_ticks;
        let bos = tick;
        refs.push((Tick(bos), ControlToken::Bos));
        tick += 1;
        let agent_len = rng.random_range(config.agent_turn_words.0..=config.agent_turn_words.1);
        for w in 0..agent_len {
            let mut word = AGENT_LEXICON[rng.random_range(0..AGENT_LEXICON.len())].to_string();
            if w + 1 == agent_len {
                word.push('.');
            }
            events.push(TimedEvent::new(Tick(tick), Channel::Agent, Payload::word(word)));
            tick += 1;
        }
        refs.push((Tick(tick), ControlToken::Eos));
        tick += 1 + silence_ticks;
    }

    ConversationScript::new(ScriptMetadata { id: id.to_string(), seed }, events, refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub scripts: usize,
    pub template: TemplateScriptConfig,
    pub injection: InjectionConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            scripts: 100,
            template: TemplateScriptConfig::default(),
            injection: InjectionConfig::default(),
            seed: 0,
        }
    }
}

/// One generated script plus the injection bookkeeping that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub script: ConversationScript,
    pub script_seed: u64,
    pub interruptions: InjectionOutcome,
    pub pauses: InjectionOutcome,
    pub backchannels: InjectionOutcome,
}

/// Reproducibility record written next to a generated corpus: the root seed,
/// the full generation config, and each script's derived seed and injection
/// counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub scripts: usize,
    pub template: TemplateScriptConfig,
    pub injection: InjectionConfig,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub interruptions: usize,
    pub backchannels: usize,
    pub pauses: usize,
}

impl CorpusManifest {
    pub fn describe(config: &CorpusConfig, corpus: &[CorpusEntry]) -> Self {
        Self {
            seed: config.seed,
            scripts: corpus.len(),
            template: config.template,
            injection: config.injection.clone(),
            entries: corpus
                .iter()
                .map(|e| ManifestEntry {
                    id: e.script.metadata.id.clone(),
                    seed: e.script_seed,
                    interruptions: e.interruptions.applied,
                    backchannels: e.backchannels.applied,
                    pauses: e.pauses.applied,
                })
                .collect(),
        }
    }
}

/// Generates `scripts` template dialogues and applies the three injection
/// passes to each: interruptions over assistant turns at the configured
/// rate, then pauses, then backchannels. Deterministic per seed.
pub fn build_corpus(config: &CorpusConfig) -> Result<Vec<CorpusEntry>, InjectError> {
    use rand::Rng;
    config.injection.validate()?;
    let mut corpus = Vec::with_capacity(config.scripts);
    for index in 0..config.scripts {
        let script_seed = derive_seed(config.seed, &["corpus-script", &index.to_string()]);
        let id = format!("script-{index:05}");
        let mut script = generate_template_script(&id, script_seed, &config.template);
        let per_script = InjectionConfig { seed: script_seed, ..config.injection.clone() };

        let mut interruptions = InjectionOutcome::default();
        // Walk assistant turns by ordinal; each interruption re-derives the
        // turn table because earlier cuts move later turns.
        let turn_count = agent_turns(&script).len();
        for ordinal in 0..turn_count {
            let mut gate = derive_rng(script_seed, &["interrupt-gate", &ordinal.to_string()]);
            if gate.random::<f64>() >= per_script.interruption_rate {
                continue;
            }
            let (next, outcome) = inject_interruption(&script, ordinal, &per_script)?;
            script = next;
            interruptions.applied += outcome.applied;
            interruptions.notes.extend(outcome.notes);
        }

        let (script, pauses) = inject_pause(&script, &per_script)?;
        let (script, backchannels) =
            inject_backchannel(&script, &per_script, &RuleBasedLocator)?;

        corpus.push(CorpusEntry { script, script_seed, interruptions, pauses, backchannels });
    }
    Ok(corpus)
}
