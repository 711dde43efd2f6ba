//! Tick grid, control tokens, timed events, and conversation scripts.
//!
//! Everything downstream (the duplex controller, the data synthesizer, the
//! metrics scorer) consumes these types. Scripts are immutable after
//! construction and canonically ordered, so they are safe to share across
//! threads and round-trip bit-exactly through the line-oriented file format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Duration of one controller update tick, in milliseconds.
pub const TICK_MS: i64 = 160;

/// A position on the 160 ms update grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub fn index(self) -> u64 {
        self.0
    }

    /// Start of this tick on the virtual clock, in milliseconds.
    pub fn as_ms(self) -> f64 {
        (self.0 as i64 * TICK_MS) as f64
    }

    pub fn next(self) -> Tick {
        Tick(self.0 + 1)
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Signed milliseconds from tick `a` to tick `b`.
pub fn ticks_between(a: Tick, b: Tick) -> i64 {
    (b.0 as i64 - a.0 as i64) * TICK_MS
}

/// Dialogue control tokens shared between the agent decision stream and
/// user-channel annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlToken {
    /// Continued listening.
    Sil,
    /// Begin a backchannel.
    Boc,
    /// Begin a substantive response.
    Bos,
    /// Terminate an ongoing response (barge-in).
    Stp,
    /// Complete the current response.
    Eos,
    /// User-channel hesitation marker; never an agent decision.
    Pause,
}

impl ControlToken {
    pub fn label(self) -> &'static str {
        match self {
            ControlToken::Sil => "[SIL]",
            ControlToken::Boc => "[BOC]",
            ControlToken::Bos => "[BOS]",
            ControlToken::Stp => "[STP]",
            ControlToken::Eos => "[EOS]",
            ControlToken::Pause => "[PAUSE]",
        }
    }

    pub fn from_label(s: &str) -> Option<ControlToken> {
        match s {
            "[SIL]" => Some(ControlToken::Sil),
            "[BOC]" => Some(ControlToken::Boc),
            "[BOS]" => Some(ControlToken::Bos),
            "[STP]" => Some(ControlToken::Stp),
            "[EOS]" => Some(ControlToken::Eos),
            "[PAUSE]" => Some(ControlToken::Pause),
            _ => None,
        }
    }
}

impl fmt::Display for ControlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    User,
    Agent,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::User => f.write_str("user"),
            Channel::Agent => f.write_str("agent"),
        }
    }
}

/// What a channel carries at a tick: either a control token or one text word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Control(ControlToken),
    Word(String),
}

impl Payload {
    pub fn word(w: impl Into<String>) -> Payload {
        Payload::Word(w.into())
    }

    pub fn as_word(&self) -> Option<&str> {
        match self {
            Payload::Word(w) => Some(w),
            Payload::Control(_) => None,
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Control(t) => f.write_str(t.label()),
            Payload::Word(w) => f.write_str(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub tick: Tick,
    pub channel: Channel,
    pub payload: Payload,
}

impl TimedEvent {
    pub fn new(tick: Tick, channel: Channel, payload: Payload) -> Self {
        Self { tick, channel, payload }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptMetadata {
    pub id: String,
    pub seed: u64,
}

/// A timed dual-channel event sequence plus the ground-truth agent decisions
/// used for scoring and replay.
///
/// Construction canonicalizes event order: ascending tick, user channel before
/// agent within a tick, insertion order preserved within one (tick, channel)
/// cell. Reference actions are sorted by tick (stable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationScript {
    pub metadata: ScriptMetadata,
    pub events: Vec<TimedEvent>,
    pub reference_actions: Vec<(Tick, ControlToken)>,
}

impl ConversationScript {
    pub fn new(
        metadata: ScriptMetadata,
        mut events: Vec<TimedEvent>,
        mut reference_actions: Vec<(Tick, ControlToken)>,
    ) -> Self {
        events.sort_by_key(|e| (e.tick, e.channel));
        reference_actions.sort_by_key(|(t, _)| *t);
        Self { metadata, events, reference_actions }
    }

    pub fn last_tick(&self) -> Tick {
        let ev = self.events.iter().map(|e| e.tick.0).max().unwrap_or(0);
        let rf = self.reference_actions.iter().map(|(t, _)| t.0).max().unwrap_or(0);
        Tick(ev.max(rf))
    }

    /// Events on one channel, in canonical order.
    pub fn channel_events(&self, channel: Channel) -> impl Iterator<Item = &TimedEvent> {
        self.events.iter().filter(move |e| e.channel == channel)
    }

    pub fn reference_action_at(&self, tick: Tick) -> Option<ControlToken> {
        self.reference_actions
            .iter()
            .find(|(t, _)| *t == tick)
            .map(|(_, a)| *a)
    }
}

/// One invariant violation found by [`validate_script`]. Violations are data,
/// not errors: an invalid script is still a value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub tick: Tick,
    pub channel: Option<Channel>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.channel {
            Some(c) => write!(f, "tick {} [{}]: {}", self.tick, c, self.message),
            None => write!(f, "tick {}: {}", self.tick, self.message),
        }
    }
}

/// Checks every structural invariant of a script and reports one entry per
/// violation. Empty result means the script is clean.
///
/// Checked invariants:
/// - `[PAUSE]` appears only on the user channel; the other five control
///   tokens appear only on the agent channel.
/// - per-channel tick order is non-decreasing (guaranteed post-construction,
///   re-checked for scripts assembled by hand).
/// - reference actions replay through a turn-state automaton: one opener
///   (`[BOS]`) per turn, `[STP]`/`[EOS]` only while a response is open, and
///   `[BOC]` only while no response is open (a backchannel is a self-closing
///   interjection, never emitted mid-response).
pub fn validate_script(script: &ConversationScript) -> Vec<Violation> {
    let mut out = Vec::new();

    for event in &script.events {
        if let Payload::Control(tok) = &event.payload {
            let ok = match event.channel {
                Channel::User => *tok == ControlToken::Pause,
                Channel::Agent => *tok != ControlToken::Pause,
            };
            if !ok {
                out.push(Violation {
                    tick: event.tick,
                    channel: Some(event.channel),
                    message: format!("{} is not valid on the {} channel", tok, event.channel),
                });
            }
        }
        if let Payload::Word(w) = &event.payload {
            if ControlToken::from_label(w).is_some() {
                out.push(Violation {
                    tick: event.tick,
                    channel: Some(event.channel),
                    message: format!("word {:?} collides with a control token label", w),
                });
            }
        }
    }

    for channel in [Channel::User, Channel::Agent] {
        let mut prev: Option<Tick> = None;
        for event in script.channel_events(channel) {
            if let Some(p) = prev {
                if event.tick < p {
                    out.push(Violation {
                        tick: event.tick,
                        channel: Some(channel),
                        message: format!("tick order regressed ({} after {})", event.tick, p),
                    });
                }
            }
            prev = Some(event.tick);
        }
    }

    // Turn-state automaton over the reference actions.
    let mut open = false;
    for &(tick, action) in &script.reference_actions {
        match action {
            ControlToken::Bos => {
                if open {
                    out.push(Violation {
                        tick,
                        channel: Some(Channel::Agent),
                        message: "[BOS] while a response is already open".into(),
                    });
                }
                open = true;
            }
            ControlToken::Boc => {
                if open {
                    out.push(Violation {
                        tick,
                        channel: Some(Channel::Agent),
                        message: "[BOC] while a response is open".into(),
                    });
                }
                // Backchannels self-close; turn state is unchanged.
            }
            ControlToken::Stp | ControlToken::Eos => {
                if !open {
                    out.push(Violation {
                        tick,
                        channel: Some(Channel::Agent),
                        message: format!("{} with no open agent response", action),
                    });
                }
                open = false;
            }
            ControlToken::Sil => {}
            ControlToken::Pause => {
                out.push(Violation {
                    tick,
                    channel: Some(Channel::Agent),
                    message: "[PAUSE] is not an agent decision".into(),
                });
            }
        }
    }

    out
}

#[derive(Debug, Error)]
pub enum ScriptFormatError {
    #[error("line {line}: expected `tick | channel | payload`, got {got:?}")]
    Malformed { line: usize, got: String },
    #[error("line {line}: bad tick index {got:?}")]
    BadTick { line: usize, got: String },
    #[error("line {line}: unknown channel {got:?}")]
    BadChannel { line: usize, got: String },
    #[error("line {line}: reference payload must be a control token, got {got:?}")]
    BadReference { line: usize, got: String },
    #[error("line {line}: bad metadata directive {got:?}")]
    BadMetadata { line: usize, got: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes a script to the line-oriented format:
/// one `tick | channel | payload` record per line, UTF-8, `#` comments
/// ignored, `#!` directives carrying metadata. Channels are `user`, `agent`,
/// and `ref` (reference actions). Writer ordering is deterministic: ascending
/// tick, user before agent before ref within a tick.
pub fn write_script(script: &ConversationScript) -> String {
    let mut lines = Vec::new();
    lines.push(format!(
        "#! id={} seed={}",
        script.metadata.id, script.metadata.seed
    ));

    // Merge events and reference actions under the writer ordering. Events
    // are already canonical, so a stable walk per tick suffices.
    let mut refs = script.reference_actions.iter().peekable();
    let mut events = script.events.iter().peekable();
    loop {
        let next_event_tick = events.peek().map(|e| e.tick);
        let next_ref_tick = refs.peek().map(|(t, _)| *t);
        let tick = match (next_event_tick, next_ref_tick) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => break,
        };
        while let Some(e) = events.peek() {
            if e.tick != tick {
                break;
            }
            let e = events.next().unwrap();
            lines.push(format!("{} | {} | {}", e.tick, e.channel, e.payload));
        }
        while let Some((t, _)) = refs.peek() {
            if *t != tick {
                break;
            }
            let (t, a) = refs.next().unwrap();
            lines.push(format!("{} | ref | {}", t, a));
        }
    }

    lines.push(String::new());
    lines.join("\n")
}

/// Parses the script file format produced by [`write_script`].
pub fn parse_script(text: &str) -> Result<ConversationScript, ScriptFormatError> {
    let mut metadata = ScriptMetadata::default();
    let mut events = Vec::new();
    let mut reference_actions = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(directive) = line.strip_prefix("#!") {
            for field in directive.split_whitespace() {
                let (key, value) = field.split_once('=').ok_or_else(|| {
                    ScriptFormatError::BadMetadata { line: line_no, got: field.to_string() }
                })?;
                match key {
                    "id" => metadata.id = value.to_string(),
                    "seed" => {
                        metadata.seed = value.parse().map_err(|_| {
                            ScriptFormatError::BadMetadata { line: line_no, got: field.to_string() }
                        })?
                    }
                    _ => {
                        return Err(ScriptFormatError::BadMetadata {
                            line: line_no,
                            got: field.to_string(),
                        })
                    }
                }
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }

        let mut parts = line.splitn(3, '|').map(str::trim);
        let (tick_s, channel_s, payload_s) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(ScriptFormatError::Malformed { line: line_no, got: line.to_string() })
            }
        };
        let tick = Tick(tick_s.parse().map_err(|_| ScriptFormatError::BadTick {
            line: line_no,
            got: tick_s.to_string(),
        })?);
        let payload = match ControlToken::from_label(payload_s) {
            Some(tok) => Payload::Control(tok),
            None => Payload::Word(payload_s.to_string()),
        };
        match channel_s {
            "user" => events.push(TimedEvent::new(tick, Channel::User, payload)),
            "agent" => events.push(TimedEvent::new(tick, Channel::Agent, payload)),
            "ref" => match payload {
                Payload::Control(tok) => reference_actions.push((tick, tok)),
                Payload::Word(w) => {
                    return Err(ScriptFormatError::BadReference { line: line_no, got: w })
                }
            },
            other => {
                return Err(ScriptFormatError::BadChannel {
                    line: line_no,
                    got: other.to_string(),
                })
            }
        }
    }

    Ok(ConversationScript::new(metadata, events, reference_actions))
}

impl FromStr for ConversationScript {
    type Err = ScriptFormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_script(s)
    }
}

pub fn load_script(path: &std::path::Path) -> Result<ConversationScript, ScriptFormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_script(&text)
}

pub fn save_script(
    script: &ConversationScript,
    path: &std::path::Path,
) -> Result<(), ScriptFormatError> {
    std::fs::write(path, write_script(script))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str) -> ScriptMetadata {
        ScriptMetadata { id: id.to_string(), seed: 7 }
    }

    fn word(tick: u64, channel: Channel, w: &str) -> TimedEvent {
        TimedEvent::new(Tick(tick), channel, Payload::word(w))
    }

    #[test]
    fn tick_arithmetic() {
        assert_eq!(ticks_between(Tick(0), Tick(1)), 160);
        assert_eq!(ticks_between(Tick(5), Tick(5)), 0);
        assert_eq!(ticks_between(Tick(10), Tick(3)), -1120);
    }

    #[test]
    fn tick_to_ms() {
        assert_eq!(Tick(0).as_ms(), 0.0);
        assert_eq!(Tick(3).as_ms(), 480.0);
    }

    #[test]
    fn empty_script_is_clean() {
        let script = ConversationScript::new(meta("empty"), vec![], vec![]);
        assert!(validate_script(&script).is_empty());
    }

    #[test]
    fn agent_pause_is_flagged_with_tick() {
        let script = ConversationScript::new(
            meta("s"),
            vec![TimedEvent::new(
                Tick(4),
                Channel::Agent,
                Payload::Control(ControlToken::Pause),
            )],
            vec![],
        );
        let violations = validate_script(&script);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].tick, Tick(4));
        assert_eq!(violations[0].channel, Some(Channel::Agent));
    }

    #[test]
    fn user_channel_rejects_agent_tokens() {
        for tok in [
            ControlToken::Sil,
            ControlToken::Boc,
            ControlToken::Bos,
            ControlToken::Stp,
            ControlToken::Eos,
        ] {
            let script = ConversationScript::new(
                meta("s"),
                vec![TimedEvent::new(Tick(2), Channel::User, Payload::Control(tok))],
                vec![],
            );
            assert_eq!(validate_script(&script).len(), 1, "{tok} should be flagged");
        }
    }

    // Oracle: replay the reference actions through a hand-traced turn-state
    // automaton. [STP] at tick 9 arrives with no open response, so exactly
    // one violation is expected.
    #[test]
    fn stp_without_open_response_is_flagged() {
        let script = ConversationScript::new(
            meta("s"),
            vec![word(1, Channel::User, "hello")],
            vec![(Tick(9), ControlToken::Stp)],
        );
        let violations = validate_script(&script);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].tick, Tick(9));
        assert!(violations[0].message.contains("[STP]"));
    }

    #[test]
    fn well_formed_turn_sequence_is_clean() {
        let script = ConversationScript::new(
            meta("s"),
            vec![
                word(0, Channel::User, "hi"),
                word(1, Channel::User, "there"),
                word(3, Channel::Agent, "hello"),
                word(4, Channel::Agent, "friend"),
            ],
            vec![
                (Tick(2), ControlToken::Bos),
                (Tick(5), ControlToken::Eos),
                (Tick(7), ControlToken::Boc),
            ],
        );
        assert!(validate_script(&script).is_empty());
    }

    #[test]
    fn double_bos_is_flagged() {
        let script = ConversationScript::new(
            meta("s"),
            vec![],
            vec![(Tick(2), ControlToken::Bos), (Tick(4), ControlToken::Bos)],
        );
        let violations = validate_script(&script);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].tick, Tick(4));
    }

    #[test]
    fn validation_is_idempotent_and_order_independent() {
        let a = ConversationScript::new(
            meta("s"),
            vec![
                word(2, Channel::Agent, "x"),
                word(2, Channel::User, "y"),
                TimedEvent::new(Tick(2), Channel::Agent, Payload::Control(ControlToken::Pause)),
            ],
            vec![(Tick(9), ControlToken::Stp)],
        );
        // Same events permuted before canonicalization.
        let b = ConversationScript::new(
            meta("s"),
            vec![
                TimedEvent::new(Tick(2), Channel::Agent, Payload::Control(ControlToken::Pause)),
                word(2, Channel::User, "y"),
                word(2, Channel::Agent, "x"),
            ],
            vec![(Tick(9), ControlToken::Stp)],
        );
        let va = validate_script(&a);
        assert_eq!(va, validate_script(&a), "idempotent");
        assert_eq!(va.len(), validate_script(&b).len(), "order independent");
    }

    #[test]
    fn writer_orders_user_before_agent_within_tick() {
        let script = ConversationScript::new(
            meta("s"),
            vec![word(2, Channel::Agent, "late"), word(2, Channel::User, "early")],
            vec![(Tick(2), ControlToken::Bos)],
        );
        let text = write_script(&script);
        let user_pos = text.find("user | early").unwrap();
        let agent_pos = text.find("agent | late").unwrap();
        let ref_pos = text.find("ref | [BOS]").unwrap();
        assert!(user_pos < agent_pos && agent_pos < ref_pos);
    }

    #[test]
    fn round_trip_preserves_script_exactly() {
        let script = ConversationScript::new(
            meta("rt-1"),
            vec![
                word(0, Channel::User, "hello"),
                TimedEvent::new(Tick(1), Channel::User, Payload::Control(ControlToken::Pause)),
                word(1, Channel::User, "world"),
                word(4, Channel::Agent, "sure"),
            ],
            vec![(Tick(3), ControlToken::Bos), (Tick(6), ControlToken::Eos)],
        );
        let parsed = parse_script(&write_script(&script)).unwrap();
        assert_eq!(parsed, script);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "#! id=c seed=3\n# a comment\n\n0 | user | hi\n   # indented comment\n2 | ref | [BOS]\n";
        let script = parse_script(text).unwrap();
        assert_eq!(script.metadata.id, "c");
        assert_eq!(script.metadata.seed, 3);
        assert_eq!(script.events.len(), 1);
        assert_eq!(script.reference_actions.len(), 1);
    }

    #[test]
    fn reference_line_with_word_payload_is_rejected() {
        let err = parse_script("1 | ref | hello\n").unwrap_err();
        assert!(matches!(err, ScriptFormatError::BadReference { line: 1, .. }));
    }

    #[test]
    fn unknown_channel_is_rejected() {
        let err = parse_script("1 | narrator | hi\n").unwrap_err();
        assert!(matches!(err, ScriptFormatError::BadChannel { .. }));
    }
}
