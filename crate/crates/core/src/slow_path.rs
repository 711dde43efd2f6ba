//! Cascaded slow path: transcription of the buffered user turn, then
//! prefix-conditioned continuation generation through a pluggable LLM client
//! boundary.
//!
//! The path triggers off the fast path's `[BOS]` decision — no separate
//! end-of-utterance detector — and, when the gate committed a prefix, the LLM
//! is prompted to continue from the exact point where the prefix ends. A seam
//! guard strips clients that echo prefix words anyway. Simulated clients
//! model latency only; response content replays the script, since quality is
//! oracle-labeled rather than generated here.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_rng, sample_standard_normal};
use crate::timeline::Tick;

/// Word overlap longer than this is not treated as an echo.
pub const SEAM_GUARD_MAX_WORDS: usize = 3;

const CONTINUATION_TEMPLATE: &str = include_str!("../assets/continuation_prompt.txt");
const FULL_RESPONSE_TEMPLATE: &str = include_str!("../assets/full_response_prompt.txt");

#[derive(Debug, Error)]
pub enum SlowPathError {
    #[error("transcription failed: {0}")]
    Asr(String),
    #[error("generation failed: {0}")]
    Llm(String),
    #[error("client returned no chunks")]
    NoChunks,
    #[error("no response trigger recorded at tick {0}")]
    TriggerWithoutBos(Tick),
    #[error("stream protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Latency model for simulated clients, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    Constant { ms: f64 },
    /// `exp(mu + sigma z)` with `z` standard normal from a per-call stream.
    LogNormal { mu_ln_ms: f64, sigma_ln: f64 },
}

impl LatencyModel {
    pub fn sample(&self, seed: u64, labels: &[&str]) -> f64 {
        match self {
            LatencyModel::Constant { ms } => *ms,
            LatencyModel::LogNormal { mu_ln_ms, sigma_ln } => {
                let mut rng = derive_rng(seed, labels);
                (mu_ln_ms + sigma_ln * sample_standard_normal(&mut rng)).exp()
            }
        }
    }
}

/// The user-turn capture handed to the ASR stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferedTurn {
    /// Stable key for deterministic per-turn latency streams.
    pub turn_key: String,
    pub words: Vec<String>,
    /// Set when the response opened with no user words buffered; the slow
    /// path still runs.
    pub empty: bool,
}

/// Accumulates user words and hands out the current turn at each `[BOS]`.
#[derive(Debug, Clone, Default)]
pub struct UserTurnTracker {
    current: Vec<(Tick, String)>,
    pending: Option<(Tick, BufferedTurn)>,
    turns_opened: usize,
}

impl UserTurnTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_user_word(&mut self, tick: Tick, word: &str) {
        self.current.push((tick, word.to_string()));
    }

    /// Called when the controller emits `[BOS]`: snapshots everything heard
    /// so far this turn. Words arriving later belong to the next turn.
    pub fn mark_bos(&mut self, script_id: &str, bos_tick: Tick) {
        let words: Vec<String> = self
            .current
            .iter()
            .filter(|(t, _)| *t <= bos_tick)
            .map(|(_, w)| w.clone())
            .collect();
        self.current.retain(|(t, _)| *t > bos_tick);
        let turn = BufferedTurn {
            turn_key: format!("{script_id}#{}", self.turns_opened),
            empty: words.is_empty(),
            words,
        };
        self.turns_opened += 1;
        self.pending = Some((bos_tick, turn));
    }

    /// Returns the user turn buffered at `bos_tick`. Fails if no `[BOS]` was
    /// recorded there.
    pub fn trigger(&mut self, bos_tick: Tick) -> Result<BufferedTurn, SlowPathError> {
        match self.pending.take() {
            Some((tick, turn)) if tick == bos_tick => Ok(turn),
            _ => Err(SlowPathError::TriggerWithoutBos(bos_tick)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub text: String,
    pub latency_ms: f64,
}

pub trait AsrClient {
    fn transcribe(&mut self, turn: &BufferedTurn) -> Result<Transcript, SlowPathError>;
}

/// Offline-ASR stand-in: the transcript is the buffered words verbatim and
/// latency comes from the configured model.
#[derive(Debug, Clone)]
pub struct SimulatedAsr {
    pub latency: LatencyModel,
    pub seed: u64,
}

impl AsrClient for SimulatedAsr {
    fn transcribe(&mut self, turn: &BufferedTurn) -> Result<Transcript, SlowPathError> {
        Ok(Transcript {
            text: turn.words.join(" "),
            latency_ms: self.latency.sample(self.seed, &["asr", &turn.turn_key]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    fn label(self) -> &'static str {
        match self {
            Role::User => "User",
            Role::Assistant => "Assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: Role,
    pub text: String,
}

impl DialogueTurn {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

/// Renders the generation prompt. With a committed prefix, the continuation
/// template is emitted byte-exactly with `{history}` as alternating
/// `User:`/`Assistant:` turns and `{forced_prefix}` substituted; without one,
/// the plain full-response template is used.
pub fn build_prompt(history: &[DialogueTurn], forced_prefix: Option<&[String]>) -> String {
    let rendered_history = history
        .iter()
        .map(|turn| {
            if turn.text.is_empty() {
                format!("{}:", turn.role.label())
            } else {
                format!("{}: {}", turn.role.label(), turn.text)
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    match forced_prefix {
        Some(prefix) => CONTINUATION_TEMPLATE
            .trim_end_matches('\n')
            .replace("{history}", &rendered_history)
            .replace("{forced_prefix}", &prefix.join(" ")),
        None => FULL_RESPONSE_TEMPLATE
            .trim_end_matches('\n')
            .replace("{history}", &rendered_history),
    }
}

/// One streamed continuation chunk; `arrival_offset_ms` is measured from
/// generation start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedChunk {
    pub words: Vec<String>,
    pub arrival_offset_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest<'a> {
    pub prompt: &'a str,
    pub forced_prefix: Option<&'a [String]>,
    /// Simulation side-channel: the scripted response this backend replays.
    /// External clients ignore it.
    pub scripted_response: Option<&'a [String]>,
    pub turn_key: &'a str,
}

pub trait LlmClient {
    fn generate(&mut self, request: &LlmRequest) -> Result<Vec<GeneratedChunk>, SlowPathError>;
}

/// Streams the scripted response in fixed-size chunks under the configured
/// latency model. With a forced prefix that matches the scripted opening, the
/// replayed continuation starts after it, mirroring forced decoding.
#[derive(Debug, Clone)]
pub struct SimulatedLlm {
    pub first_chunk_latency: LatencyModel,
    pub inter_chunk_latency: LatencyModel,
    pub words_per_chunk: usize,
    pub seed: u64,
}

impl LlmClient for SimulatedLlm {
    fn generate(&mut self, request: &LlmRequest) -> Result<Vec<GeneratedChunk>, SlowPathError> {
        let response: Vec<String> = request
            .scripted_response
            .map(|w| w.to_vec())
            .ok_or_else(|| SlowPathError::Llm("simulated backend needs a scripted response".into()))?;

        let continuation: Vec<String> = match request.forced_prefix {
            Some(prefix) if response.starts_with(prefix) => response[prefix.len()..].to_vec(),
            _ => response,
        };

        let mut chunks = Vec::new();
        let mut arrival =
            self.first_chunk_latency.sample(self.seed, &["llm-first", request.turn_key]);
        let groups: Vec<&[String]> = if continuation.is_empty() {
            Vec::new()
        } else {
            continuation.chunks(self.words_per_chunk.max(1)).collect()
        };
        for (index, group) in groups.iter().enumerate() {
            if index > 0 {
                arrival += self.inter_chunk_latency.sample(
                    self.seed,
                    &["llm-next", request.turn_key, &index.to_string()],
                );
            }
            chunks.push(GeneratedChunk { words: group.to_vec(), arrival_offset_ms: arrival });
        }
        if chunks.is_empty() {
            // The whole response was already spoken as the prefix; report the
            // generation heartbeat with no words.
            chunks.push(GeneratedChunk { words: Vec::new(), arrival_offset_ms: arrival });
        }
        Ok(chunks)
    }
}

/// Client for an external generation endpoint speaking a newline-delimited
/// streaming protocol over TCP: one JSON request line out, then one JSON
/// chunk object per line back until `"final": true`. Chunk arrival offsets
/// are measured on the wall clock.
#[derive(Debug, Clone)]
pub struct ExternalLlmClient {
    /// `host:port` of the generation endpoint.
    pub endpoint: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    forced_prefix: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct WireChunk {
    #[serde(default)]
    words: Vec<String>,
    #[serde(default)]
    r#final: bool,
}

impl LlmClient for ExternalLlmClient {
    fn generate(&mut self, request: &LlmRequest) -> Result<Vec<GeneratedChunk>, SlowPathError> {
        let mut stream = TcpStream::connect(&self.endpoint)?;
        let wire = WireRequest { prompt: request.prompt, forced_prefix: request.forced_prefix };
        let mut line = serde_json::to_string(&wire)
            .map_err(|e| SlowPathError::Protocol(e.to_string()))?;
        line.push('\n');
        stream.write_all(line.as_bytes())?;
        stream.flush()?;

        let started = Instant::now();
        let mut reader = BufReader::new(stream);
        let mut chunks = Vec::new();
        loop {
            let mut buf = String::new();
            let read = reader.read_line(&mut buf)?;
            if read == 0 {
                return Err(SlowPathError::Protocol("stream closed before final chunk".into()));
            }
            let trimmed = buf.trim();
            if trimmed.is_empty() {
                continue;
            }
            let chunk: WireChunk = serde_json::from_str(trimmed)
                .map_err(|e| SlowPathError::Protocol(format!("bad chunk line: {e}")))?;
            let arrival_offset_ms = started.elapsed().as_secs_f64() * 1000.0;
            if !chunk.words.is_empty() {
                chunks.push(GeneratedChunk { words: chunk.words, arrival_offset_ms });
            }
            if chunk.r#final {
                if chunks.is_empty() {
                    chunks.push(GeneratedChunk { words: Vec::new(), arrival_offset_ms });
                }
                return Ok(chunks);
            }
        }
    }
}

/// Continuation chunk rebased to trigger-relative time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedChunk {
    pub words: Vec<String>,
    pub arrival_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowPathResult {
    pub transcript: Transcript,
    pub continuation: Vec<TimedChunk>,
    /// `T_asr` plus time to the first generated chunk, from trigger.
    pub first_chunk_latency_ms: f64,
    pub used_prefix: Option<Vec<String>>,
}

impl SlowPathResult {
    pub fn continuation_words(&self) -> Vec<String> {
        self.continuation.iter().flat_map(|c| c.words.iter().cloned()).collect()
    }
}

/// Runs the cascaded pipeline for one turn: transcription, prompt build,
/// streamed generation, and the seam guard. Client failures surface as
/// errors; the caller records a failed turn instead of hanging.
pub fn generate(
    asr: &mut dyn AsrClient,
    llm: &mut dyn LlmClient,
    turn: &BufferedTurn,
    history: &[DialogueTurn],
    committed_prefix: Option<&[String]>,
    scripted_response: Option<&[String]>,
) -> Result<SlowPathResult, SlowPathError> {
    let transcript = asr.transcribe(turn)?;

    let mut full_history = history.to_vec();
    full_history.push(DialogueTurn::user(transcript.text.clone()));
    let prompt = build_prompt(&full_history, committed_prefix);

    let request = LlmRequest {
        prompt: &prompt,
        forced_prefix: committed_prefix,
        scripted_response,
        turn_key: &turn.turn_key,
    };
    let mut chunks = llm.generate(&request)?;
    if chunks.is_empty() {
        return Err(SlowPathError::NoChunks);
    }
    let first_arrival = chunks[0].arrival_offset_ms;

    if let Some(prefix) = committed_prefix {
        strip_seam_echo(prefix, &mut chunks);
    }

    let continuation: Vec<TimedChunk> = chunks
        .into_iter()
        .filter(|c| !c.words.is_empty())
        .map(|c| TimedChunk {
            words: c.words,
            arrival_ms: transcript.latency_ms + c.arrival_offset_ms,
        })
        .collect();

    Ok(SlowPathResult {
        first_chunk_latency_ms: transcript.latency_ms + first_arrival,
        transcript,
        continuation,
        used_prefix: committed_prefix.map(|p| p.to_vec()),
    })
}

/// Removes the longest suffix of the prefix (up to [`SEAM_GUARD_MAX_WORDS`])
/// that the continuation re-emits at its seam.
fn strip_seam_echo(prefix: &[String], chunks: &mut [GeneratedChunk]) {
    let Some(first) = chunks.first_mut() else { return };
    let cap = SEAM_GUARD_MAX_WORDS.min(prefix.len()).min(first.words.len());
    for overlap in (1..=cap).rev() {
        if prefix[prefix.len() - overlap..] == first.words[..overlap] {
            first.words.drain(..overlap);
            return;
        }
    }
}
