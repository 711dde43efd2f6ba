//! Shared response buffer and the chunk-incremental TTS timing model.
//!
//! Both generation paths write word segments here; the sink drains them into
//! an audio timeline under the minimum-chunk gating rule. No audio is
//! produced — the sink is purely a timing model, which is all the buffering
//! and barge-in semantics need.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    Fast,
    Slow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub source: SegmentSource,
    pub words: Vec<String>,
    /// When these words became available to the sink, in ms.
    pub available_at_ms: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("a fast segment is already present; at most one per turn")]
    DuplicateFastSegment,
    #[error("fast segment must precede all slow segments")]
    FastAfterSlow,
    #[error("segment availability regressed: {new} ms after {prev} ms")]
    AvailabilityRegressed { prev: f64, new: f64 },
    #[error("segment has no words")]
    EmptySegment,
}

/// Ordered fast-then-slow word delivery for one utterance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseBuffer {
    pub segments: Vec<Segment>,
    /// Set by a barge-in; words scheduled at or after this time never play.
    pub truncated_at_ms: Option<f64>,
}

impl ResponseBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_fast(
        &mut self,
        words: Vec<String>,
        available_at_ms: f64,
    ) -> Result<(), BufferError> {
        if words.is_empty() {
            return Err(BufferError::EmptySegment);
        }
        if self.segments.iter().any(|s| s.source == SegmentSource::Fast) {
            return Err(BufferError::DuplicateFastSegment);
        }
        if !self.segments.is_empty() {
            return Err(BufferError::FastAfterSlow);
        }
        self.segments.push(Segment { source: SegmentSource::Fast, words, available_at_ms });
        Ok(())
    }

    pub fn push_slow(
        &mut self,
        words: Vec<String>,
        available_at_ms: f64,
    ) -> Result<(), BufferError> {
        if words.is_empty() {
            return Err(BufferError::EmptySegment);
        }
        if let Some(last) =
            self.segments.iter().rev().find(|s| s.source == SegmentSource::Slow)
        {
            if available_at_ms < last.available_at_ms {
                return Err(BufferError::AvailabilityRegressed {
                    prev: last.available_at_ms,
                    new: available_at_ms,
                });
            }
        }
        self.segments.push(Segment { source: SegmentSource::Slow, words, available_at_ms });
        Ok(())
    }

    pub fn words(&self) -> Vec<String> {
        self.segments.iter().flat_map(|s| s.words.iter().cloned()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Records a barge-in at `stp_time_ms`. Applies only while an utterance
    /// is still active; a stop with nothing to stop is a warning, not an
    /// error.
    pub fn truncate_on_stp(&mut self, sink: &TtsSinkModel, stp_time_ms: f64) -> TruncateOutcome {
        if self.truncated_at_ms.is_some() {
            return TruncateOutcome {
                applied: false,
                warning: Some("utterance already truncated".into()),
            };
        }
        if self.segments.is_empty() {
            return TruncateOutcome {
                applied: false,
                warning: Some("no active utterance to stop".into()),
            };
        }
        let full = drain(self, sink);
        let utterance_end = full.intervals.last().map(|iv| iv.end_ms).unwrap_or(0.0);
        if stp_time_ms >= utterance_end {
            return TruncateOutcome {
                applied: false,
                warning: Some(format!(
                    "stop at {stp_time_ms} ms is after utterance end {utterance_end} ms"
                )),
            };
        }
        self.truncated_at_ms = Some(stp_time_ms);
        TruncateOutcome { applied: true, warning: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncateOutcome {
    pub applied: bool,
    pub warning: Option<String>,
}

/// Chunk-gating TTS model: synthesis may start once `min_chunk_words` are
/// buffered, and each spoken word occupies `word_duration_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtsSinkModel {
    pub min_chunk_words: usize,
    pub word_duration_ms: f64,
}

impl TtsSinkModel {
    pub fn new(min_chunk_words: usize, word_duration_ms: f64) -> Self {
        assert!(min_chunk_words >= 1, "minimum chunk must be at least one word");
        assert!(word_duration_ms > 0.0, "word duration must be positive");
        Self { min_chunk_words, word_duration_ms }
    }
}

impl Default for TtsSinkModel {
    fn default() -> Self {
        Self { min_chunk_words: 5, word_duration_ms: 400.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechInterval {
    pub start_ms: f64,
    pub end_ms: f64,
    pub words: Vec<String>,
    pub source: SegmentSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceGap {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl SilenceGap {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

/// Playback-serialized synthesis intervals for one utterance. Seamless iff
/// `gaps` is empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AudioTimeline {
    pub intervals: Vec<SpeechInterval>,
    pub gaps: Vec<SilenceGap>,
}

impl AudioTimeline {
    pub fn is_seamless(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        self.intervals.iter().flat_map(|iv| iv.words.iter().cloned()).collect()
    }

    pub fn end_ms(&self) -> f64 {
        self.intervals.last().map(|iv| iv.end_ms).unwrap_or(0.0)
    }
}

/// A synthesis chunk before playback scheduling.
struct PendingChunk {
    words: Vec<String>,
    available_at_ms: f64,
    source: SegmentSource,
}

/// Drains a finalized (or truncated) buffer through the sink.
///
/// Chunking respects the two source streams. The fast segment is complete the
/// moment it is committed, so it flushes immediately: full `C`-word chunks
/// plus its remainder, all available at commit time. Slow words pool across
/// arrivals; every `C`-th word closes a chunk whose availability is that
/// word's arrival, and the final partial chunk flushes at utterance end.
/// Chunk `i` starts at `max(chunk availability, end of chunk i-1)` and runs
/// `word count x word_duration_ms`. Barge-in truncation drops every word
/// whose synthesis would start at or after the stop time and clips the
/// in-flight interval.
pub fn drain(buffer: &ResponseBuffer, sink: &TtsSinkModel) -> AudioTimeline {
    let c = sink.min_chunk_words;
    let mut chunks: Vec<PendingChunk> = Vec::new();

    for segment in buffer.segments.iter().filter(|s| s.source == SegmentSource::Fast) {
        for group in segment.words.chunks(c) {
            chunks.push(PendingChunk {
                words: group.to_vec(),
                available_at_ms: segment.available_at_ms,
                source: SegmentSource::Fast,
            });
        }
    }

    let mut pool: Vec<(String, f64)> = Vec::new();
    for segment in buffer.segments.iter().filter(|s| s.source == SegmentSource::Slow) {
        for word in &segment.words {
            pool.push((word.clone(), segment.available_at_ms));
            if pool.len() == c {
                let available_at_ms = pool.last().unwrap().1;
                chunks.push(PendingChunk {
                    words: pool.drain(..).map(|(w, _)| w).collect(),
                    available_at_ms,
                    source: SegmentSource::Slow,
                });
            }
        }
    }
    if !pool.is_empty() {
        // Stream end: the remaining partial chunk goes out as-is.
        let available_at_ms = pool.last().unwrap().1;
        chunks.push(PendingChunk {
            words: pool.drain(..).map(|(w, _)| w).collect(),
            available_at_ms,
            source: SegmentSource::Slow,
        });
    }

    let mut timeline = AudioTimeline::default();
    let mut cursor_ms: f64 = 0.0;
    let mut first = true;
    for chunk in chunks {
        let start = if first { chunk.available_at_ms } else { chunk.available_at_ms.max(cursor_ms) };
        let mut end = start + chunk.words.len() as f64 * sink.word_duration_ms;
        let mut words = chunk.words;

        if let Some(stop) = buffer.truncated_at_ms {
            if start >= stop {
                break;
            }
            if end > stop {
                // Keep only words whose synthesis started before the stop.
                let keep = words
                    .iter()
                    .enumerate()
                    .take_while(|(i, _)| start + *i as f64 * sink.word_duration_ms < stop)
                    .count();
                words.truncate(keep);
                end = stop;
            }
        }

        if !first && start > cursor_ms {
            timeline.gaps.push(SilenceGap { start_ms: cursor_ms, end_ms: start });
        }
        cursor_ms = end;
        first = false;
        timeline.intervals.push(SpeechInterval {
            start_ms: start,
            end_ms: end,
            words,
            source: chunk.source,
        });
        if buffer.truncated_at_ms.is_some_and(|stop| end >= stop) {
            break;
        }
    }

    timeline
}

/// Prefix audio duration minus the slow path's startup relative to prefix
/// onset. Positive means the continuation arrives before the prefix audio
/// runs out, so playback is seamless.
pub fn relay_margin(
    prefix_words: usize,
    prefix_onset_ms: f64,
    word_duration_ms: f64,
    slow_first_chunk_ms: f64,
) -> f64 {
    prefix_words as f64 * word_duration_ms - (slow_first_chunk_ms - prefix_onset_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    fn sink() -> TtsSinkModel {
        TtsSinkModel::new(5, 400.0)
    }

    #[test]
    fn five_word_fast_segment_plays_as_one_interval() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["sure", "i", "can", "help", "you"]), 81.0).unwrap();
        let timeline = drain(&buffer, &sink());
        assert_eq!(timeline.intervals.len(), 1);
        assert_eq!(timeline.intervals[0].start_ms, 81.0);
        assert_eq!(timeline.intervals[0].end_ms, 2081.0);
        assert!(timeline.is_seamless());
    }

    #[test]
    fn empty_buffer_drains_to_empty_timeline() {
        let timeline = drain(&ResponseBuffer::new(), &sink());
        assert!(timeline.intervals.is_empty());
        assert!(timeline.gaps.is_empty());
    }

    // 1091 < 2081, so the slow chunk waits for the prefix audio to finish
    // and no gap opens.
    #[test]
    fn slow_chunk_arriving_during_prefix_audio_is_seamless() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a", "b", "c", "d", "e"]), 81.0).unwrap();
        buffer.push_slow(words(&["f", "g", "h", "i", "j"]), 1091.0).unwrap();
        let timeline = drain(&buffer, &sink());
        assert_eq!(timeline.intervals.len(), 2);
        assert_eq!(timeline.intervals[1].start_ms, 2081.0);
        assert_eq!(timeline.intervals[1].end_ms, 4081.0);
        assert!(timeline.gaps.is_empty());
    }

    #[test]
    fn relay_margin_matches_definition() {
        assert_eq!(relay_margin(5, 81.0, 400.0, 1091.0), 990.0);
        // Slow chunk arriving exactly at prefix-audio exhaustion.
        assert_eq!(relay_margin(5, 81.0, 400.0, 2081.0), 0.0);
        assert_eq!(relay_margin(3, 81.0, 400.0, 2000.0), -719.0);
    }

    // Cross-check: a negative margin must show up as a gap of exactly the
    // same size in the drained timeline.
    #[test]
    fn negative_margin_equals_gap_size() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a", "b", "c"]), 81.0).unwrap();
        buffer.push_slow(words(&["d", "e", "f", "g", "h"]), 2000.0).unwrap();
        let timeline = drain(&buffer, &sink());
        assert_eq!(timeline.gaps.len(), 1);
        let gap = timeline.gaps[0];
        assert_eq!(gap.start_ms, 1281.0);
        assert_eq!(gap.end_ms, 2000.0);
        assert_eq!(gap.duration_ms(), 719.0);
        assert_eq!(relay_margin(3, 81.0, 400.0, 2000.0), -gap.duration_ms());
    }

    #[test]
    fn partial_fast_prefix_flushes_at_commit() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a", "b", "c"]), 81.0).unwrap();
        let timeline = drain(&buffer, &sink());
        assert_eq!(timeline.intervals.len(), 1);
        assert_eq!(timeline.intervals[0].start_ms, 81.0);
        assert_eq!(timeline.intervals[0].end_ms, 1281.0);
    }

    #[test]
    fn slow_words_pool_across_arrivals() {
        let sink = TtsSinkModel::new(5, 100.0);
        let mut buffer = ResponseBuffer::new();
        buffer.push_slow(words(&["a", "b", "c"]), 50.0).unwrap();
        buffer.push_slow(words(&["d", "e", "f"]), 90.0).unwrap();
        let timeline = drain(&buffer, &sink);
        // First chunk closes at its 5th word, which arrives at 90 ms.
        assert_eq!(timeline.intervals.len(), 2);
        assert_eq!(timeline.intervals[0].start_ms, 90.0);
        assert_eq!(timeline.intervals[0].words.len(), 5);
        // The leftover word flushes as the utterance-final partial chunk.
        assert_eq!(timeline.intervals[1].words, words(&["f"]));
        assert_eq!(timeline.intervals[1].start_ms, 590.0);
    }

    #[test]
    fn stp_mid_interval_clips_at_stop_time() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a", "b", "c", "d", "e"]), 81.0).unwrap();
        let outcome = buffer.truncate_on_stp(&sink(), 500.0);
        assert!(outcome.applied);
        let timeline = drain(&buffer, &sink());
        assert_eq!(timeline.intervals.len(), 1);
        assert_eq!(timeline.intervals[0].start_ms, 81.0);
        assert_eq!(timeline.intervals[0].end_ms, 500.0);
        // Word starts are 81, 481, 881, ... — only two begin before 500 ms.
        assert_eq!(timeline.intervals[0].words, words(&["a", "b"]));
    }

    #[test]
    fn stp_before_any_audio_drops_everything() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a", "b", "c", "d", "e"]), 81.0).unwrap();
        let outcome = buffer.truncate_on_stp(&sink(), 40.0);
        assert!(outcome.applied);
        let timeline = drain(&buffer, &sink());
        assert!(timeline.intervals.is_empty());
    }

    #[test]
    fn stp_after_utterance_end_is_a_warned_no_op() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a", "b", "c", "d", "e"]), 81.0).unwrap();
        let before = drain(&buffer, &sink());
        let outcome = buffer.truncate_on_stp(&sink(), 5000.0);
        assert!(!outcome.applied);
        assert!(outcome.warning.is_some());
        assert_eq!(drain(&buffer, &sink()), before);
    }

    #[test]
    fn stp_with_empty_buffer_warns() {
        let mut buffer = ResponseBuffer::new();
        let outcome = buffer.truncate_on_stp(&sink(), 100.0);
        assert!(!outcome.applied);
        assert!(outcome.warning.is_some());
    }

    #[test]
    fn fast_segment_rules_are_enforced() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a"]), 10.0).unwrap();
        assert_eq!(buffer.push_fast(words(&["b"]), 20.0), Err(BufferError::DuplicateFastSegment));
        buffer.push_slow(words(&["c"]), 30.0).unwrap();

        let mut buffer2 = ResponseBuffer::new();
        buffer2.push_slow(words(&["x"]), 5.0).unwrap();
        assert_eq!(buffer2.push_fast(words(&["y"]), 10.0), Err(BufferError::FastAfterSlow));
    }

    #[test]
    fn timeline_words_preserve_buffer_order() {
        let mut buffer = ResponseBuffer::new();
        buffer.push_fast(words(&["a", "b", "c", "d", "e", "f", "g"]), 10.0).unwrap();
        buffer.push_slow(words(&["h", "i"]), 100.0).unwrap();
        buffer.push_slow(words(&["j", "k", "l", "m"]), 200.0).unwrap();
        let timeline = drain(&buffer, &sink());
        assert_eq!(timeline.words(), buffer.words());
    }

    // Increasing prefix length keeps first-audio onset fixed and never
    // shrinks the relay margin, all else equal.
    #[test]
    fn longer_prefix_never_hurts_onset_or_margin() {
        let mut prev_margin = f64::NEG_INFINITY;
        for n in 1..=8 {
            let mut buffer = ResponseBuffer::new();
            buffer.push_fast((0..n).map(|i| format!("w{i}")).collect(), 81.0).unwrap();
            buffer.push_slow(words(&["x", "y", "z", "q", "r"]), 1500.0).unwrap();
            let timeline = drain(&buffer, &sink());
            assert_eq!(timeline.intervals[0].start_ms, 81.0);
            let margin = relay_margin(n, 81.0, 400.0, 1500.0);
            assert!(margin >= prev_margin);
            prev_margin = margin;
        }
    }
}
