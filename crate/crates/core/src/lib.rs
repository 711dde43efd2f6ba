//! Hybrid fast/slow-path spoken dialogue runtime.
//!
//! A desk-scale control plane for duplex spoken dialogue: a tick-synchronous
//! turn-taking controller that forks a speculative prefix draft at response
//! onset, a lightweight learned verifier that gates the prefix handoff, a
//! cascaded slow path that continues from committed prefixes, a shared
//! response buffer with relay-margin accounting, and a deterministic
//! simulation harness with latency and turn-taking metrics.

pub mod config;
pub mod data_synth;
pub mod fast_path;
pub mod metrics;
pub mod relay_buffer;
pub mod seed;
pub mod session;
pub mod slow_path;
pub mod timeline;
pub mod verifier;
