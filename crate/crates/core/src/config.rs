//! Run configuration: a TOML file of named profiles resolved into a
//! [`SessionConfig`] plus corpus-generation settings.
//!
//! Every referenced file must exist at load time, thresholds and prefix
//! lengths are bounds-checked against the gate, and the tick grid is pinned
//! to its global constant.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_synth::{CorpusConfig, InjectionConfig, TemplateScriptConfig};
use crate::fast_path::DraftTiming;
use crate::relay_buffer::TtsSinkModel;
use crate::session::{
    DraftLabeler, DraftSourceSpec, GateSpec, PolicySpec, RunMode, SessionConfig, SlowBackendSpec,
};
use crate::slow_path::LatencyModel;
use crate::timeline::TICK_MS;
use crate::verifier::kfold::{FileLabelOracle, RuleLabelOracle};
use crate::verifier::{load_weights, VerifierConfig, VerifierModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("no profile named {0:?}")]
    MissingProfile(String),
    #[error("profile {profile:?}: {message}")]
    Invalid { profile: String, message: String },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ConfigFile {
    pub schema: u32,
    pub profiles: BTreeMap<String, Profile>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Profile {
    pub mode: String,
    pub prefix_len: usize,
    pub threshold: f64,
    pub backchannel_prefix_len: usize,
    pub seed: u64,
    pub tick_ms: i64,
    pub tolerance_frames: u64,
    pub realtime: bool,
    pub policy: PolicySection,
    pub tts: TtsSection,
    pub fast_path: FastPathSection,
    pub slow_path: SlowPathSection,
    pub gate: GateSection,
    pub paths: PathsSection,
    pub corpus: CorpusSection,
}

impl Default for Profile {
    fn default() -> Self {
        Self {
            mode: "relay".into(),
            prefix_len: 5,
            threshold: 0.50,
            backchannel_prefix_len: 2,
            seed: 42,
            tick_ms: TICK_MS,
            tolerance_frames: 1,
            realtime: false,
            policy: PolicySection::default(),
            tts: TtsSection::default(),
            fast_path: FastPathSection::default(),
            slow_path: SlowPathSection::default(),
            gate: GateSection::default(),
            paths: PathsSection::default(),
            corpus: CorpusSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub kind: String,
    pub silence_ticks_to_respond: u32,
    pub response_ticks: u32,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { kind: "scripted".into(), silence_ticks_to_respond: 2, response_ticks: 8 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtsSection {
    pub min_chunk_words: usize,
    pub word_duration_ms: f64,
}

impl Default for TtsSection {
    fn default() -> Self {
        Self { min_chunk_words: 5, word_duration_ms: 400.0 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FastPathSection {
    pub hidden_dim: usize,
    pub verifier_latency_ms: f64,
    pub draft_source: String,
    pub draft_latency: DraftTiming,
    pub bad_rate: f64,
    pub cluster_separation: f64,
    pub prefix_file: Option<PathBuf>,
}

impl Default for FastPathSection {
    fn default() -> Self {
        Self {
            hidden_dim: 896,
            verifier_latency_ms: 10.0,
            draft_source: "context".into(),
            draft_latency: DraftTiming::ConstantTotalMs(71.0),
            bad_rate: 0.054,
            cluster_separation: 6.0,
            prefix_file: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlowPathSection {
    pub backend: String,
    pub endpoint: Option<String>,
    pub words_per_chunk: usize,
    pub asr_latency: LatencyModel,
    pub first_chunk_latency: LatencyModel,
    pub inter_chunk_latency: LatencyModel,
}

impl Default for SlowPathSection {
    fn default() -> Self {
        Self {
            backend: "simulated".into(),
            endpoint: None,
            words_per_chunk: 5,
            asr_latency: LatencyModel::Constant { ms: 250.0 },
            first_chunk_latency: LatencyModel::Constant { ms: 170.0 },
            inter_chunk_latency: LatencyModel::Constant { ms: 200.0 },
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub kind: String,
    pub weights: Option<PathBuf>,
    pub label_drafts: bool,
    pub rule_max_mean_entropy: f64,
    pub rule_flag_repeats: bool,
}

impl Default for GateSection {
    fn default() -> Self {
        Self {
            kind: "rule".into(),
            weights: None,
            label_drafts: true,
            rule_max_mean_entropy: 1.2,
            rule_flag_repeats: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub scripts_dir: Option<PathBuf>,
    pub quality_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub scripts: usize,
    pub exchanges: (usize, usize),
    pub user_turn_words: (usize, usize),
    pub agent_turn_words: (usize, usize),
    pub inter_turn_silence_ms: f64,
    pub interruption_truncation_range: (f64, f64),
    pub interruption_overlap_ms: f64,
    pub interruption_rate: f64,
    pub backchannel_rate: f64,
    pub pause_insertion_rate: f64,
    pub pause_ticks: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let injection = InjectionConfig::default();
        let template = TemplateScriptConfig::default();
        Self {
            scripts: 100,
            exchanges: template.exchanges,
            user_turn_words: template.user_turn_words,
            agent_turn_words: template.agent_turn_words,
            inter_turn_silence_ms: template.inter_turn_silence_ms,
            interruption_truncation_range: injection.interruption_truncation_range,
            interruption_overlap_ms: injection.interruption_overlap_ms,
            interruption_rate: injection.interruption_rate,
            backchannel_rate: injection.backchannel_rate,
            pause_insertion_rate: injection.pause_insertion_rate,
            pause_ticks: injection.pause_ticks,
        }
    }
}

/// A profile resolved against its base directory: ready-to-run session
/// settings plus corpus generation parameters.
#[derive(Debug, Clone)]
pub struct ResolvedProfile {
    pub name: String,
    pub session: SessionConfig,
    pub corpus: CorpusConfig,
    pub scripts_dir: Option<PathBuf>,
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let file: ConfigFile = toml::from_str(&text)?;
    Ok(file)
}

impl ConfigFile {
    /// Resolves one named profile. `base` anchors relative paths (usually
    /// the config file's directory) and `seed_override` lets the environment
    /// pin a seed without editing the file.
    pub fn resolve(
        &self,
        profile_name: &str,
        base: &Path,
        seed_override: Option<u64>,
    ) -> Result<ResolvedProfile, ConfigError> {
        let profile = self
            .profiles
            .get(profile_name)
            .ok_or_else(|| ConfigError::MissingProfile(profile_name.to_string()))?;
        let invalid = |message: String| ConfigError::Invalid {
            profile: profile_name.to_string(),
            message,
        };

        if profile.tick_ms != TICK_MS {
            return Err(invalid(format!(
                "tick_ms is fixed at {TICK_MS}; got {}",
                profile.tick_ms
            )));
        }
        if !(0.0..=1.0).contains(&profile.threshold) {
            return Err(invalid(format!("threshold {} outside [0, 1]", profile.threshold)));
        }

        let seed = seed_override.unwrap_or(profile.seed);
        let mode = match profile.mode.as_str() {
            "relay" => RunMode::Relay,
            "cascaded" => RunMode::Cascaded,
            "s2s-only" => RunMode::S2sOnly,
            other => return Err(invalid(format!("unknown mode {other:?}"))),
        };
        let policy = match profile.policy.kind.as_str() {
            "scripted" => PolicySpec::Scripted,
            "heuristic" => PolicySpec::Heuristic {
                silence_ticks_to_respond: profile.policy.silence_ticks_to_respond,
                response_ticks: profile.policy.response_ticks,
            },
            other => return Err(invalid(format!("unknown policy {other:?}"))),
        };

        let resolve_path = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        let require_exists = |p: &PathBuf, what: &str| -> Result<PathBuf, ConfigError> {
            let full = resolve_path(p);
            if full.exists() {
                Ok(full)
            } else {
                Err(invalid(format!("{what} {} does not exist", full.display())))
            }
        };

        let rule = RuleLabelOracle {
            max_mean_entropy_nats: profile.gate.rule_max_mean_entropy,
            flag_immediate_repeats: profile.gate.rule_flag_repeats,
        };
        let gate = match profile.gate.kind.as_str() {
            "rule" => GateSpec::Rule(rule),
            "always-commit" => GateSpec::AlwaysCommit,
            "always-fallback" => GateSpec::AlwaysFallback,
            "model" => {
                let model = match &profile.gate.weights {
                    Some(path) => {
                        let full = require_exists(path, "gate weights")?;
                        load_weights(&full)
                            .map_err(|e| invalid(format!("gate weights: {e}")))?
                    }
                    None => VerifierModel::init_seeded(
                        VerifierConfig {
                            hidden_dim: profile.fast_path.hidden_dim,
                            ..Default::default()
                        },
                        seed,
                    )
                    .map_err(|e| invalid(format!("gate init: {e}")))?,
                };
                GateSpec::Model(Box::new(model))
            }
            other => return Err(invalid(format!("unknown gate kind {other:?}"))),
        };
        if let GateSpec::Model(model) = &gate {
            if profile.prefix_len > model.config.max_prefix_len {
                return Err(invalid(format!(
                    "prefix_len {} exceeds the gate's maximum {}",
                    profile.prefix_len, model.config.max_prefix_len
                )));
            }
        }
        if profile.prefix_len == 0 {
            return Err(invalid("prefix_len must be at least 1".into()));
        }

        let draft_source = match profile.fast_path.draft_source.as_str() {
            "context" => DraftSourceSpec::Context,
            "stochastic" => DraftSourceSpec::Stochastic {
                bad_rate: profile.fast_path.bad_rate,
                cluster_separation: profile.fast_path.cluster_separation,
            },
            "prefix-file" => {
                let path = profile.fast_path.prefix_file.as_ref().ok_or_else(|| {
                    invalid("draft_source = \"prefix-file\" needs fast_path.prefix_file".into())
                })?;
                let full = require_exists(path, "prefix file")?;
                let text = std::fs::read_to_string(&full)?;
                DraftSourceSpec::PrefixFile { text }
            }
            other => return Err(invalid(format!("unknown draft source {other:?}"))),
        };

        let slow_backend = match profile.slow_path.backend.as_str() {
            "simulated" => SlowBackendSpec::Simulated,
            "external" => {
                let endpoint = profile.slow_path.endpoint.clone().ok_or_else(|| {
                    invalid("backend = \"external\" needs slow_path.endpoint".into())
                })?;
                SlowBackendSpec::External { endpoint }
            }
            other => return Err(invalid(format!("unknown slow-path backend {other:?}"))),
        };

        let quality_labels = match &profile.paths.quality_labels {
            Some(path) => {
                let full = require_exists(path, "quality label file")?;
                let oracle = FileLabelOracle::from_path(&full)
                    .map_err(|e| invalid(format!("quality labels: {e}")))?;
                Some(oracle.quality_scores().clone())
            }
            None => None,
        };
        let scripts_dir = match &profile.paths.scripts_dir {
            Some(dir) => Some(require_exists(dir, "scripts directory")?),
            None => None,
        };

        if profile.tts.min_chunk_words == 0 {
            return Err(invalid("tts.min_chunk_words must be at least 1".into()));
        }
        if profile.tts.word_duration_ms <= 0.0 {
            return Err(invalid("tts.word_duration_ms must be positive".into()));
        }

        let session = SessionConfig {
            mode,
            seed,
            prefix_len: profile.prefix_len,
            backchannel_prefix_len: profile.backchannel_prefix_len,
            threshold: profile.threshold,
            sink: TtsSinkModel::new(profile.tts.min_chunk_words, profile.tts.word_duration_ms),
            hidden_dim: profile.fast_path.hidden_dim,
            draft_timing: profile.fast_path.draft_latency,
            verifier_latency_ms: profile.fast_path.verifier_latency_ms,
            asr_latency: profile.slow_path.asr_latency,
            first_chunk_latency: profile.slow_path.first_chunk_latency,
            inter_chunk_latency: profile.slow_path.inter_chunk_latency,
            words_per_chunk: profile.slow_path.words_per_chunk,
            gate,
            draft_labeler: if profile.gate.label_drafts {
                DraftLabeler::Rule(rule)
            } else {
                DraftLabeler::None
            },
            draft_source,
            slow_backend,
            policy,
            tolerance_frames: profile.tolerance_frames,
            quality_labels,
            realtime: profile.realtime,
        };

        let corpus = CorpusConfig {
            scripts: profile.corpus.scripts,
            template: TemplateScriptConfig {
                exchanges: profile.corpus.exchanges,
                user_turn_words: profile.corpus.user_turn_words,
                agent_turn_words: profile.corpus.agent_turn_words,
                inter_turn_silence_ms: profile.corpus.inter_turn_silence_ms,
            },
            injection: InjectionConfig {
                interruption_truncation_range: profile.corpus.interruption_truncation_range,
                interruption_overlap_ms: profile.corpus.interruption_overlap_ms,
                inter_turn_silence_ms: profile.corpus.inter_turn_silence_ms,
                interruption_rate: profile.corpus.interruption_rate,
                backchannel_rate: profile.corpus.backchannel_rate,
                pause_insertion_rate: profile.corpus.pause_insertion_rate,
                pause_ticks: profile.corpus.pause_ticks,
                word_duration_ms: profile.tts.word_duration_ms,
                seed,
            },
            seed,
        };

        Ok(ResolvedProfile {
            name: profile_name.to_string(),
            session,
            corpus,
            scripts_dir,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(profile_body: &str) -> String {
        format!("schema = 1\n\n[profiles.test]\n{profile_body}\n")
    }

    #[test]
    fn minimal_profile_resolves_with_defaults() {
        let file: ConfigFile = toml::from_str(&minimal("")).unwrap();
        let resolved = file.resolve("test", Path::new("."), None).unwrap();
        assert_eq!(resolved.session.prefix_len, 5);
        assert_eq!(resolved.session.threshold, 0.5);
        assert_eq!(resolved.session.verifier_latency_ms, 10.0);
        assert!(matches!(resolved.session.gate, GateSpec::Rule(_)));
    }

    #[test]
    fn unknown_profile_is_an_error() {
        let file: ConfigFile = toml::from_str(&minimal("")).unwrap();
        assert!(matches!(
            file.resolve("nope", Path::new("."), None),
            Err(ConfigError::MissingProfile(_))
        ));
    }

    #[test]
    fn threshold_and_prefix_bounds_are_checked() {
        let file: ConfigFile = toml::from_str(&minimal("threshold = 1.5")).unwrap();
        assert!(file.resolve("test", Path::new("."), None).is_err());

        let file: ConfigFile =
            toml::from_str(&minimal("prefix_len = 9\n[profiles.test.gate]\nkind = \"model\""))
                .unwrap();
        let err = file.resolve("test", Path::new("."), None).unwrap_err();
        assert!(err.to_string().contains("exceeds"));
    }

    #[test]
    fn tick_grid_is_pinned() {
        let file: ConfigFile = toml::from_str(&minimal("tick_ms = 100")).unwrap();
        let err = file.resolve("test", Path::new("."), None).unwrap_err();
        assert!(err.to_string().contains("tick_ms"));
    }

    #[test]
    fn missing_referenced_files_fail_at_load() {
        let body = "[profiles.test.paths]\nscripts_dir = \"does-not-exist\"";
        let file: ConfigFile = toml::from_str(&minimal(body)).unwrap();
        let err = file.resolve("test", Path::new("/tmp"), None).unwrap_err();
        assert!(err.to_string().contains("does not exist"));
    }

    #[test]
    fn seed_override_wins() {
        let file: ConfigFile = toml::from_str(&minimal("seed = 7")).unwrap();
        let a = file.resolve("test", Path::new("."), None).unwrap();
        assert_eq!(a.session.seed, 7);
        let b = file.resolve("test", Path::new("."), Some(99)).unwrap();
        assert_eq!(b.session.seed, 99);
        assert_eq!(b.corpus.seed, 99);
    }

    #[test]
    fn latency_models_deserialize_both_shapes() {
        let body = r#"
[profiles.test.slow_path]
asr_latency = { constant = { ms = 250.0 } }
first_chunk_latency = { log_normal = { mu_ln_ms = 6.0, sigma_ln = 0.4 } }
"#;
        let file: ConfigFile = toml::from_str(&minimal(body)).unwrap();
        let resolved = file.resolve("test", Path::new("."), None).unwrap();
        assert_eq!(resolved.session.asr_latency, LatencyModel::Constant { ms: 250.0 });
        assert!(matches!(
            resolved.session.first_chunk_latency,
            LatencyModel::LogNormal { .. }
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let result: Result<ConfigFile, _> = toml::from_str(&minimal("not_a_field = 3"));
        assert!(result.is_err());
    }

    #[test]
    fn external_backend_needs_endpoint() {
        let body = "[profiles.test.slow_path]\nbackend = \"external\"";
        let file: ConfigFile = toml::from_str(&minimal(body)).unwrap();
        assert!(file.resolve("test", Path::new("."), None).is_err());
    }
}
