//! Versioned structured-text weights container.
//!
//! Named tensors with explicit dimensions and a parameter-count footer.
//! Values are written with Rust's shortest-round-trip float formatting, so a
//! save/load cycle reproduces every weight bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use super::net::{ParamVector, VerifierConfig, VerifierError, VerifierModel};

const MAGIC: &str = "verifier-weights v1";

pub fn save_weights(model: &VerifierModel, path: &Path) -> Result<(), VerifierError> {
    std::fs::write(path, format_weights(model))?;
    Ok(())
}

pub fn format_weights(model: &VerifierModel) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let c = &model.config;
    let _ = writeln!(out, "config hidden_dim {}", c.hidden_dim);
    let _ = writeln!(out, "config proj_dim {}", c.proj_dim);
    let _ = writeln!(out, "config ff_width {}", c.ff_width);
    let _ = writeln!(out, "config max_prefix_len {}", c.max_prefix_len);
    let _ = writeln!(out, "config ln_epsilon {}", c.ln_epsilon);
    for spec in model.params.specs() {
        let _ = writeln!(out, "tensor {} {} {}", spec.name, spec.rows, spec.cols);
        let data = model.params.tensor(spec.name);
        for row in data.chunks(spec.cols) {
            let mut line = String::new();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{v}");
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    let _ = writeln!(out, "params {}", model.param_count());
    out
}

pub fn load_weights(path: &Path) -> Result<VerifierModel, VerifierError> {
    parse_weights(&std::fs::read_to_string(path)?)
}

pub fn parse_weights(text: &str) -> Result<VerifierModel, VerifierError> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: String| VerifierError::WeightsFormat(format!("line {}: {message}", line + 1));

    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        Some((i, l)) => return Err(bad(i, format!("expected {MAGIC:?}, got {l:?}"))),
        None => return Err(VerifierError::WeightsFormat("empty file".into())),
    }

    let mut hidden_dim = None;
    let mut proj_dim = None;
    let mut ff_width = None;
    let mut max_prefix_len = None;
    let mut ln_epsilon = None;

    let mut pending: Option<(usize, &str)> = None;
    for (i, raw) in lines.by_ref() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("config") => {
                let key = parts.next().ok_or_else(|| bad(i, "config key missing".into()))?;
                let value = parts.next().ok_or_else(|| bad(i, "config value missing".into()))?;
                match key {
                    "hidden_dim" => hidden_dim = Some(value.parse().map_err(|_| bad(i, format!("bad usize {value:?}")))?),
                    "proj_dim" => proj_dim = Some(value.parse().map_err(|_| bad(i, format!("bad usize {value:?}")))?),
                    "ff_width" => ff_width = Some(value.parse().map_err(|_| bad(i, format!("bad usize {value:?}")))?),
                    "max_prefix_len" => max_prefix_len = Some(value.parse().map_err(|_| bad(i, format!("bad usize {value:?}")))?),
                    "ln_epsilon" => ln_epsilon = Some(value.parse().map_err(|_| bad(i, format!("bad float {value:?}")))?),
                    other => return Err(bad(i, format!("unknown config key {other:?}"))),
                }
            }
            Some("tensor") | Some("params") => {
                pending = Some((i, line));
                break;
            }
            Some(other) => return Err(bad(i, format!("unexpected {other:?} in header"))),
            None => unreachable!(),
        }
    }

    let config = VerifierConfig {
        hidden_dim: hidden_dim.ok_or_else(|| VerifierError::WeightsFormat("missing hidden_dim".into()))?,
        proj_dim: proj_dim.ok_or_else(|| VerifierError::WeightsFormat("missing proj_dim".into()))?,
        ff_width: ff_width.ok_or_else(|| VerifierError::WeightsFormat("missing ff_width".into()))?,
        max_prefix_len: max_prefix_len
            .ok_or_else(|| VerifierError::WeightsFormat("missing max_prefix_len".into()))?,
        ln_epsilon: ln_epsilon.ok_or_else(|| VerifierError::WeightsFormat("missing ln_epsilon".into()))?,
    };
    config.validate()?;
    let mut params = ParamVector::zeros(&config);
    let expected_specs: Vec<_> = params.specs().to_vec();

    let mut all_lines: Vec<(usize, &str)> = Vec::new();
    if let Some((i, l)) = pending {
        all_lines.push((i, l));
    }
    all_lines.extend(lines.map(|(i, l)| (i, l.trim())).filter(|(_, l)| !l.is_empty()));

    let mut cursor = 0usize;
    let mut footer_count: Option<usize> = None;
    for spec in &expected_specs {
        let (i, header) = all_lines
            .get(cursor)
            .copied()
            .ok_or_else(|| VerifierError::WeightsFormat(format!("missing tensor {}", spec.name)))?;
        cursor += 1;
        let expected_header = format!("tensor {} {} {}", spec.name, spec.rows, spec.cols);
        if header != expected_header {
            return Err(bad(i, format!("expected {expected_header:?}, got {header:?}")));
        }
        let dest = params.tensor_mut(spec.name);
        for r in 0..spec.rows {
            let (i, row) = all_lines
                .get(cursor)
                .copied()
                .ok_or_else(|| VerifierError::WeightsFormat(format!("{}: missing row {r}", spec.name)))?;
            cursor += 1;
            let mut count = 0;
            for (c, token) in row.split_whitespace().enumerate() {
                if c >= spec.cols {
                    return Err(bad(i, format!("{}: row {r} has extra columns", spec.name)));
                }
                dest[r * spec.cols + c] =
                    token.parse().map_err(|_| bad(i, format!("bad float {token:?}")))?;
                count += 1;
            }
            if count != spec.cols {
                return Err(bad(i, format!("{}: row {r} has {count} of {} columns", spec.name, spec.cols)));
            }
        }
    }
    if let Some((i, line)) = all_lines.get(cursor).copied() {
        let mut parts = line.split_whitespace();
        if parts.next() == Some("params") {
            let value = parts.next().ok_or_else(|| bad(i, "missing parameter count".into()))?;
            footer_count = Some(value.parse().map_err(|_| bad(i, format!("bad count {value:?}")))?);
            cursor += 1;
        }
    }
    if cursor != all_lines.len() {
        let (i, line) = all_lines[cursor];
        return Err(bad(i, format!("trailing content {line:?}")));
    }
    let footer = footer_count.ok_or_else(|| VerifierError::WeightsFormat("missing params footer".into()))?;
    if footer != params.len() {
        return Err(VerifierError::WeightsFormat(format!(
            "parameter-count footer {footer} does not match layout {}",
            params.len()
        )));
    }

    Ok(VerifierModel { config, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::net::VerifierConfig;

    fn small_model(seed: u64) -> VerifierModel {
        VerifierModel::init_seeded(
            VerifierConfig { hidden_dim: 10, proj_dim: 4, ff_width: 6, max_prefix_len: 3, ln_epsilon: 1e-5 },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = small_model(42);
        let text = format_weights(&model);
        let loaded = parse_weights(&text).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.params.as_slice().len(), model.params.as_slice().len());
        for (a, b) in loaded.params.as_slice().iter().zip(model.params.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gate.weights");
        let model = small_model(7);
        save_weights(&model, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn footer_mismatch_is_rejected() {
        let model = small_model(1);
        let text = format_weights(&model);
        let broken = text.replace(&format!("params {}", model.param_count()), "params 9");
        assert!(matches!(parse_weights(&broken), Err(VerifierError::WeightsFormat(_))));
    }

    #[test]
    fn missing_magic_is_rejected() {
        assert!(parse_weights("not-a-weights-file\n").is_err());
        assert!(parse_weights("").is_err());
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let model = small_model(2);
        let text = format_weights(&model);
        let cut: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(parse_weights(&cut).is_err());
    }
}
