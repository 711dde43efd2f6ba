//! The prefix-handoff gating network.
//!
//! Per drafted token, the decoder hidden state is projected down, normalized,
//! and activated; a sigmoid gate driven by the calibration features scales it
//! multiplicatively while an additive bypass keeps scalar information flowing
//! even when the gate saturates. Learned positional embeddings and a residual
//! feed-forward block follow, the sequence is pooled by single-query
//! attention, and a linear head with a sigmoid yields a commit confidence in
//! [0, 1].
//!
//! Everything is plain `f64` with explicit loops and a hand-derived backward
//! pass; determinism down to the bit matters more here than speed. GELU uses
//! the exact erf form and every layer-norm site carries its own learned gain
//! and bias with a shared epsilon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fast_path::DraftPrefix;
use crate::seed::{derive_rng, sample_standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    /// Width of the incoming decoder hidden states.
    pub hidden_dim: usize,
    /// Projected width; much smaller than `hidden_dim`.
    pub proj_dim: usize,
    /// Inner width of the feed-forward block.
    pub ff_width: usize,
    /// Longest prefix the position table covers.
    pub max_prefix_len: usize,
    pub ln_epsilon: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self { hidden_dim: 896, proj_dim: 64, ff_width: 128, max_prefix_len: 8, ln_epsilon: 1e-5 }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), VerifierError> {
        if self.proj_dim >= self.hidden_dim {
            return Err(VerifierError::BadConfig(format!(
                "proj_dim {} must be smaller than hidden_dim {}",
                self.proj_dim, self.hidden_dim
            )));
        }
        if self.proj_dim == 0 || self.ff_width == 0 || self.max_prefix_len == 0 {
            return Err(VerifierError::BadConfig("zero-sized dimension".into()));
        }
        if self.ln_epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(VerifierError::BadConfig("ln_epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("hidden dimension mismatch: model expects {expected}, prefix has {got}")]
    HiddenDimMismatch { expected: usize, got: usize },
    #[error("prefix length {n} exceeds the position table ({max})")]
    PrefixTooLong { n: usize, max: usize },
    #[error("prefix is empty")]
    EmptyPrefix,
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("weights file: {0}")]
    WeightsFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One named tensor inside the flat parameter vector. `cols == 1` marks a
/// plain vector (or scalar when `rows == 1` too).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All learned parameters in one flat, deterministic layout. Keeping a single
/// buffer makes the optimizer, the finite-difference checks, and the weights
/// file trivially consistent with each other.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn layout(config: &VerifierConfig) -> Vec<TensorSpec> {
        let d = config.hidden_dim;
        let p = config.proj_dim;
        let f = config.ff_width;
        let n = config.max_prefix_len;
        let shapes: [(&'static str, usize, usize); 20] = [
            ("proj_weight", p, d),
            ("proj_bias", p, 1),
            ("proj_norm_gain", p, 1),
            ("proj_norm_bias", p, 1),
            ("gate_weight", p, 3),
            ("gate_bias", p, 1),
            ("bypass_weight", p, 3),
            ("bypass_bias", p, 1),
            ("pos_embed", n, p),
            ("ff_norm_gain", p, 1),
            ("ff_norm_bias", p, 1),
            ("ff_in_weight", f, p),
            ("ff_in_bias", f, 1),
            ("ff_out_weight", p, f),
            ("ff_out_bias", p, 1),
            ("pool_query", p, 1),
            ("pool_norm_gain", p, 1),
            ("pool_norm_bias", p, 1),
            ("head_weight", p, 1),
            ("head_bias", 1, 1),
        ];
        let mut specs = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            specs.push(TensorSpec { name, rows, cols, offset });
            offset += rows * cols;
        }
        specs
    }

    pub fn zeros(config: &VerifierConfig) -> Self {
        let specs = Self::layout(config);
        let len = specs.iter().map(TensorSpec::len).sum();
        Self { specs, data: vec![0.0; len] }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn spec(&self, name: &str) -> &TensorSpec {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
    }

    pub fn tensor(&self, name: &str) -> &[f64] {
        let s = self.spec(name);
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut [f64] {
        let s = *self.spec(name);
        &mut self.data[s.offset..s.offset + s.len()]
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    normalized: Vec<f64>,
    inv_std: f64,
}

/// Applies layer norm with learned gain/bias; returns the output and a cache
/// for the backward pass.
fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> (Vec<f64>, LnCache) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let out = normalized.iter().zip(gain).zip(bias).map(|((xh, g), b)| g * xh + b).collect();
    (out, LnCache { normalized, inv_std })
}

/// Backward through layer norm: accumulates gain/bias grads and returns the
/// input gradient.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n = dy.len();
    let nf = n as f64;
    let mut dxhat = vec![0.0; n];
    for i in 0..n {
        dgain[i] += dy[i] * cache.normalized[i];
        dbias[i] += dy[i];
        dxhat[i] = dy[i] * gain[i];
    }
    let mean_dxhat = dxhat.iter().sum::<f64>() / nf;
    let mean_dxhat_xhat =
        dxhat.iter().zip(&cache.normalized).map(|(a, b)| a * b).sum::<f64>() / nf;
    (0..n)
        .map(|i| cache.inv_std * (dxhat[i] - mean_dxhat - cache.normalized[i] * mean_dxhat_xhat))
        .collect()
}

const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;

/// Exact (erf-form) GELU.
pub fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_derivative(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
    phi_cdf + x * phi_pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        y[r] = acc;
    }
    y
}

/// dW += dy ⊗ x and dx = Wᵀ dy, fused.
fn matvec_backward(
    w: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    dx: &mut [f64],
) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        let g = dy[r];
        for c in 0..cols {
            drow[c] += g * x[c];
            dx[c] += row[c] * g;
        }
    }
}

#[derive(Debug, Clone)]
struct TokenTrace {
    hidden: Vec<f64>,
    scalars: [f64; 3],
    ln_proj: LnCache,
    proj_pre_act: Vec<f64>,
    projected: Vec<f64>,
    gate: Vec<f64>,
    ln_ff: LnCache,
    ff_norm_out: Vec<f64>,
    ff_pre_act: Vec<f64>,
    ff_act: Vec<f64>,
    token_repr: Vec<f64>,
}

/// Cached intermediates from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    tokens: Vec<TokenTrace>,
    /// Attention pooling weights; non-negative and summing to one.
    pub attention_weights: Vec<f64>,
    ln_pool: LnCache,
    /// The normalized pooled representation fed to the head.
    pub pooled_normalized: Vec<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierModel {
    pub config: VerifierConfig,
    pub params: ParamVector,
}

impl VerifierModel {
    /// Fresh model with seeded fan-in-scaled Gaussian weights, unit norm
    /// gains, and zero biases.
    pub fn init_seeded(config: VerifierConfig, seed: u64) -> Result<Self, VerifierError> {
        config.validate()?;
        let mut params = ParamVector::zeros(&config);
        for spec in params.specs.clone() {
            let mut rng = derive_rng(seed, &["verifier-init", spec.name]);
            let values = params.tensor_mut(spec.name);
            match spec.name {
                "proj_norm_gain" | "ff_norm_gain" | "pool_norm_gain" => values.fill(1.0),
                "proj_bias" | "gate_bias" | "bypass_bias" | "ff_norm_bias" | "proj_norm_bias"
                | "ff_in_bias" | "ff_out_bias" | "pool_norm_bias" | "head_bias" => {
                    values.fill(0.0)
                }
                "pos_embed" => {
                    for v in values.iter_mut() {
                        *v = 0.02 * sample_standard_normal(&mut rng);
                    }
                }
                _ => {
                    let scale = 1.0 / (spec.cols.max(1) as f64).sqrt();
                    for v in values.iter_mut() {
                        *v = scale * sample_standard_normal(&mut rng);
                    }
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Commit confidence for a drafted prefix.
    pub fn forward(&self, prefix: &DraftPrefix) -> Result<f64, VerifierError> {
        Ok(self.forward_trace_prefix(prefix)?.confidence)
    }

    pub fn forward_trace_prefix(&self, prefix: &DraftPrefix) -> Result<ForwardTrace, VerifierError> {
        let scalars: Vec<[f64; 3]> =
            prefix.scalar_features.iter().map(|f| f.as_vector()).collect();
        self.forward_trace(&prefix.hidden_states, &scalars)
    }

    pub fn forward_trace(
        &self,
        hidden_states: &[Vec<f64>],
        scalar_features: &[[f64; 3]],
    ) -> Result<ForwardTrace, VerifierError> {
        let n = hidden_states.len();
        if n == 0 {
            return Err(VerifierError::EmptyPrefix);
        }
        if n > self.config.max_prefix_len {
            return Err(VerifierError::PrefixTooLong { n, max: self.config.max_prefix_len });
        }
        if scalar_features.len() != n {
            return Err(VerifierError::BadConfig(format!(
                "{} hidden states but {} feature rows",
                n,
                scalar_features.len()
            )));
        }
        let d = self.config.hidden_dim;
        let p = self.config.proj_dim;
        let f = self.config.ff_width;
        let eps = self.config.ln_epsilon;
        let params = &self.params;

        let proj_w = params.tensor("proj_weight");
        let proj_b = params.tensor("proj_bias");
        let proj_ng = params.tensor("proj_norm_gain");
        let proj_nb = params.tensor("proj_norm_bias");
        let gate_w = params.tensor("gate_weight");
        let gate_b = params.tensor("gate_bias");
        let bypass_w = params.tensor("bypass_weight");
        let bypass_b = params.tensor("bypass_bias");
        let pos = params.tensor("pos_embed");
        let ff_ng = params.tensor("ff_norm_gain");
        let ff_nb = params.tensor("ff_norm_bias");
        let ff_w1 = params.tensor("ff_in_weight");
        let ff_b1 = params.tensor("ff_in_bias");
        let ff_w2 = params.tensor("ff_out_weight");
        let ff_b2 = params.tensor("ff_out_bias");
        let query = params.tensor("pool_query");
        let pool_ng = params.tensor("pool_norm_gain");
        let pool_nb = params.tensor("pool_norm_bias");
        let head_w = params.tensor("head_weight");
        let head_b = params.tensor("head_bias")[0];

        let mut tokens = Vec::with_capacity(n);
        for (t, h) in hidden_states.iter().enumerate() {
            if h.len() != d {
                return Err(VerifierError::HiddenDimMismatch { expected: d, got: h.len() });
            }
            let s = scalar_features[t];

            // Down-projection, norm, activation.
            let mut pre = matvec(proj_w, p, d, h);
            for (v, b) in pre.iter_mut().zip(proj_b) {
                *v += b;
            }
            let (ln_out, ln_proj) = layer_norm(&pre, proj_ng, proj_nb, eps);
            let projected: Vec<f64> = ln_out.iter().map(|&x| gelu(x)).collect();

            // Scalar gate with additive bypass.
            let mut gate_pre = matvec(gate_w, p, 3, &s);
            for (v, b) in gate_pre.iter_mut().zip(gate_b) {
                *v += b;
            }
            let gate: Vec<f64> = gate_pre.iter().map(|&x| sigmoid(x)).collect();
            let mut bypass = matvec(bypass_w, p, 3, &s);
            for (v, b) in bypass.iter_mut().zip(bypass_b) {
                *v += b;
            }
            let fused: Vec<f64> =
                (0..p).map(|i| projected[i] * gate[i] + bypass[i]).collect();

            // Position embedding plus residual feed-forward (input-normalized).
            let pos_row = &pos[t * p..(t + 1) * p];
            let with_pos: Vec<f64> = (0..p).map(|i| fused[i] + pos_row[i]).collect();
            let (ff_norm_out, ln_ff) = layer_norm(&with_pos, ff_ng, ff_nb, eps);
            let mut ff_pre = matvec(ff_w1, f, p, &ff_norm_out);
            for (v, b) in ff_pre.iter_mut().zip(ff_b1) {
                *v += b;
            }
            let ff_act: Vec<f64> = ff_pre.iter().map(|&x| gelu(x)).collect();
            let mut ff_out = matvec(ff_w2, p, f, &ff_act);
            for (v, b) in ff_out.iter_mut().zip(ff_b2) {
                *v += b;
            }
            let token_repr: Vec<f64> = (0..p).map(|i| with_pos[i] + ff_out[i]).collect();

            tokens.push(TokenTrace {
                hidden: h.clone(),
                scalars: s,
                ln_proj,
                proj_pre_act: ln_out,
                projected,
                gate,
                ln_ff,
                ff_norm_out,
                ff_pre_act: ff_pre,
                ff_act,
                token_repr,
            });
        }

        // Single-query scaled dot-product attention pooling.
        let scale = 1.0 / (p as f64).sqrt();
        let scores: Vec<f64> = tokens
            .iter()
            .map(|tok| tok.token_repr.iter().zip(query).map(|(z, q)| z * q).sum::<f64>() * scale)
            .collect();
        let max_score = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = scores.iter().map(|&e| (e - max_score).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let attention_weights: Vec<f64> = exps.iter().map(|&e| e / denom).collect();

        let mut pooled = vec![0.0; p];
        for (w, tok) in attention_weights.iter().zip(&tokens) {
            for (acc, z) in pooled.iter_mut().zip(&tok.token_repr) {
                *acc += w * z;
            }
        }
        let (pooled_normalized, ln_pool) = layer_norm(&pooled, pool_ng, pool_nb, eps);

        let logit =
            pooled_normalized.iter().zip(head_w).map(|(x, w)| x * w).sum::<f64>() + head_b;
        let confidence = sigmoid(logit);

        Ok(ForwardTrace {
            tokens,
            attention_weights,
            ln_pool,
            pooled_normalized,
            confidence,
        })
    }

    /// Accumulates parameter gradients for `d loss / d confidence` through
    /// the cached forward pass.
    pub fn backward(&self, trace: &ForwardTrace, dloss_dconfidence: f64) -> ParamVector {
        let p = self.config.proj_dim;
        let d = self.config.hidden_dim;
        let f = self.config.ff_width;
        let params = &self.params;
        let mut grads = ParamVector::zeros(&self.config);

        let c = trace.confidence;
        let dlogit = dloss_dconfidence * c * (1.0 - c);

        // Head.
        {
            let head_w_grad = grads.tensor_mut("head_weight");
            for (g, x) in head_w_grad.iter_mut().zip(&trace.pooled_normalized) {
                *g += dlogit * x;
            }
        }
        grads.tensor_mut("head_bias")[0] += dlogit;
        let head_w = params.tensor("head_weight");
        let dln_pool_out: Vec<f64> = (0..p).map(|i| dlogit * head_w[i]).collect();

        // Pool norm.
        let dpooled = {
            let pool_ng = params.tensor("pool_norm_gain").to_vec();
            let mut dgain = vec![0.0; p];
            let mut dbias = vec![0.0; p];
            let dx =
                layer_norm_backward(&dln_pool_out, &trace.ln_pool, &pool_ng, &mut dgain, &mut dbias);
            grads
                .tensor_mut("pool_norm_gain")
                .iter_mut()
                .zip(&dgain)
                .for_each(|(g, v)| *g += v);
            grads
                .tensor_mut("pool_norm_bias")
                .iter_mut()
                .zip(&dbias)
                .for_each(|(g, v)| *g += v);
            dx
        };

        // Attention pooling.
        let n = trace.tokens.len();
        let scale = 1.0 / (p as f64).sqrt();
        let query = params.tensor("pool_query").to_vec();
        let mut dtoken_repr: Vec<Vec<f64>> = vec![vec![0.0; p]; n];
        let mut dscore_terms = vec![0.0; n];
        for t in 0..n {
            let w = trace.attention_weights[t];
            let mut dot = 0.0;
            for i in 0..p {
                dtoken_repr[t][i] += w * dpooled[i];
                dot += dpooled[i] * trace.tokens[t].token_repr[i];
            }
            dscore_terms[t] = dot;
        }
        let weighted_sum: f64 = trace
            .attention_weights
            .iter()
            .zip(&dscore_terms)
            .map(|(w, dw)| w * dw)
            .sum();
        for t in 0..n {
            let de = trace.attention_weights[t] * (dscore_terms[t] - weighted_sum);
            let dquery = grads.tensor_mut("pool_query");
            for (dq, z) in dquery.iter_mut().zip(&trace.tokens[t].token_repr) {
                *dq += de * z * scale;
            }
            for (dz, q) in dtoken_repr[t].iter_mut().zip(&query) {
                *dz += de * q * scale;
            }
        }

        // Per-token path, in reverse for readability (tokens are independent).
        let ff_w2 = params.tensor("ff_out_weight").to_vec();
        let ff_w1 = params.tensor("ff_in_weight").to_vec();
        let ff_ng = params.tensor("ff_norm_gain").to_vec();
        let proj_ng = params.tensor("proj_norm_gain").to_vec();
        let gate_w = params.tensor("gate_weight").to_vec();
        let proj_w = params.tensor("proj_weight").to_vec();

        for (t, tok) in trace.tokens.iter().enumerate() {
            let dz = &dtoken_repr[t];

            // Residual: z = with_pos + ff_out.
            let mut dwith_pos: Vec<f64> = dz.clone();
            let dff_out = dz;

            // FF output affine.
            let mut dff_act = vec![0.0; f];
            matvec_backward(
                &ff_w2,
                p,
                f,
                &tok.ff_act,
                dff_out,
                grads.tensor_mut("ff_out_weight"),
                &mut dff_act,
            );
            grads.tensor_mut("ff_out_bias").iter_mut().zip(dff_out).for_each(|(g, v)| *g += v);

            // FF activation and input affine.
            let dff_pre: Vec<f64> = dff_act
                .iter()
                .zip(&tok.ff_pre_act)
                .map(|(dy, &x)| dy * gelu_derivative(x))
                .collect();
            let mut dff_norm_out = vec![0.0; p];
            matvec_backward(
                &ff_w1,
                f,
                p,
                &tok.ff_norm_out,
                &dff_pre,
                grads.tensor_mut("ff_in_weight"),
                &mut dff_norm_out,
            );
            grads.tensor_mut("ff_in_bias").iter_mut().zip(&dff_pre).for_each(|(g, v)| *g += v);

            // FF input norm feeds from with_pos as well.
            {
                let mut dgain = vec![0.0; p];
                let mut dbias = vec![0.0; p];
                let dx = layer_norm_backward(&dff_norm_out, &tok.ln_ff, &ff_ng, &mut dgain, &mut dbias);
                grads.tensor_mut("ff_norm_gain").iter_mut().zip(&dgain).for_each(|(g, v)| *g += v);
                grads.tensor_mut("ff_norm_bias").iter_mut().zip(&dbias).for_each(|(g, v)| *g += v);
                for i in 0..p {
                    dwith_pos[i] += dx[i];
                }
            }

            // with_pos = fused + pos[t].
            {
                let pos_grad = grads.tensor_mut("pos_embed");
                for i in 0..p {
                    pos_grad[t * p + i] += dwith_pos[i];
                }
            }
            let dfused = &dwith_pos;

            // fused = projected ⊙ gate + bypass.
            let dprojected: Vec<f64> =
                (0..p).map(|i| dfused[i] * tok.gate[i]).collect();
            let dgate: Vec<f64> = (0..p).map(|i| dfused[i] * tok.projected[i]).collect();
            let dbypass = dfused;

            // Bypass affine over the scalar features.
            {
                let mut dscal = [0.0; 3];
                matvec_backward(
                    params.tensor("bypass_weight"),
                    p,
                    3,
                    &tok.scalars,
                    dbypass,
                    grads.tensor_mut("bypass_weight"),
                    &mut dscal,
                );
                grads.tensor_mut("bypass_bias").iter_mut().zip(dbypass).for_each(|(g, v)| *g += v);
            }

            // Gate affine through the sigmoid.
            {
                let dgate_pre: Vec<f64> =
                    (0..p).map(|i| dgate[i] * tok.gate[i] * (1.0 - tok.gate[i])).collect();
                let mut dscal = [0.0; 3];
                matvec_backward(
                    &gate_w,
                    p,
                    3,
                    &tok.scalars,
                    &dgate_pre,
                    grads.tensor_mut("gate_weight"),
                    &mut dscal,
                );
                grads.tensor_mut("gate_bias").iter_mut().zip(&dgate_pre).for_each(|(g, v)| *g += v);
            }

            // Projection activation, norm, and affine.
            let dln_out: Vec<f64> = dprojected
                .iter()
                .zip(&tok.proj_pre_act)
                .map(|(dy, &x)| dy * gelu_derivative(x))
                .collect();
            let dpre = {
                let mut dgain = vec![0.0; p];
                let mut dbias = vec![0.0; p];
                let dx =
                    layer_norm_backward(&dln_out, &tok.ln_proj, &proj_ng, &mut dgain, &mut dbias);
                grads.tensor_mut("proj_norm_gain").iter_mut().zip(&dgain).for_each(|(g, v)| *g += v);
                grads.tensor_mut("proj_norm_bias").iter_mut().zip(&dbias).for_each(|(g, v)| *g += v);
                dx
            };
            let mut dhidden = vec![0.0; d];
            matvec_backward(
                &proj_w,
                p,
                d,
                &tok.hidden,
                &dpre,
                grads.tensor_mut("proj_weight"),
                &mut dhidden,
            );
            grads.tensor_mut("proj_bias").iter_mut().zip(&dpre).for_each(|(g, v)| *g += v);
        }

        grads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Commit,
    Fallback,
}

/// Commit iff the confidence clears the threshold. `threshold` must lie in
/// [0, 1]; anything else is rejected, including 1 + eps.
pub fn decide(
    model: &VerifierModel,
    prefix: &DraftPrefix,
    threshold: f64,
) -> Result<Decision, VerifierError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(VerifierError::InvalidThreshold(threshold));
    }
    let confidence = model.forward(prefix)?;
    Ok(if confidence >= threshold { Decision::Commit } else { Decision::Fallback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::features::ScalarFeatures;

    fn small_config() -> VerifierConfig {
        VerifierConfig { hidden_dim: 8, proj_dim: 4, ff_width: 6, max_prefix_len: 4, ln_epsilon: 1e-5 }
    }

    fn prefix_with(
        config: &VerifierConfig,
        seed: u64,
        n: usize,
    ) -> (Vec<Vec<f64>>, Vec<[f64; 3]>) {
        let mut rng = derive_rng(seed, &["net-test-prefix"]);
        let hidden: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..config.hidden_dim).map(|_| sample_standard_normal(&mut rng)).collect())
            .collect();
        let scalars: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    sample_standard_normal(&mut rng).abs(),
                    -sample_standard_normal(&mut rng).abs(),
                    sample_standard_normal(&mut rng).abs(),
                ]
            })
            .collect();
        (hidden, scalars)
    }

    fn make_prefix(config: &VerifierConfig, seed: u64, n: usize) -> DraftPrefix {
        let (hidden, scalars) = prefix_with(config, seed, n);
        DraftPrefix::new(
            (0..n).map(|i| format!("w{i}")).collect(),
            hidden,
            scalars.into_iter().map(ScalarFeatures::from_vector).collect(),
            50.0,
        )
        .unwrap()
    }

    #[test]
    fn default_config_parameter_count_is_stable() {
        let model = VerifierModel::init_seeded(VerifierConfig::default(), 0).unwrap();
        // 64x896 projection dominates; the exact total is pinned so the
        // weights file footer can be trusted.
        assert_eq!(model.param_count(), 75_521);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 7).unwrap();
        let prefix = make_prefix(&config, 1, 3);
        let a = model.forward(&prefix).unwrap();
        let b = model.forward(&prefix).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    // Attention over a single key is the identity weighting, so the pooled
    // vector equals LayerNorm(z_1) exactly.
    #[test]
    fn single_token_pooling_is_layer_norm_of_token() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 9).unwrap();
        let (hidden, scalars) = prefix_with(&config, 2, 1);
        let trace = model.forward_trace(&hidden, &scalars).unwrap();
        assert_eq!(trace.attention_weights, vec![1.0]);
        let (expected, _) = layer_norm(
            &trace.tokens[0].token_repr,
            model.params.tensor("pool_norm_gain"),
            model.params.tensor("pool_norm_bias"),
            config.ln_epsilon,
        );
        for (a, b) in trace.pooled_normalized.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 11).unwrap();
        let (hidden, scalars) = prefix_with(&config, 3, 4);
        let trace = model.forward_trace(&hidden, &scalars).unwrap();
        assert_eq!(trace.attention_weights.len(), 4);
        assert!(trace.attention_weights.iter().all(|&w| w >= 0.0));
        let sum: f64 = trace.attention_weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gate_saturated_low_still_passes_scalar_information() {
        let config = small_config();
        let mut model = VerifierModel::init_seeded(config, 13).unwrap();
        // Slam the gate shut regardless of input.
        model.params.tensor_mut("gate_bias").fill(-60.0);
        model.params.tensor_mut("gate_weight").fill(0.0);

        let (hidden, mut scalars) = prefix_with(&config, 4, 2);
        let base = model.forward_trace(&hidden, &scalars).unwrap().confidence;
        scalars[0][0] += 1.0;
        let moved = model.forward_trace(&hidden, &scalars).unwrap().confidence;
        assert!(
            (base - moved).abs() > 1e-9,
            "additive bypass must keep scalar sensitivity when the gate saturates"
        );
    }

    #[test]
    fn zeroed_hidden_states_still_react_to_scalars_and_vice_versa() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 15).unwrap();
        let (hidden, scalars) = prefix_with(&config, 5, 2);

        let zero_hidden: Vec<Vec<f64>> = vec![vec![0.0; config.hidden_dim]; 2];
        let a = model.forward_trace(&zero_hidden, &scalars).unwrap().confidence;
        let mut scalars_moved = scalars.clone();
        scalars_moved[1][2] += 0.5;
        let b = model.forward_trace(&zero_hidden, &scalars_moved).unwrap().confidence;
        assert!((a - b).abs() > 1e-12);

        let zero_scalars = vec![[0.0; 3]; 2];
        let c = model.forward_trace(&hidden, &zero_scalars).unwrap().confidence;
        let mut hidden_moved = hidden.clone();
        hidden_moved[0][0] += 0.5;
        let d2 = model.forward_trace(&hidden_moved, &zero_scalars).unwrap().confidence;
        assert!((c - d2).abs() > 1e-12);
    }

    #[test]
    fn position_embeddings_break_permutation_invariance() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 17).unwrap();
        let (hidden, scalars) = prefix_with(&config, 6, 3);
        let swapped_hidden = vec![hidden[1].clone(), hidden[0].clone(), hidden[2].clone()];
        let swapped_scalars = vec![scalars[1], scalars[0], scalars[2]];
        let a = model.forward_trace(&hidden, &scalars).unwrap().confidence;
        let b = model.forward_trace(&swapped_hidden, &swapped_scalars).unwrap().confidence;
        assert!((a - b).abs() > 1e-12);
    }

    #[test]
    fn zero_positions_and_zero_ff_give_permutation_invariance() {
        let config = small_config();
        let mut model = VerifierModel::init_seeded(config, 19).unwrap();
        model.params.tensor_mut("pos_embed").fill(0.0);
        // FF contributes nothing when its output map is zero, so the
        // residual block is the identity.
        model.params.tensor_mut("ff_out_weight").fill(0.0);
        model.params.tensor_mut("ff_out_bias").fill(0.0);

        let (hidden, scalars) = prefix_with(&config, 8, 3);
        let swapped_hidden = vec![hidden[2].clone(), hidden[0].clone(), hidden[1].clone()];
        let swapped_scalars = vec![scalars[2], scalars[0], scalars[1]];
        let a = model.forward_trace(&hidden, &scalars).unwrap().confidence;
        let b = model.forward_trace(&swapped_hidden, &swapped_scalars).unwrap().confidence;
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn shape_errors_are_reported() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 21).unwrap();
        let bad_hidden = vec![vec![0.0; config.hidden_dim + 1]];
        let err = model.forward_trace(&bad_hidden, &[[0.0; 3]]).unwrap_err();
        assert!(matches!(err, VerifierError::HiddenDimMismatch { .. }));

        let (hidden, scalars) = prefix_with(&config, 9, 5);
        let err = model.forward_trace(&hidden, &scalars).unwrap_err();
        assert!(matches!(err, VerifierError::PrefixTooLong { n: 5, max: 4 }));

        assert!(matches!(
            model.forward_trace(&[], &[]),
            Err(VerifierError::EmptyPrefix)
        ));
    }

    #[test]
    fn decide_thresholds_behave_at_boundaries() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 23).unwrap();
        let prefix = make_prefix(&config, 10, 2);
        assert_eq!(decide(&model, &prefix, 0.0).unwrap(), Decision::Commit);
        // Sigmoid output is strictly inside (0, 1) here, so tau = 1 falls back.
        assert_eq!(decide(&model, &prefix, 1.0).unwrap(), Decision::Fallback);
        assert!(matches!(
            decide(&model, &prefix, 1.0 + 1e-9),
            Err(VerifierError::InvalidThreshold(_))
        ));
        assert!(matches!(
            decide(&model, &prefix, -0.1),
            Err(VerifierError::InvalidThreshold(_))
        ));
    }

    // Oracle: central finite differences over every parameter, through the
    // full forward pass and focal loss.
    #[test]
    fn analytic_gradients_match_finite_differences_smoke() {
        use crate::verifier::loss::{focal_loss, FocalLossConfig};
        use crate::verifier::PrefixLabel;

        let config = small_config();
        let loss_cfg = FocalLossConfig::default();
        for (seed, label) in [(31u64, PrefixLabel::Good), (37, PrefixLabel::Bad)] {
            let model = VerifierModel::init_seeded(config, seed).unwrap();
            let (hidden, scalars) = prefix_with(&config, seed + 100, 3);

            let trace = model.forward_trace(&hidden, &scalars).unwrap();
            let loss = focal_loss(trace.confidence, label, &loss_cfg);
            let grads = model.backward(&trace, loss.grad_wrt_confidence);

            let h = 1e-4;
            let mut probe = model.clone();
            let total = probe.params.len();
            for i in 0..total {
                let original = probe.params.as_slice()[i];
                probe.params.as_mut_slice()[i] = original + h;
                let up = focal_loss(
                    probe.forward_trace(&hidden, &scalars).unwrap().confidence,
                    label,
                    &loss_cfg,
                )
                .loss;
                probe.params.as_mut_slice()[i] = original - h;
                let down = focal_loss(
                    probe.forward_trace(&hidden, &scalars).unwrap().confidence,
                    label,
                    &loss_cfg,
                )
                .loss;
                probe.params.as_mut_slice()[i] = original;

                let fd = (up - down) / (2.0 * h);
                let analytic = grads.as_slice()[i];
                let scale = analytic.abs().max(fd.abs());
                let ok = if scale > 1e-6 {
                    ((analytic - fd) / scale).abs() < 1e-4
                } else {
                    (analytic - fd).abs() < 1e-8
                };
                assert!(
                    ok,
                    "seed {seed} param {i}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    // The commit set shrinks monotonically: anything committed at a higher
    // threshold is committed at every lower one.
    #[test]
    fn commit_sets_are_nested_in_threshold() {
        let config = small_config();
        let model = VerifierModel::init_seeded(config, 27).unwrap();
        let prefixes: Vec<DraftPrefix> =
            (0..24).map(|i| make_prefix(&config, 100 + i, 2)).collect();
        let commit_set = |tau: f64| -> Vec<usize> {
            prefixes
                .iter()
                .enumerate()
                .filter(|(_, p)| decide(&model, p, tau).unwrap() == Decision::Commit)
                .map(|(i, _)| i)
                .collect()
        };
        let mut previous = commit_set(0.0);
        assert_eq!(previous.len(), prefixes.len());
        for tau in [0.25, 0.5, 0.75, 1.0] {
            let current = commit_set(tau);
            assert!(current.iter().all(|i| previous.contains(i)), "tau {tau} not nested");
            assert!(current.len() <= previous.len());
            previous = current;
        }
    }

    #[test]
    fn gelu_matches_reference_points() {
        // gelu(0) = 0, gelu is odd-ish around zero: gelu(x) + gelu(-x) = x - x = ...
        assert_eq!(gelu(0.0), 0.0);
        // Large positive passes through, large negative vanishes.
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0).abs() < 1e-9);
        // Hand value: gelu(1) = 0.5 * (1 + erf(1/sqrt(2))) = 0.8413447460685429.
        assert!((gelu(1.0) - 0.8413447460685429).abs() < 1e-12);
    }
}
