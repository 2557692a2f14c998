// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer with read/write taps.
//!
//! GPT-2 layout: learned positional embeddings, pre-norm blocks, multi-head
//! causal attention, GELU (tanh approximation) feed-forward. Projection
//! weights follow the GPT-2 `[in, out]` convention, i.e. `y = x W + b`.
//!
//! Three element classes are tappable during the forward pass:
//!
//! * `Hidden` — the residual stream after each full block (width `d_model`);
//! * `Head`   — the concatenated per-head attention outputs before the output
//!   projection (`n_heads` units of width `d_head` per layer);
//! * `Neuron` — the feed-forward activations immediately after the
//!   nonlinearity (width `d_ff`).
//!
//! Taps are applied in place before downstream computation consumes the
//! value, and traces record the value actually used (post-intervention).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, RawTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::steering::{SteeringSpec, TapPlan};
use crate::tensor::Tensor;

/// Architecture hyperparameters of the tapped transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub layernorm_epsilon: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidSpec {
                    detail: format!("{name} must be >= 1"),
                });
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidSpec {
                detail: format!(
                    "d_model = {} is not divisible by n_heads = {}",
                    self.d_model, self.n_heads
                ),
            });
        }
        if !self.layernorm_epsilon.is_finite() || self.layernorm_epsilon <= 0.0 {
            return Err(Error::InvalidSpec {
                detail: "layernorm_epsilon must be > 0".to_string(),
            });
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Names and shapes of the tensors a checkpoint must provide.
    /// `lm_head.weight` is optional; when absent the token embedding is tied.
    pub fn required_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            ("wte".to_string(), vec![self.vocab_size, d]),
            ("wpe".to_string(), vec![self.max_positions, d]),
        ];
        for i in 0..self.n_layers {
            out.push((format!("h.{i}.ln_1.weight"), vec![d]));
            out.push((format!("h.{i}.ln_1.bias"), vec![d]));
            out.push((format!("h.{i}.attn.c_attn.weight"), vec![d, 3 * d]));
            out.push((format!("h.{i}.attn.c_attn.bias"), vec![3 * d]));
            out.push((format!("h.{i}.attn.c_proj.weight"), vec![d, d]));
            out.push((format!("h.{i}.attn.c_proj.bias"), vec![d]));
            out.push((format!("h.{i}.ln_2.weight"), vec![d]));
            out.push((format!("h.{i}.ln_2.bias"), vec![d]));
            out.push((format!("h.{i}.mlp.c_fc.weight"), vec![d, self.d_ff]));
            out.push((format!("h.{i}.mlp.c_fc.bias"), vec![self.d_ff]));
            out.push((format!("h.{i}.mlp.c_proj.weight"), vec![self.d_ff, d]));
            out.push((format!("h.{i}.mlp.c_proj.bias"), vec![d]));
        }
        out.push(("ln_f.weight".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out
    }
}

/// The three tappable element classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementClass {
    Hidden,
    Head,
    Neuron,
}

impl ElementClass {
    /// Width of one layer's trace vector for this class.
    pub fn width(self, spec: &ModelSpec) -> usize {
        match self {
            ElementClass::Hidden => spec.d_model,
            ElementClass::Head => spec.d_model,
            ElementClass::Neuron => spec.d_ff,
        }
    }

    /// Number of maskable units per layer.
    pub fn units_per_layer(self, spec: &ModelSpec) -> usize {
        match self {
            ElementClass::Hidden => spec.d_model,
            ElementClass::Head => spec.n_heads,
            ElementClass::Neuron => spec.d_ff,
        }
    }

    /// Scalars governed by one mask unit (`d_head` for heads, 1 otherwise).
    pub fn unit_width(self, spec: &ModelSpec) -> usize {
        match self {
            ElementClass::Head => spec.d_head(),
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementClass::Hidden => "hidden",
            ElementClass::Head => "head",
            ElementClass::Neuron => "neuron",
        }
    }
}

impl std::str::FromStr for ElementClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(ElementClass::Hidden),
            "head" => Ok(ElementClass::Head),
            "neuron" => Ok(ElementClass::Neuron),
            other => Err(Error::InvalidItem {
                detail: format!("unknown element class `{other}`"),
            }),
        }
    }
}

impl std::fmt::Display for ElementClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-layer activations of one element class read at a single position.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<T> {
    pub element_class: ElementClass,
    pub per_layer: Vec<Vec<T>>,
    pub token_index: usize,
}

/// Full activation record of one forward pass: for every element class, one
/// `[seq_len x width]` matrix per layer.
#[derive(Debug, Clone)]
pub struct TraceSet<T> {
    seq_len: usize,
    hidden: Vec<Tensor<T>>,
    head: Vec<Tensor<T>>,
    neuron: Vec<Tensor<T>>,
}

impl<T: Scalar> TraceSet<T> {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Per-layer `[seq_len x width]` matrices for one class.
    pub fn layers(&self, class: ElementClass) -> &[Tensor<T>] {
        match class {
            ElementClass::Hidden => &self.hidden,
            ElementClass::Head => &self.head,
            ElementClass::Neuron => &self.neuron,
        }
    }

    /// Trace read at an arbitrary position.
    pub fn at(&self, class: ElementClass, position: usize) -> ActivationTrace<T> {
        ActivationTrace {
            element_class: class,
            per_layer: self
                .layers(class)
                .iter()
                .map(|m| m.row(position).to_vec())
                .collect(),
            token_index: position,
        }
    }

    /// Trace read at the final token position.
    pub fn last(&self, class: ElementClass) -> ActivationTrace<T> {
        self.at(class, self.seq_len - 1)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `[seq_len x vocab_size]` logits.
    pub logits: Tensor<T>,
    pub traces: TraceSet<T>,
}

/// Validated named weight tensors plus the model spec that dictates their shapes.
/// Immutable after load; forward calls own their scratch buffers, so sharing
/// across threads is safe.
#[derive(Debug, Clone)]
pub struct WeightStore<T> {
    spec: ModelSpec,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> WeightStore<T> {
    /// Validate raw tensors against the model spec and build a store.
    pub fn from_raw(spec: ModelSpec, raw: BTreeMap<String, RawTensor>) -> Result<Self> {
        spec.validate()?;
        let mut tensors = BTreeMap::new();
        let mut expected = spec.required_tensors();
        // Optional untied unembedding.
        if raw.contains_key("lm_head.weight") {
            expected.push(("lm_head.weight".to_string(), vec![spec.vocab_size, spec.d_model]));
        }
        for (name, shape) in expected {
            let t = raw
                .get(&name)
                .ok_or_else(|| Error::MissingTensor { name: name.clone() })?;
            if t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    actual: t.shape.clone(),
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteTensor { name });
            }
            let data = t.data.iter().map(|&v| T::from_storage(v)).collect();
            tensors.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(WeightStore { spec, tensors })
    }

    /// Parse a tensor container and validate it against the spec.
    pub fn load(spec: ModelSpec, container_bytes: &[u8]) -> Result<Self> {
        let raw = container::read_container(container_bytes)?;
        Self::from_raw(spec, raw)
    }

    /// Load `model.json` + `model.safetensors` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec = ModelSpec::from_json(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let bytes = std::fs::read(dir.join("model.safetensors"))?;
        Self::load(spec, &bytes)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn tensor(&self, name: &str) -> &Tensor<T> {
        &self.tensors[name]
    }

    fn unembedding(&self) -> &Tensor<T> {
        self.tensors
            .get("lm_head.weight")
            .unwrap_or_else(|| self.tensor("wte"))
    }

    fn check_tokens(&self, tokens: &[u32], what: &str) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidItem {
                detail: format!("{what} must not be empty"),
            });
        }
        if tokens.len() > self.spec.max_positions {
            return Err(Error::SequenceTooLong {
                what: what.to_string(),
                len: tokens.len(),
                max: self.spec.max_positions,
            });
        }
        for &t in tokens {
            if t as usize >= self.spec.vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size: self.spec.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Token + positional embedding lookup: row `t` of `wte` plus row `p` of `wpe`.
    pub fn embed(&self, tokens: &[u32]) -> Result<Tensor<T>> {
        self.check_tokens(tokens, "input sequence")?;
        let d = self.spec.d_model;
        let wte = self.tensor("wte");
        let wpe = self.tensor("wpe");
        let mut x = Tensor::zeros(vec![tokens.len(), d]);
        for (p, &t) in tokens.iter().enumerate() {
            let dst = x.row_mut(p);
            let te = wte.row(t as usize);
            let pe = wpe.row(p);
            for i in 0..d {
                dst[i] = te[i] + pe[i];
            }
        }
        Ok(x)
    }

    /// Run the forward pass, treating the whole sequence as the prompt for
    /// the purposes of the tap position policy.
    pub fn forward(&self, tokens: &[u32], taps: Option<&SteeringSpec<T>>) -> Result<ForwardOutput<T>> {
        self.forward_from(tokens, taps, tokens.len())
    }

    /// Forward pass with an explicit prompt boundary. `prompt_len` only
    /// matters for the `LastPromptTokenOnward` position policy, which steers
    /// positions `>= prompt_len - 1`.
    pub fn forward_from(
        &self,
        tokens: &[u32],
        taps: Option<&SteeringSpec<T>>,
        prompt_len: usize,
    ) -> Result<ForwardOutput<T>> {
        self.check_tokens(tokens, "input sequence")?;
        let plan = match taps {
            Some(spec) => Some(crate::steering::install(spec, &self.spec)?),
            None => None,
        };
        let steer_from = prompt_len.saturating_sub(1);
        Ok(self.run(tokens, plan.as_ref(), steer_from))
    }

    fn run(&self, tokens: &[u32], plan: Option<&TapPlan<T>>, steer_from: usize) -> ForwardOutput<T> {
        let spec = &self.spec;
        let seq = tokens.len();
        let d = spec.d_model;
        let eps = T::from_config(spec.layernorm_epsilon);

        let mut x = self.embed(tokens).expect("tokens already validated");

        let mut hidden_traces = Vec::with_capacity(spec.n_layers);
        let mut head_traces = Vec::with_capacity(spec.n_layers);
        let mut neuron_traces = Vec::with_capacity(spec.n_layers);

        let tap = |plan: Option<&TapPlan<T>>, class: ElementClass, layer: usize, pos: usize, row: &mut [T]| {
            if let Some(p) = plan {
                if p.targets(class) && p.position_allowed(pos, steer_from) {
                    p.apply(layer, row);
                }
            }
        };

        for layer in 0..spec.n_layers {
            // Attention sub-layer.
            let normed = self.layer_norm(&x, &format!("h.{layer}.ln_1"), eps);
            let qkv = self.affine(&normed, &format!("h.{layer}.attn.c_attn"));
            let mut heads = self.attention(&qkv);
            for pos in 0..seq {
                tap(plan, ElementClass::Head, layer, pos, heads.row_mut(pos));
            }
            head_traces.push(heads.clone());
            let attn_out = self.affine(&heads, &format!("h.{layer}.attn.c_proj"));
            for pos in 0..seq {
                let dst = x.row_mut(pos);
                let src = attn_out.row(pos);
                for i in 0..d {
                    dst[i] += src[i];
                }
            }

            // Feed-forward sub-layer.
            let normed = self.layer_norm(&x, &format!("h.{layer}.ln_2"), eps);
            let pre = self.affine(&normed, &format!("h.{layer}.mlp.c_fc"));
            let mut act = pre;
            for v in act.data_mut() {
                *v = gelu(*v);
            }
            for pos in 0..seq {
                tap(plan, ElementClass::Neuron, layer, pos, act.row_mut(pos));
            }
            neuron_traces.push(act.clone());
            let ffn_out = self.affine(&act, &format!("h.{layer}.mlp.c_proj"));
            for pos in 0..seq {
                let dst = x.row_mut(pos);
                let src = ffn_out.row(pos);
                for i in 0..d {
                    dst[i] += src[i];
                }
            }

            // Block output = hidden tap site.
            for pos in 0..seq {
                tap(plan, ElementClass::Hidden, layer, pos, x.row_mut(pos));
            }
            hidden_traces.push(x.clone());
        }

        let final_normed = self.layer_norm(&x, "ln_f", eps);
        let unembed = self.unembedding();
        let mut logits = Tensor::zeros(vec![seq, spec.vocab_size]);
        for pos in 0..seq {
            let row = final_normed.row(pos);
            let dst = logits.row_mut(pos);
            for (v, dstv) in dst.iter_mut().enumerate() {
                let urow = unembed.row(v);
                let mut acc = T::zero();
                for i in 0..d {
                    acc += row[i] * urow[i];
                }
                *dstv = acc;
            }
        }

        ForwardOutput {
            logits,
            traces: TraceSet {
                seq_len: seq,
                hidden: hidden_traces,
                head: head_traces,
                neuron: neuron_traces,
            },
        }
    }

    fn layer_norm(&self, x: &Tensor<T>, prefix: &str, eps: T) -> Tensor<T> {
        let gamma = self.tensor(&format!("{prefix}.weight"));
        let beta = self.tensor(&format!("{prefix}.bias"));
        let (rows, cols) = (x.rows(), x.cols());
        let n = T::from_usize(cols).unwrap();
        let mut out = Tensor::zeros(vec![rows, cols]);
        for p in 0..rows {
            let src = x.row(p);
            let mut mean = T::zero();
            for &v in src {
                mean += v;
            }
            mean = mean / n;
            let mut var = T::zero();
            for &v in src {
                let c = v - mean;
                var += c * c;
            }
            var = var / n;
            let inv = T::one() / (var + eps).sqrt();
            let dst = out.row_mut(p);
            for i in 0..cols {
                dst[i] = (src[i] - mean) * inv * gamma.data()[i] + beta.data()[i];
            }
        }
        out
    }

    /// `y = x W + b` with the GPT-2 `[in, out]` weight convention.
    fn affine(&self, x: &Tensor<T>, prefix: &str) -> Tensor<T> {
        let w = self.tensor(&format!("{prefix}.weight"));
        let b = self.tensor(&format!("{prefix}.bias"));
        let (rows, inner, cols) = (x.rows(), x.cols(), w.cols());
        let mut out = Tensor::zeros(vec![rows, cols]);
        for p in 0..rows {
            let src = x.row(p);
            let dst = out.row_mut(p);
            dst.copy_from_slice(b.data());
            for (i, &xv) in src.iter().enumerate().take(inner) {
                let wrow = w.row(i);
                for j in 0..cols {
                    dst[j] += xv * wrow[j];
                }
            }
        }
        out
    }

    /// Causal multi-head attention over a fused `[seq x 3*d_model]` QKV
    /// matrix. Returns the concatenated per-head outputs `[seq x d_model]`
    /// (the head tap site, before the output projection).
    fn attention(&self, qkv: &Tensor<T>) -> Tensor<T> {
        let spec = &self.spec;
        let (seq, d, dh) = (qkv.rows(), spec.d_model, spec.d_head());
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut out = Tensor::zeros(vec![seq, d]);
        let mut scores = vec![T::zero(); seq];
        for h in 0..spec.n_heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for p in 0..seq {
                let q = &qkv.row(p)[qo..qo + dh];
                let mut max = T::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate().take(p + 1) {
                    let k = &qkv.row(j)[ko..ko + dh];
                    let mut acc = T::zero();
                    for i in 0..dh {
                        acc += q[i] * k[i];
                    }
                    *s = acc * scale;
                    if *s > max {
                        max = *s;
                    }
                }
                let mut denom = T::zero();
                for s in scores.iter_mut().take(p + 1) {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                let dst = &mut out.row_mut(p)[qo..qo + dh];
                for (j, &s) in scores.iter().enumerate().take(p + 1) {
                    let w = s / denom;
                    let v = &qkv.row(j)[vo..vo + dh];
                    for i in 0..dh {
                        dst[i] += w * v[i];
                    }
                }
            }
        }
        out
    }

    /// Greedy decoding: append argmax tokens one at a time, ties broken
    /// toward the lowest token id.
    pub fn greedy_decode(
        &self,
        prompt: &[u32],
        max_new: usize,
        taps: Option<&SteeringSpec<T>>,
    ) -> Result<Vec<u32>> {
        self.check_tokens(prompt, "prompt")?;
        if prompt.len() + max_new > self.spec.max_positions {
            return Err(Error::SequenceTooLong {
                what: "prompt plus generation budget".to_string(),
                len: prompt.len() + max_new,
                max: self.spec.max_positions,
            });
        }
        let mut tokens = prompt.to_vec();
        for _ in 0..max_new {
            let out = self.forward_from(&tokens, taps, prompt.len())?;
            let last = out.logits.row(tokens.len() - 1);
            let mut best = 0usize;
            for (v, &logit) in last.iter().enumerate() {
                if logit > last[best] {
                    best = v;
                }
            }
            tokens.push(best as u32);
        }
        Ok(tokens)
    }
}

/// GELU, tanh approximation:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_config(0.7978845608028654); // sqrt(2/pi)
    let a = T::from_config(0.044715);
    let half = T::from_config(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}
