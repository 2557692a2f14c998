// SPDX-License-Identifier: MIT OR Apache-2.0

//! Straight-line reference forward pass.
//!
//! Independent oracle for the production forward implementation: plain
//! per-position loops over `Vec<Vec<f32>>`, no shared kernels, no taps.
//! Conventions mirror the documented checkpoint format: GPT-2 `[in, out]`
//! projection weights, pre-norm blocks, biased layer-norm variance, GELU
//! tanh approximation, causal softmax with max subtraction, optional untied
//! `lm_head.weight` (token embedding reused otherwise).

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use actsteer_core::container::RawTensor;
use actsteer_core::model::ModelSpec;

/// Logits for every position plus last-token activations per element class.
pub struct RefOutput {
    /// `[seq_len][vocab_size]`
    pub logits: Vec<Vec<f32>>,
    /// Per layer: residual stream after the full block, at the last token.
    pub hidden_last: Vec<Vec<f32>>,
    /// Per layer: concatenated per-head attention outputs (pre-projection),
    /// at the last token.
    pub head_last: Vec<Vec<f32>>,
    /// Per layer: post-GELU feed-forward activations, at the last token.
    pub neuron_last: Vec<Vec<f32>>,
}

fn norm_row(x: &[f32], gamma: &[f32], beta: &[f32], eps: f32) -> Vec<f32> {
    let n = x.len() as f32;
    let mut mean = 0.0;
    for &v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for &v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let inv = 1.0 / (var + eps).sqrt();
    (0..x.len())
        .map(|i| (x[i] - mean) * inv * gamma[i] + beta[i])
        .collect()
}

fn gelu_tanh(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044715 * x * x * x)).tanh())
}

/// `y = x W + b` for a single row, `W` stored `[in, out]` row-major.
fn affine_row(x: &[f32], w: &RawTensor, b: &RawTensor) -> Vec<f32> {
    let out_dim = w.shape[1];
    let mut y = b.data.clone();
    for (i, &xv) in x.iter().enumerate() {
        let row = &w.data[i * out_dim..(i + 1) * out_dim];
        for j in 0..out_dim {
            y[j] += xv * row[j];
        }
    }
    debug_assert_eq!(y.len(), out_dim);
    y
}

/// Reference forward pass. Panics on malformed inputs; validation is the
/// production code's job, not the oracle's.
pub fn forward(
    spec: &ModelSpec,
    tensors: &BTreeMap<String, RawTensor>,
    tokens: &[u32],
) -> RefOutput {
    let d = spec.d_model;
    let dh = spec.d_model / spec.n_heads;
    let seq = tokens.len();
    let eps = spec.layernorm_epsilon as f32;
    let t = |name: &str| &tensors[name];

    // Embedding.
    let wte = t("wte");
    let wpe = t("wpe");
    let mut x: Vec<Vec<f32>> = Vec::with_capacity(seq);
    for (p, &tok) in tokens.iter().enumerate() {
        let te = &wte.data[tok as usize * d..(tok as usize + 1) * d];
        let pe = &wpe.data[p * d..(p + 1) * d];
        x.push((0..d).map(|i| te[i] + pe[i]).collect());
    }

    let mut hidden_last = Vec::new();
    let mut head_last = Vec::new();
    let mut neuron_last = Vec::new();

    for l in 0..spec.n_layers {
        // Attention.
        let g1 = t(&format!("h.{l}.ln_1.weight"));
        let b1 = t(&format!("h.{l}.ln_1.bias"));
        let qkv: Vec<Vec<f32>> = x
            .iter()
            .map(|row| {
                affine_row(
                    &norm_row(row, &g1.data, &b1.data, eps),
                    t(&format!("h.{l}.attn.c_attn.weight")),
                    t(&format!("h.{l}.attn.c_attn.bias")),
                )
            })
            .collect();

        let mut head_out: Vec<Vec<f32>> = vec![vec![0.0; d]; seq];
        for h in 0..spec.n_heads {
            for p in 0..seq {
                let q = &qkv[p][h * dh..h * dh + dh];
                let mut scores = Vec::with_capacity(p + 1);
                for j in 0..=p {
                    let k = &qkv[j][d + h * dh..d + h * dh + dh];
                    let mut s = 0.0;
                    for i in 0..dh {
                        s += q[i] * k[i];
                    }
                    scores.push(s / (dh as f32).sqrt());
                }
                let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let mut denom = 0.0;
                for s in &mut scores {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                for (j, s) in scores.iter().enumerate() {
                    let w = s / denom;
                    let v = &qkv[j][2 * d + h * dh..2 * d + h * dh + dh];
                    for i in 0..dh {
                        head_out[p][h * dh + i] += w * v[i];
                    }
                }
            }
        }
        head_last.push(head_out[seq - 1].clone());

        for p in 0..seq {
            let proj = affine_row(
                &head_out[p],
                t(&format!("h.{l}.attn.c_proj.weight")),
                t(&format!("h.{l}.attn.c_proj.bias")),
            );
            for i in 0..d {
                x[p][i] += proj[i];
            }
        }

        // Feed-forward.
        let g2 = t(&format!("h.{l}.ln_2.weight"));
        let b2 = t(&format!("h.{l}.ln_2.bias"));
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(seq);
        for p in 0..seq {
            let mut a = affine_row(
                &norm_row(&x[p], &g2.data, &b2.data, eps),
                t(&format!("h.{l}.mlp.c_fc.weight")),
                t(&format!("h.{l}.mlp.c_fc.bias")),
            );
            for v in &mut a {
                *v = gelu_tanh(*v);
            }
            acts.push(a);
        }
        neuron_last.push(acts[seq - 1].clone());
        for p in 0..seq {
            let proj = affine_row(
                &acts[p],
                t(&format!("h.{l}.mlp.c_proj.weight")),
                t(&format!("h.{l}.mlp.c_proj.bias")),
            );
            for i in 0..d {
                x[p][i] += proj[i];
            }
        }

        hidden_last.push(x[seq - 1].clone());
    }

    // Final norm and unembedding (tied to wte when lm_head.weight is absent).
    let gf = t("ln_f.weight");
    let bf = t("ln_f.bias");
    let unembed = tensors.get("lm_head.weight").unwrap_or(wte);
    let mut logits = Vec::with_capacity(seq);
    for p in 0..seq {
        let f = norm_row(&x[p], &gf.data, &bf.data, eps);
        let mut row = Vec::with_capacity(spec.vocab_size);
        for v in 0..spec.vocab_size {
            let u = &unembed.data[v * d..(v + 1) * d];
            let mut acc = 0.0;
            for i in 0..d {
                acc += f[i] * u[i];
            }
            row.push(acc);
        }
        logits.push(row);
    }

    RefOutput {
        logits,
        hidden_last,
        head_last,
        neuron_last,
    }
}
