// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded random models for parity and identity testing.

use std::collections::BTreeMap;

use actsteer_core::container::RawTensor;
use actsteer_core::model::ModelSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weights drawn uniformly from `[-0.1, 0.1]`, every tensor the model spec
/// requires plus an untied `lm_head.weight`.
pub fn random_model(seed: u64, spec: &ModelSpec) -> BTreeMap<String, RawTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    let mut names = spec.required_tensors();
    names.push(("lm_head.weight".to_string(), vec![spec.vocab_size, spec.d_model]));
    for (name, shape) in names {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-0.1f32..0.1f32)).collect();
        tensors.insert(name, RawTensor { shape, data });
    }
    tensors
}

/// The 2-layer / d_model 8 / 2-head / d_ff 16 spec used by parity checks.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 32,
        max_positions: 16,
        layernorm_epsilon: 1e-5,
    }
}

/// Random token sequence of the given length.
pub fn random_tokens(seed: u64, len: usize, vocab_size: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(0..vocab_size as u32)).collect()
}
