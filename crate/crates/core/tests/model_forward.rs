// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward-pass behavior: loader validation, embedding lookup, tap purity,
//! greedy decoding, and parity with the straight-line reference oracle.

use std::collections::BTreeMap;

use actsteer_core::container::RawTensor;
use actsteer_core::model::{ElementClass, ModelSpec, WeightStore};
use actsteer_core::steering::SteeringSpec;
use actsteer_fixtures::random_models::{random_model, random_tokens, tiny_spec};
use actsteer_fixtures::reference;

fn tiny_store(seed: u64) -> (ModelSpec, BTreeMap<String, RawTensor>, WeightStore<f32>) {
    let spec = tiny_spec();
    let raw = random_model(seed, &spec);
    let store = WeightStore::from_raw(spec.clone(), raw.clone()).unwrap();
    (spec, raw, store)
}

#[test]
fn well_formed_container_round_trips_through_loader() {
    let spec = tiny_spec();
    let raw = random_model(3, &spec);
    let bytes = actsteer_core::container::write_container(&raw);
    let store = WeightStore::<f32>::load(spec, &bytes).unwrap();
    assert_eq!(store.spec().n_layers, 2);
}

#[test]
fn missing_tensor_is_named() {
    let spec = tiny_spec();
    let mut raw = random_model(3, &spec);
    raw.remove("h.0.attn.c_proj.weight");
    let err = WeightStore::<f32>::from_raw(spec, raw).unwrap_err();
    assert_eq!(err.kind(), "MissingTensor");
    assert!(err.to_string().contains("h.0.attn.c_proj.weight"));
}

#[test]
fn transposed_embedding_is_a_shape_mismatch() {
    let spec = tiny_spec();
    let mut raw = random_model(3, &spec);
    let wte = raw.get_mut("wte").unwrap();
    wte.shape = vec![spec.d_model, spec.vocab_size];
    let err = WeightStore::<f32>::from_raw(spec, raw).unwrap_err();
    assert_eq!(err.kind(), "ShapeMismatch");
    assert!(err.to_string().contains("wte"));
}

#[test]
fn non_finite_weights_rejected() {
    let spec = tiny_spec();
    let mut raw = random_model(3, &spec);
    raw.get_mut("ln_f.weight").unwrap().data[0] = f32::NAN;
    let err = WeightStore::<f32>::from_raw(spec, raw).unwrap_err();
    assert_eq!(err.kind(), "NonFiniteTensor");
}

#[test]
fn embedding_is_token_row_plus_position_row() {
    let (spec, raw, store) = tiny_store(5);
    let t = 7u32;
    let x = store.embed(&[t]).unwrap();
    let wte = &raw["wte"];
    let wpe = &raw["wpe"];
    let d = spec.d_model;
    for i in 0..d {
        let expected = wte.data[t as usize * d + i] + wpe.data[i];
        assert_eq!(x.at(0, i), expected);
    }
}

#[test]
fn token_out_of_range_and_too_long_rejected() {
    let (spec, _, store) = tiny_store(5);
    assert_eq!(
        store.forward(&[spec.vocab_size as u32], None).unwrap_err().kind(),
        "TokenOutOfRange"
    );
    let long = vec![0u32; spec.max_positions + 1];
    assert_eq!(store.forward(&long, None).unwrap_err().kind(), "SequenceTooLong");
}

#[test]
fn tap_free_forward_is_bitwise_reproducible() {
    let (_, _, store) = tiny_store(11);
    let tokens = random_tokens(0, 9, 32);
    let a = store.forward(&tokens, None).unwrap();
    let b = store.forward(&tokens, None).unwrap();
    assert_eq!(a.logits.data(), b.logits.data());
    for class in [ElementClass::Hidden, ElementClass::Head, ElementClass::Neuron] {
        assert_eq!(a.traces.last(class), b.traces.last(class));
    }
}

#[test]
fn off_taps_equal_no_taps_exactly() {
    let (spec, _, store) = tiny_store(13);
    let tokens = random_tokens(1, 7, 32);
    let plain = store.forward(&tokens, None).unwrap();
    for class in [ElementClass::Hidden, ElementClass::Head, ElementClass::Neuron] {
        let off = SteeringSpec::<f32>::off(&spec, class);
        let tapped = store.forward(&tokens, Some(&off)).unwrap();
        assert_eq!(plain.logits.data(), tapped.logits.data());
    }
}

#[test]
fn trace_widths_match_spec_derived_widths() {
    let (spec, _, store) = tiny_store(17);
    let tokens = random_tokens(2, 5, 32);
    let out = store.forward(&tokens, None).unwrap();
    for class in [ElementClass::Hidden, ElementClass::Head, ElementClass::Neuron] {
        let trace = out.traces.last(class);
        assert_eq!(trace.per_layer.len(), spec.n_layers);
        assert_eq!(trace.token_index, tokens.len() - 1);
        for layer in &trace.per_layer {
            assert_eq!(layer.len(), class.width(&spec));
        }
    }
}

#[test]
fn forward_matches_reference_oracle() {
    let spec = tiny_spec();
    for seed in 0..8u64 {
        let raw = random_model(seed, &spec);
        let store = WeightStore::<f32>::from_raw(spec.clone(), raw.clone()).unwrap();
        let tokens = random_tokens(seed + 100, 6, spec.vocab_size);
        let got = store.forward(&tokens, None).unwrap();
        let want = reference::forward(&spec, &raw, &tokens);
        let mut max_dev = 0f32;
        for p in 0..tokens.len() {
            for v in 0..spec.vocab_size {
                max_dev = max_dev.max((got.logits.at(p, v) - want.logits[p][v]).abs());
            }
        }
        assert!(max_dev <= 1e-4, "seed {seed}: max logit deviation {max_dev}");

        let hidden = got.traces.last(ElementClass::Hidden);
        let head = got.traces.last(ElementClass::Head);
        let neuron = got.traces.last(ElementClass::Neuron);
        for l in 0..spec.n_layers {
            for (a, b) in hidden.per_layer[l].iter().zip(&want.hidden_last[l]) {
                assert!((a - b).abs() <= 1e-4);
            }
            for (a, b) in head.per_layer[l].iter().zip(&want.head_last[l]) {
                assert!((a - b).abs() <= 1e-4);
            }
            for (a, b) in neuron.per_layer[l].iter().zip(&want.neuron_last[l]) {
                assert!((a - b).abs() <= 1e-4);
            }
        }
    }
}

#[test]
fn greedy_decode_identity_and_fixed_winner() {
    let (_, _, store) = tiny_store(23);
    let prompt = vec![1u32, 2, 3];
    assert_eq!(store.greedy_decode(&prompt, 0, None).unwrap(), prompt);

    // All-zero weights except a final-norm bias aimed at token 7: logits are
    // constant with token 7 on top, so greedy emits 7 forever.
    let spec = tiny_spec();
    let mut raw = BTreeMap::new();
    let mut names = spec.required_tensors();
    names.push(("lm_head.weight".to_string(), vec![spec.vocab_size, spec.d_model]));
    for (name, shape) in names {
        let numel = shape.iter().product();
        raw.insert(
            name,
            RawTensor {
                shape,
                data: vec![0.0; numel],
            },
        );
    }
    raw.get_mut("ln_f.bias").unwrap().data[0] = 1.0;
    let lm = raw.get_mut("lm_head.weight").unwrap();
    lm.data[7 * spec.d_model] = 5.0;
    let store = WeightStore::<f32>::from_raw(spec, raw).unwrap();
    let out = store.greedy_decode(&[1, 2], 4, None).unwrap();
    assert_eq!(out, vec![1, 2, 7, 7, 7, 7]);
}

#[test]
fn greedy_decode_rejects_overlong_budget() {
    let (spec, _, store) = tiny_store(29);
    let prompt = vec![0u32; spec.max_positions - 1];
    assert_eq!(
        store.greedy_decode(&prompt, 2, None).unwrap_err().kind(),
        "SequenceTooLong"
    );
}

#[test]
fn concurrent_forwards_share_one_store() {
    let (_, _, store) = tiny_store(31);
    let tokens = random_tokens(4, 8, 32);
    let baseline = store.forward(&tokens, None).unwrap().logits;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let store = &store;
                let tokens = tokens.clone();
                s.spawn(move || store.forward(&tokens, None).unwrap().logits)
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap().data(), baseline.data());
        }
    });
}

#[test]
fn f64_instantiation_stays_close_to_f32() {
    let spec = tiny_spec();
    let raw = random_model(41, &spec);
    let s32 = WeightStore::<f32>::from_raw(spec.clone(), raw.clone()).unwrap();
    let s64 = WeightStore::<f64>::from_raw(spec.clone(), raw).unwrap();
    let tokens = random_tokens(6, 6, spec.vocab_size);
    let a = s32.forward(&tokens, None).unwrap();
    let b = s64.forward(&tokens, None).unwrap();
    for (x, y) in a.logits.data().iter().zip(b.logits.data()) {
        assert!((f64::from(*x) - y).abs() < 1e-4);
    }
}
