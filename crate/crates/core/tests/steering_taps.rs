// SPDX-License-Identifier: MIT OR Apache-2.0

//! In-pass steering behavior: locality at the tap site, exact identities,
//! layer-major slicing, and the adaptive-rule properties.

use actsteer_core::mask::{IdentificationMask, Layout, MeanDifference};
use actsteer_core::model::{ElementClass, WeightStore};
use actsteer_core::steering::{apply_adaptive, install, PositionPolicy, SteeringSpec};
use actsteer_fixtures::random_models::{random_model, random_tokens, tiny_spec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store(seed: u64) -> WeightStore<f32> {
    let spec = tiny_spec();
    WeightStore::from_raw(spec.clone(), random_model(seed, &spec)).unwrap()
}

fn random_unit_mask(
    rng: &mut ChaCha8Rng,
    class: ElementClass,
    spec: &actsteer_core::model::ModelSpec,
) -> IdentificationMask {
    let layout = Layout::for_class(spec, class);
    let total = layout.total_units();
    let k = rng.gen_range(1..=total);
    actsteer_core::mask::random_mask(layout, k, rng.gen()).unwrap()
}

#[test]
fn zero_delta_logits_are_bitwise_equal_for_all_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let spec = tiny_spec();
    for round in 0..20u64 {
        let st = store(round);
        let tokens = random_tokens(round + 500, 1 + (round as usize % 12), spec.vocab_size);
        let plain = st.forward(&tokens, None).unwrap();
        for class in [ElementClass::Hidden, ElementClass::Head, ElementClass::Neuron] {
            let mask = random_unit_mask(&mut rng, class, &spec);
            let adaptive = SteeringSpec::adaptive(mask.clone(), 0.0f32);
            let out = st.forward(&tokens, Some(&adaptive)).unwrap();
            assert_eq!(plain.logits.data(), out.logits.data());

            let layout = Layout::for_class(&spec, class);
            let direction = MeanDifference {
                layout,
                values: (0..layout.values_len())
                    .map(|_| rng.gen_range(-1.0f32..1.0))
                    .collect(),
                n_instances: 1,
            };
            let fixed = SteeringSpec::fixed(mask, 0.0f32, direction);
            let out = st.forward(&tokens, Some(&fixed)).unwrap();
            assert_eq!(plain.logits.data(), out.logits.data());
        }
    }
}

#[test]
fn unmasked_units_are_bitwise_unchanged_at_the_tap_site() {
    // Cross-run comparison is only meaningful at the earliest masked layer:
    // everything upstream of it is untouched, so the pre-tap value there
    // equals the plain run's, and the update must leave unmasked units
    // bitwise identical while scaling masked ones by exactly (1 + delta).
    // Later layers legitimately change everywhere, because the intervention
    // propagates downstream.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = tiny_spec();
    for round in 0..20u64 {
        let st = store(round + 100);
        let tokens = random_tokens(round, 1 + (round as usize % 10), spec.vocab_size);
        let plain = st.forward(&tokens, None).unwrap();
        for class in [ElementClass::Hidden, ElementClass::Head, ElementClass::Neuron] {
            let mask = random_unit_mask(&mut rng, class, &spec);
            let delta = rng.gen_range(-0.9f32..3.0);
            let taps = SteeringSpec::adaptive(mask.clone(), delta);
            let steered = st.forward(&tokens, Some(&taps)).unwrap();
            let width = class.unit_width(&spec);
            let first_masked = (0..spec.n_layers)
                .find(|&l| mask.layer_slice(l).iter().any(|&b| b))
                .expect("mask has at least one set bit");
            let a = &plain.traces.last(class).per_layer[first_masked];
            let b = &steered.traces.last(class).per_layer[first_masked];
            for (unit, &bit) in mask.layer_slice(first_masked).iter().enumerate() {
                for i in unit * width..(unit + 1) * width {
                    if bit {
                        assert_eq!(b[i], a[i] * (1.0 + delta));
                    } else {
                        assert_eq!(a[i].to_bits(), b[i].to_bits(), "unmasked unit changed");
                    }
                }
            }
        }
    }
}

#[test]
fn all_zero_mask_leaves_logits_unchanged() {
    let spec = tiny_spec();
    let st = store(9);
    let tokens = random_tokens(3, 8, spec.vocab_size);
    let plain = st.forward(&tokens, None).unwrap();
    for class in [ElementClass::Hidden, ElementClass::Head, ElementClass::Neuron] {
        let mask = IdentificationMask::empty(class, spec.n_layers, class.units_per_layer(&spec));
        let mut taps = SteeringSpec::adaptive(mask, 5.0f32);
        taps.mode = actsteer_core::steering::SteeringMode::Adaptive;
        let out = st.forward(&tokens, Some(&taps)).unwrap();
        assert_eq!(plain.logits.data(), out.logits.data());
    }
}

#[test]
fn mask_slices_are_layer_major() {
    // Masking only layer 1 must leave layer-0 traces bitwise untouched.
    let spec = tiny_spec();
    let st = store(21);
    let tokens = random_tokens(5, 6, spec.vocab_size);
    let plain = st.forward(&tokens, None).unwrap();

    let units = ElementClass::Head.units_per_layer(&spec);
    let layer1_unit = units; // first unit of layer 1 in the flat layout
    let mask =
        IdentificationMask::from_indices(ElementClass::Head, spec.n_layers, units, &[layer1_unit])
            .unwrap();
    let taps = SteeringSpec::adaptive(mask, 1.0f32);
    let steered = st.forward(&tokens, Some(&taps)).unwrap();

    let plain_t = plain.traces.last(ElementClass::Head);
    let steered_t = steered.traces.last(ElementClass::Head);
    assert_eq!(plain_t.per_layer[0], steered_t.per_layer[0]);
    let dh = spec.d_head();
    for i in 0..dh {
        assert_eq!(steered_t.per_layer[1][i], plain_t.per_layer[1][i] * 2.0);
    }
}

#[test]
fn layout_mismatch_is_rejected_at_install() {
    let spec = tiny_spec();
    let mask = IdentificationMask::from_indices(ElementClass::Head, 3, 2, &[0]).unwrap();
    let taps = SteeringSpec::adaptive(mask, 1.0f32);
    assert_eq!(install(&taps, &spec).unwrap_err().kind(), "LayoutMismatch");

    let good = IdentificationMask::from_indices(ElementClass::Head, 2, 2, &[0]).unwrap();
    let mut fixed = SteeringSpec::fixed(
        good,
        1.0f32,
        MeanDifference {
            layout: Layout::for_class(&spec, ElementClass::Head),
            values: vec![0.0; Layout::for_class(&spec, ElementClass::Head).values_len()],
            n_instances: 1,
        },
    );
    fixed.fixed_direction = None;
    assert_eq!(install(&fixed, &spec).unwrap_err().kind(), "LayoutMismatch");
}

#[test]
fn fixed_and_adaptive_disagree_when_activation_differs_from_direction() {
    let spec = tiny_spec();
    let st = store(33);
    let tokens = random_tokens(8, 7, spec.vocab_size);
    let layout = Layout::for_class(&spec, ElementClass::Hidden);
    let mask = actsteer_core::mask::random_mask(layout, 4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let direction = MeanDifference {
        layout,
        values: (0..layout.values_len())
            .map(|_| rng.gen_range(0.5f32..1.5))
            .collect(),
        n_instances: 1,
    };
    let a = st
        .forward(&tokens, Some(&SteeringSpec::adaptive(mask.clone(), 0.8f32)))
        .unwrap();
    let f = st
        .forward(&tokens, Some(&SteeringSpec::fixed(mask, 0.8f32, direction)))
        .unwrap();
    assert_ne!(a.logits.data(), f.logits.data());
}

#[test]
fn position_policy_limits_steering_to_prompt_tail() {
    let spec = tiny_spec();
    let st = store(55);
    let tokens = random_tokens(9, 8, spec.vocab_size);
    let layout = Layout::for_class(&spec, ElementClass::Hidden);
    let mask = actsteer_core::mask::random_mask(layout, 6, 5).unwrap();
    let taps = SteeringSpec::adaptive(mask, 1.5f32)
        .with_positions(PositionPolicy::LastPromptTokenOnward);

    let plain = st.forward(&tokens, None).unwrap();
    // Prompt boundary at position 5: positions 0..4 untouched, 4.. steered.
    let steered = st.forward_from(&tokens, Some(&taps), 5).unwrap();
    for pos in 0..4 {
        assert_eq!(
            plain.traces.at(ElementClass::Hidden, pos).per_layer,
            steered.traces.at(ElementClass::Hidden, pos).per_layer
        );
    }
    assert_ne!(
        plain.traces.at(ElementClass::Hidden, 4).per_layer,
        steered.traces.at(ElementClass::Hidden, 4).per_layer
    );
}

proptest! {
    #[test]
    fn sign_preserved_for_delta_above_minus_one(
        a in proptest::collection::vec(-10.0f32..10.0, 1..40),
        delta in -0.999f32..5.0,
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..a.len()).map(|_| rng.gen_bool(0.5)).collect();
        let out = apply_adaptive(&a, &mask, delta).unwrap();
        for (x, y) in a.iter().zip(&out) {
            prop_assert_eq!(x.signum(), y.signum());
        }
    }

    #[test]
    fn adaptive_commutes_with_power_of_two_scaling(
        a in proptest::collection::vec(-10.0f32..10.0, 1..40),
        delta in -2.0f32..4.0,
        exp in -3i32..6,
        seed in 0u64..100,
    ) {
        let c = (2.0f32).powi(exp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..a.len()).map(|_| rng.gen_bool(0.5)).collect();
        let scaled: Vec<f32> = a.iter().map(|v| v * c).collect();
        let lhs = apply_adaptive(&scaled, &mask, delta).unwrap();
        let rhs: Vec<f32> = apply_adaptive(&a, &mask, delta)
            .unwrap()
            .into_iter()
            .map(|v| v * c)
            .collect();
        // Powers of two scale exactly in binary floating point.
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn adaptive_homogeneity_holds_approximately_for_any_positive_scale(
        a in proptest::collection::vec(-10.0f32..10.0, 1..40),
        delta in -2.0f32..4.0,
        c in 0.01f32..50.0,
    ) {
        let mask = vec![true; a.len()];
        let scaled: Vec<f32> = a.iter().map(|v| v * c).collect();
        let lhs = apply_adaptive(&scaled, &mask, delta).unwrap();
        let rhs = apply_adaptive(&a, &mask, delta).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r * c).abs() <= 1e-3 * (1.0 + l.abs()));
        }
    }
}
