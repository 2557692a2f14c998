// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering updates applied inside the forward pass.
//!
//! Two update rules over the masked units of one element class:
//!
//! * adaptive: `out[m] = a[m] * (1 + delta * M[m])` — the update follows the
//!   current activation, so it tracks the input's own direction;
//! * fixed: `out[m] = a[m] + delta * D[m] * M[m]` — the update adds a
//!   precomputed direction regardless of the input.
//!
//! Unmasked units are never touched, so they stay bitwise identical to an
//! unsteered pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{IdentificationMask, Layout, MeanDifference};
use crate::model::{ElementClass, ModelSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteeringMode {
    Adaptive,
    Fixed,
    Off,
}

impl SteeringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SteeringMode::Adaptive => "adaptive",
            SteeringMode::Fixed => "fixed",
            SteeringMode::Off => "off",
        }
    }
}

impl std::str::FromStr for SteeringMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(SteeringMode::Adaptive),
            "fixed" => Ok(SteeringMode::Fixed),
            "off" => Ok(SteeringMode::Off),
            other => Err(Error::InvalidItem {
                detail: format!("unknown steering mode `{other}`"),
            }),
        }
    }
}

/// Which positions of the forward pass are steered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionPolicy {
    /// Every position, including generated tokens.
    #[default]
    AllPositions,
    /// Only the final prompt token and everything after it.
    LastPromptTokenOnward,
}

impl std::str::FromStr for PositionPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all-positions" => Ok(PositionPolicy::AllPositions),
            "last-prompt" | "last-prompt-token-onward" => Ok(PositionPolicy::LastPromptTokenOnward),
            other => Err(Error::InvalidItem {
                detail: format!("unknown position policy `{other}`"),
            }),
        }
    }
}

/// Everything needed to steer a forward pass.
#[derive(Debug, Clone)]
pub struct SteeringSpec<T> {
    pub element_class: ElementClass,
    pub mask: IdentificationMask,
    pub delta: T,
    pub mode: SteeringMode,
    /// Required iff `mode == Fixed`.
    pub fixed_direction: Option<MeanDifference<T>>,
    pub positions: PositionPolicy,
}

impl<T: Scalar> SteeringSpec<T> {
    pub fn adaptive(mask: IdentificationMask, delta: T) -> Self {
        SteeringSpec {
            element_class: mask.element_class,
            mask,
            delta,
            mode: SteeringMode::Adaptive,
            fixed_direction: None,
            positions: PositionPolicy::AllPositions,
        }
    }

    pub fn fixed(mask: IdentificationMask, delta: T, direction: MeanDifference<T>) -> Self {
        SteeringSpec {
            element_class: mask.element_class,
            mask,
            delta,
            mode: SteeringMode::Fixed,
            fixed_direction: Some(direction),
            positions: PositionPolicy::AllPositions,
        }
    }

    /// A no-op spec; forward output is bitwise identical to an untapped pass.
    pub fn off(model: &ModelSpec, class: ElementClass) -> Self {
        SteeringSpec {
            element_class: class,
            mask: IdentificationMask::empty(class, model.n_layers, class.units_per_layer(model)),
            delta: T::zero(),
            mode: SteeringMode::Off,
            fixed_direction: None,
            positions: PositionPolicy::AllPositions,
        }
    }

    pub fn with_positions(mut self, positions: PositionPolicy) -> Self {
        self.positions = positions;
        self
    }
}

/// Adaptive update of one layer's activation vector.
///
/// `mask_slice` must already be expanded to scalar granularity (one entry
/// per activation element, head bits broadcast across their `d_head` scalars).
///
/// ```
/// use actsteer_core::steering::apply_adaptive;
///
/// let out = apply_adaptive(&[1.0f32, 2.0, 3.0], &[false, true, false], 0.5).unwrap();
/// assert_eq!(out, vec![1.0, 3.0, 3.0]);
/// ```
pub fn apply_adaptive<T: Scalar>(activation: &[T], mask_slice: &[bool], delta: T) -> Result<Vec<T>> {
    if activation.len() != mask_slice.len() {
        return Err(Error::LengthMismatch {
            expected: activation.len(),
            actual: mask_slice.len(),
        });
    }
    let gain = T::one() + delta;
    Ok(activation
        .iter()
        .zip(mask_slice)
        .map(|(&a, &m)| if m { a * gain } else { a })
        .collect())
}

/// Fixed update of one layer's activation vector.
pub fn apply_fixed<T: Scalar>(
    activation: &[T],
    mask_slice: &[bool],
    delta: T,
    direction_slice: &[T],
) -> Result<Vec<T>> {
    if activation.len() != mask_slice.len() {
        return Err(Error::LengthMismatch {
            expected: activation.len(),
            actual: mask_slice.len(),
        });
    }
    if activation.len() != direction_slice.len() {
        return Err(Error::LengthMismatch {
            expected: activation.len(),
            actual: direction_slice.len(),
        });
    }
    Ok(activation
        .iter()
        .zip(mask_slice.iter().zip(direction_slice))
        .map(|(&a, (&m, &d))| if m { a + delta * d } else { a })
        .collect())
}

/// A steering spec validated against a concrete model layout, with mask bits
/// expanded to scalar granularity per layer. Produced by [`install`] and
/// consumed inside the forward pass.
#[derive(Debug, Clone)]
pub struct TapPlan<T> {
    class: ElementClass,
    mode: SteeringMode,
    delta: T,
    positions: PositionPolicy,
    layer_mask: Vec<Vec<bool>>,
    layer_direction: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> TapPlan<T> {
    /// True if this plan modifies activations of `class`.
    pub fn targets(&self, class: ElementClass) -> bool {
        self.mode != SteeringMode::Off && class == self.class
    }

    pub fn position_allowed(&self, position: usize, steer_from: usize) -> bool {
        match self.positions {
            PositionPolicy::AllPositions => true,
            PositionPolicy::LastPromptTokenOnward => position >= steer_from,
        }
    }

    /// Apply the update rule in place to one layer's activation row.
    pub fn apply(&self, layer: usize, row: &mut [T]) {
        let mask = &self.layer_mask[layer];
        debug_assert_eq!(mask.len(), row.len());
        match self.mode {
            SteeringMode::Off => {}
            SteeringMode::Adaptive => {
                let gain = T::one() + self.delta;
                for (a, &m) in row.iter_mut().zip(mask) {
                    if m {
                        *a = *a * gain;
                    }
                }
            }
            SteeringMode::Fixed => {
                let dir = &self.layer_direction.as_ref().expect("validated by install")[layer];
                for ((a, &m), &d) in row.iter_mut().zip(mask).zip(dir) {
                    if m {
                        *a += self.delta * d;
                    }
                }
            }
        }
    }
}

/// Validate a steering spec against a model and expand it into per-layer tap
/// callbacks. The mask's unit bits are broadcast to scalar granularity
/// (a head's single bit scales all `d_head` scalars of that head).
pub fn install<T: Scalar>(spec: &SteeringSpec<T>, model: &ModelSpec) -> Result<TapPlan<T>> {
    let class = spec.element_class;
    if spec.mask.element_class != class {
        return Err(Error::LayoutMismatch {
            detail: format!(
                "mask is over {} elements but the steering spec targets {}",
                spec.mask.element_class, class
            ),
        });
    }
    let layout = Layout::for_class(model, class);
    if spec.mask.n_layers != layout.n_layers || spec.mask.units_per_layer != layout.units_per_layer {
        return Err(Error::LayoutMismatch {
            detail: format!(
                "mask has {} layers x {} units, model dictates {} x {}",
                spec.mask.n_layers, spec.mask.units_per_layer, layout.n_layers, layout.units_per_layer
            ),
        });
    }

    let unit_width = layout.unit_width;
    let layer_mask: Vec<Vec<bool>> = (0..layout.n_layers)
        .map(|l| {
            spec.mask
                .layer_slice(l)
                .iter()
                .flat_map(|&b| std::iter::repeat_n(b, unit_width))
                .collect()
        })
        .collect();

    let layer_direction = match spec.mode {
        SteeringMode::Fixed => {
            let dir = spec.fixed_direction.as_ref().ok_or_else(|| Error::LayoutMismatch {
                detail: "fixed mode requires a direction vector".to_string(),
            })?;
            if dir.layout != layout {
                return Err(Error::LayoutMismatch {
                    detail: format!(
                        "direction layout {:?} does not match model layout {:?}",
                        dir.layout, layout
                    ),
                });
            }
            let w = layout.layer_width();
            Some(
                (0..layout.n_layers)
                    .map(|l| dir.values[l * w..(l + 1) * w].to_vec())
                    .collect(),
            )
        }
        _ => None,
    };

    Ok(TapPlan {
        class,
        mode: spec.mode,
        delta: spec.delta,
        positions: spec.positions,
        layer_mask,
        layer_direction,
    })
}
