// SPDX-License-Identifier: MIT OR Apache-2.0

//! Mean-difference aggregation and top-K identification masks.
//!
//! Instance differences are averaged element-wise and concatenated
//! layer-major into a [`MeanDifference`]. Binarization scores each unit
//! (absolute value for scalar units, L2 norm of the unit's sub-vector for
//! head units), keeps the K best and zeroes the rest. Ties break toward the
//! lower flat index so every mask is deterministic.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ElementClass, ModelSpec};
use crate::pipeline::InstanceDifference;
use crate::scalar::Scalar;

/// Geometry of the concatenated element layout for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub element_class: ElementClass,
    pub n_layers: usize,
    pub units_per_layer: usize,
    /// Scalars per unit: `d_head` for heads, 1 otherwise.
    pub unit_width: usize,
}

impl Layout {
    pub fn for_class(spec: &ModelSpec, class: ElementClass) -> Layout {
        Layout {
            element_class: class,
            n_layers: spec.n_layers,
            units_per_layer: class.units_per_layer(spec),
            unit_width: class.unit_width(spec),
        }
    }

    pub fn total_units(&self) -> usize {
        self.n_layers * self.units_per_layer
    }

    /// Scalars per layer.
    pub fn layer_width(&self) -> usize {
        self.units_per_layer * self.unit_width
    }

    /// Total scalar count of the concatenated vector.
    pub fn values_len(&self) -> usize {
        self.n_layers * self.layer_width()
    }
}

/// Concatenated per-element mean activation difference across layers,
/// laid out layer-major (layer 0 first).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDifference<T> {
    pub layout: Layout,
    pub values: Vec<T>,
    pub n_instances: usize,
}

/// Whether one mask bit governs a single scalar or a whole head sub-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskUnit {
    Scalar,
    HeadVector,
}

/// Binary identification mask with exactly `k` set units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentificationMask {
    pub element_class: ElementClass,
    pub n_layers: usize,
    pub units_per_layer: usize,
    pub k: usize,
    bits: Vec<bool>,
}

impl IdentificationMask {
    /// Build from set unit indices (flat, layer-major).
    pub fn from_indices(
        element_class: ElementClass,
        n_layers: usize,
        units_per_layer: usize,
        indices: &[usize],
    ) -> Result<Self> {
        let total = n_layers * units_per_layer;
        let mut bits = vec![false; total];
        for &i in indices {
            if i >= total {
                return Err(Error::CorruptMaskFile {
                    detail: format!("index {i} out of range for {total} units"),
                });
            }
            if bits[i] {
                return Err(Error::CorruptMaskFile {
                    detail: format!("duplicate index {i}"),
                });
            }
            bits[i] = true;
        }
        Ok(IdentificationMask {
            element_class,
            n_layers,
            units_per_layer,
            k: indices.len(),
            bits,
        })
    }

    /// The all-zero mask (used by the `Off` steering mode).
    pub fn empty(element_class: ElementClass, n_layers: usize, units_per_layer: usize) -> Self {
        IdentificationMask {
            element_class,
            n_layers,
            units_per_layer,
            k: 0,
            bits: vec![false; n_layers * units_per_layer],
        }
    }

    pub fn unit(&self) -> MaskUnit {
        match self.element_class {
            ElementClass::Head => MaskUnit::HeadVector,
            _ => MaskUnit::Scalar,
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Mask bits of one layer (units, not expanded scalars).
    pub fn layer_slice(&self, layer: usize) -> &[bool] {
        let w = self.units_per_layer;
        &self.bits[layer * w..(layer + 1) * w]
    }

    /// Flat indices of set units, ascending.
    pub fn set_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn contains(&self, flat_unit: usize) -> bool {
        self.bits[flat_unit]
    }
}

/// How scalar units are ranked. `Absolute` is the default; `Signed` keeps the
/// raw value so strongly negative elements rank last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    Absolute,
    Signed,
}

/// Element-wise mean of instance differences, concatenated layer-major.
pub fn mean_difference<T: Scalar>(diffs: &[InstanceDifference<T>]) -> Result<MeanDifference<T>> {
    let first = diffs.first().ok_or(Error::EmptyBatch)?;
    let layout = first.layout;
    for d in diffs {
        if d.layout != layout {
            return Err(Error::HeterogeneousBatch {
                detail: format!(
                    "instance `{}` has layout {:?}, expected {:?}",
                    d.id, d.layout, layout
                ),
            });
        }
    }
    let mut values = vec![T::zero(); layout.values_len()];
    for d in diffs {
        let mut offset = 0;
        for layer in &d.per_layer {
            for (dst, &v) in values[offset..offset + layer.len()].iter_mut().zip(layer) {
                *dst += v;
            }
            offset += layer.len();
        }
    }
    let n = T::from_usize(diffs.len()).unwrap();
    for v in &mut values {
        *v = *v / n;
    }
    Ok(MeanDifference {
        layout,
        values,
        n_instances: diffs.len(),
    })
}

/// Per-unit ranking scores: |value| (or the raw value under
/// [`ScoreRule::Signed`]) for scalar units, L2 norm of the unit's sub-vector
/// for head units. These are exactly the scores [`binarize`] ranks by.
pub fn unit_scores<T: Scalar>(mean: &MeanDifference<T>, rule: ScoreRule) -> Vec<T> {
    let w = mean.layout.unit_width;
    mean.values
        .chunks_exact(w)
        .map(|chunk| {
            if w == 1 {
                match rule {
                    ScoreRule::Absolute => chunk[0].abs(),
                    ScoreRule::Signed => chunk[0],
                }
            } else {
                let mut acc = T::zero();
                for &v in chunk {
                    acc += v * v;
                }
                acc.sqrt()
            }
        })
        .collect()
}

/// Indices of the `k` highest-scoring units; ties break toward the lower
/// flat index. Returned ascending.
pub fn top_k_units<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    chosen
}

/// Binarize a mean difference into the top-K identification mask.
pub fn binarize<T: Scalar>(mean: &MeanDifference<T>, k: usize) -> Result<IdentificationMask> {
    binarize_with(mean, k, ScoreRule::Absolute)
}

pub fn binarize_with<T: Scalar>(
    mean: &MeanDifference<T>,
    k: usize,
    rule: ScoreRule,
) -> Result<IdentificationMask> {
    let total = mean.layout.total_units();
    if k == 0 || k > total {
        return Err(Error::KOutOfRange { k, total });
    }
    let scores = unit_scores(mean, rule);
    let chosen = top_k_units(&scores, k);
    IdentificationMask::from_indices(
        mean.layout.element_class,
        mean.layout.n_layers,
        mean.layout.units_per_layer,
        &chosen,
    )
}

/// Ablation mask: exactly `k` units chosen uniformly without replacement
/// from a seeded generator. The same seed always yields the same mask.
pub fn random_mask(layout: Layout, k: usize, seed: u64) -> Result<IdentificationMask> {
    let total = layout.total_units();
    if k == 0 || k > total {
        return Err(Error::KOutOfRange { k, total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, total, k).into_vec();
    chosen.sort_unstable();
    IdentificationMask::from_indices(layout.element_class, layout.n_layers, layout.units_per_layer, &chosen)
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskFile {
    element_class: ElementClass,
    k: usize,
    unit: MaskUnit,
    n_layers: usize,
    units_per_layer: usize,
    set_indices: Vec<usize>,
}

pub fn save_mask(mask: &IdentificationMask, path: impl AsRef<Path>) -> Result<()> {
    let file = MaskFile {
        element_class: mask.element_class,
        k: mask.k,
        unit: mask.unit(),
        n_layers: mask.n_layers,
        units_per_layer: mask.units_per_layer,
        set_indices: mask.set_indices(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<IdentificationMask> {
    let file: MaskFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.set_indices.len() != file.k {
        return Err(Error::CorruptMaskFile {
            detail: format!(
                "k = {} but {} set indices",
                file.k,
                file.set_indices.len()
            ),
        });
    }
    if !file.set_indices.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::CorruptMaskFile {
            detail: "set_indices are not strictly ascending".to_string(),
        });
    }
    let expected_unit = match file.element_class {
        ElementClass::Head => MaskUnit::HeadVector,
        _ => MaskUnit::Scalar,
    };
    if file.unit != expected_unit {
        return Err(Error::CorruptMaskFile {
            detail: format!(
                "unit {:?} inconsistent with element class {}",
                file.unit, file.element_class
            ),
        });
    }
    let mask = IdentificationMask::from_indices(
        file.element_class,
        file.n_layers,
        file.units_per_layer,
        &file.set_indices,
    )?;
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_mean(values: Vec<f32>) -> MeanDifference<f32> {
        let n = values.len();
        MeanDifference {
            layout: Layout {
                element_class: ElementClass::Hidden,
                n_layers: 1,
                units_per_layer: n,
                unit_width: 1,
            },
            values,
            n_instances: 1,
        }
    }

    #[test]
    fn binarize_by_absolute_value() {
        let mean = scalar_mean(vec![0.5, -2.0, 0.1, 1.0]);
        let mask = binarize(&mean, 2).unwrap();
        assert_eq!(mask.bits(), &[false, true, false, true]);
    }

    #[test]
    fn binarize_full_k_is_all_ones() {
        let mean = scalar_mean(vec![0.5, -2.0, 0.1, 1.0]);
        let mask = binarize(&mean, 4).unwrap();
        assert!(mask.bits().iter().all(|&b| b));
    }

    #[test]
    fn binarize_head_units_by_l2_norm() {
        let mean = MeanDifference {
            layout: Layout {
                element_class: ElementClass::Head,
                n_layers: 1,
                units_per_layer: 2,
                unit_width: 2,
            },
            values: vec![0.3, 0.4, 1.0, 0.0],
            n_instances: 1,
        };
        let mask = binarize(&mean, 1).unwrap();
        assert_eq!(mask.bits(), &[false, true]);
    }

    #[test]
    fn binarize_rejects_out_of_range_k() {
        let mean = scalar_mean(vec![1.0, 2.0]);
        assert!(matches!(binarize(&mean, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(binarize(&mean, 3), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn signed_rule_discards_negative_elements() {
        let mean = scalar_mean(vec![0.5, -2.0, 0.1, 1.0]);
        let mask = binarize_with(&mean, 2, ScoreRule::Signed).unwrap();
        assert_eq!(mask.bits(), &[true, false, false, true]);
    }

    #[test]
    fn random_mask_is_seed_deterministic() {
        let layout = Layout {
            element_class: ElementClass::Neuron,
            n_layers: 2,
            units_per_layer: 5,
            unit_width: 1,
        };
        let a = random_mask(layout, 3, 7).unwrap();
        let b = random_mask(layout, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.popcount(), 3);
        let full = random_mask(layout, 10, 123).unwrap();
        assert!(full.bits().iter().all(|&b| b));
    }

    #[test]
    fn mask_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.json");
        let mask =
            IdentificationMask::from_indices(ElementClass::Head, 2, 4, &[1, 6]).unwrap();
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);

        let dup = r#"{"element_class":"head","k":2,"unit":"head_vector","n_layers":2,"units_per_layer":4,"set_indices":[1,1]}"#;
        std::fs::write(&path, dup).unwrap();
        assert_eq!(load_mask(&path).unwrap_err().kind(), "CorruptMaskFile");

        let wrong_count = r#"{"element_class":"head","k":2,"unit":"head_vector","n_layers":2,"units_per_layer":4,"set_indices":[0,1,2]}"#;
        std::fs::write(&path, wrong_count).unwrap();
        assert_eq!(load_mask(&path).unwrap_err().kind(), "CorruptMaskFile");

        let out_of_range = r#"{"element_class":"head","k":1,"unit":"head_vector","n_layers":2,"units_per_layer":4,"set_indices":[8]}"#;
        std::fs::write(&path, out_of_range).unwrap();
        assert_eq!(load_mask(&path).unwrap_err().kind(), "CorruptMaskFile");
    }
}
