// SPDX-License-Identifier: MIT OR Apache-2.0

//! Characterize activation differences: per-unit score tables, top-K layer
//! histograms and cross-task mask overlap. Outputs are CSV-serializable with
//! deterministic row ordering (layer, then unit, ascending). Rendering is
//! left to downstream tooling.

use crate::error::{Error, Result};
use crate::mask::{top_k_units, unit_scores, IdentificationMask, MeanDifference, ScoreRule};
use crate::scalar::Scalar;

/// One row per unit, carrying the same score [`crate::mask::binarize`] ranks by.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub layer: usize,
    pub unit: usize,
    pub score: f64,
}

pub fn difference_heatmap<T: Scalar>(mean: &MeanDifference<T>) -> Vec<HeatmapRow> {
    let scores = unit_scores(mean, ScoreRule::Absolute);
    let units = mean.layout.units_per_layer;
    scores
        .iter()
        .enumerate()
        .map(|(flat, s)| HeatmapRow {
            layer: flat / units,
            unit: flat % units,
            score: s.to_f64().unwrap_or(f64::NAN),
        })
        .collect()
}

pub fn heatmap_csv(rows: &[HeatmapRow]) -> String {
    let mut out = String::from("layer,unit,score\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.layer, r.unit, r.score));
    }
    out
}

/// How many of the `top` highest-scoring units fall in each layer.
/// Counts sum to `top`.
pub fn topk_layer_histogram<T: Scalar>(mean: &MeanDifference<T>, top: usize) -> Result<Vec<usize>> {
    let total = mean.layout.total_units();
    if top == 0 || top > total {
        return Err(Error::KOutOfRange { k: top, total });
    }
    let scores = unit_scores(mean, ScoreRule::Absolute);
    let chosen = top_k_units(&scores, top);
    let mut counts = vec![0usize; mean.layout.n_layers];
    for flat in chosen {
        counts[flat / mean.layout.units_per_layer] += 1;
    }
    Ok(counts)
}

pub fn histogram_csv(counts: &[usize]) -> String {
    let mut out = String::from("layer,count\n");
    for (layer, c) in counts.iter().enumerate() {
        out.push_str(&format!("{layer},{c}\n"));
    }
    out
}

/// Pairwise mask overlap: entry (a, b) = |set(a) ∩ set(b)| / K.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub task_ids: Vec<String>,
    /// Row-major `n x n` entries in `[0, 1]`.
    pub values: Vec<f64>,
}

impl OverlapMatrix {
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.task_ids.len() + b]
    }
}

/// Overlap of identified elements across tasks. All masks must share the
/// element class, layout and K.
pub fn mask_overlap(masks: &[(String, IdentificationMask)]) -> Result<OverlapMatrix> {
    let (_, first) = masks.first().ok_or(Error::EmptyBatch)?;
    if first.k == 0 {
        return Err(Error::KOutOfRange {
            k: 0,
            total: first.n_layers * first.units_per_layer,
        });
    }
    for (task, m) in masks {
        if m.element_class != first.element_class
            || m.n_layers != first.n_layers
            || m.units_per_layer != first.units_per_layer
            || m.k != first.k
        {
            return Err(Error::HeterogeneousMasks {
                detail: format!("mask `{task}` differs in class, layout or K"),
            });
        }
    }
    let n = masks.len();
    let mut values = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let shared = masks[a]
                .1
                .bits()
                .iter()
                .zip(masks[b].1.bits())
                .filter(|(&x, &y)| x && y)
                .count();
            values[a * n + b] = shared as f64 / first.k as f64;
        }
    }
    Ok(OverlapMatrix {
        task_ids: masks.iter().map(|(t, _)| t.clone()).collect(),
        values,
    })
}

pub fn overlap_csv(matrix: &OverlapMatrix) -> String {
    let mut out = String::from("task");
    for id in &matrix.task_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (a, id) in matrix.task_ids.iter().enumerate() {
        out.push_str(id);
        for b in 0..matrix.task_ids.len() {
            out.push_str(&format!(",{}", matrix.at(a, b)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Layout;
    use crate::model::ElementClass;

    fn mean(n_layers: usize, units: usize, values: Vec<f32>) -> MeanDifference<f32> {
        MeanDifference {
            layout: Layout {
                element_class: ElementClass::Hidden,
                n_layers,
                units_per_layer: units,
                unit_width: 1,
            },
            values,
            n_instances: 1,
        }
    }

    #[test]
    fn heatmap_has_one_row_per_unit() {
        let rows = difference_heatmap(&mean(2, 3, vec![0.0, 1.0, -2.0, 3.0, 0.5, 0.25]));
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[4], HeatmapRow { layer: 1, unit: 1, score: 0.5 });
    }

    #[test]
    fn all_zero_mean_gives_zero_scores() {
        let rows = difference_heatmap(&mean(1, 4, vec![0.0; 4]));
        assert!(rows.iter().all(|r| r.score == 0.0));
    }

    #[test]
    fn histogram_with_full_top_counts_every_unit() {
        let counts = topk_layer_histogram(&mean(2, 3, vec![0.1; 6]), 6).unwrap();
        assert_eq!(counts, vec![3, 3]);
    }

    #[test]
    fn histogram_counts_signal_in_last_layer() {
        let mut values = vec![0.0f32; 8];
        for v in values[4..].iter_mut() {
            *v = 5.0;
        }
        let counts = topk_layer_histogram(&mean(2, 4, values), 4).unwrap();
        assert_eq!(counts, vec![0, 4]);
    }

    #[test]
    fn overlap_identical_disjoint_and_partial() {
        let mk = |idx: &[usize]| {
            IdentificationMask::from_indices(ElementClass::Head, 2, 10, idx).unwrap()
        };
        let a = mk(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let b = mk(&[10, 11, 12, 13, 14, 15, 16, 17, 18, 19]);
        let c = mk(&[0, 1, 2, 10, 11, 12, 13, 14, 15, 16]);
        let m = mask_overlap(&[
            ("a".to_string(), a.clone()),
            ("b".to_string(), b),
            ("c".to_string(), c),
        ])
        .unwrap();
        assert_eq!(m.at(0, 0), 1.0);
        assert_eq!(m.at(0, 1), 0.0);
        assert_eq!(m.at(0, 2), 0.3);
        assert_eq!(m.at(2, 0), 0.3);

        let other = IdentificationMask::from_indices(ElementClass::Head, 2, 10, &[0]).unwrap();
        let err = mask_overlap(&[("a".to_string(), a), ("other".to_string(), other)]).unwrap_err();
        assert_eq!(err.kind(), "HeterogeneousMasks");
    }
}
