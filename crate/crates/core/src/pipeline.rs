// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contrastive ingestion: run positive/negative forward passes and record
//! per-instance last-token activation differences.
//!
//! No padding or truncation is performed anywhere; an over-long prompt is an
//! error, because truncation would corrupt the last-token semantics the
//! differences rely on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, RawTensor};
use crate::error::{Error, Result};
use crate::mask::Layout;
use crate::model::{ActivationTrace, ElementClass, WeightStore};
use crate::scalar::Scalar;
use crate::template::Template;
use crate::tokenizer::Tokenizer;

/// One contrastive instance: a shared question with a positive and a
/// negative continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub id: String,
    pub question: String,
    pub positive: String,
    pub negative: String,
}

impl ContrastivePair {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: &str| Error::InvalidPair {
            id: self.id.clone(),
            detail: detail.to_string(),
        };
        if self.question.is_empty() || self.positive.is_empty() || self.negative.is_empty() {
            return Err(fail("question, positive and negative must be non-empty"));
        }
        if self.positive == self.negative {
            return Err(fail("positive and negative are identical"));
        }
        Ok(())
    }
}

/// Build a pair whose negative continuation is a single blank, for tasks
/// that contrast an answer against empty content.
pub fn blank_negative_pair(id: &str, question: &str, answer: &str) -> ContrastivePair {
    ContrastivePair {
        id: id.to_string(),
        question: question.to_string(),
        positive: answer.to_string(),
        negative: " ".to_string(),
    }
}

/// Per-layer activation difference of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDifference<T> {
    pub id: String,
    pub layout: Layout,
    pub per_layer: Vec<Vec<T>>,
}

/// Render the positive and negative prompt texts for a pair.
pub fn build_prompts(pair: &ContrastivePair, template: &Template) -> (String, String) {
    (
        template.render(&pair.question, &pair.positive),
        template.render(&pair.question, &pair.negative),
    )
}

/// Element-wise difference of two traces at matching positions in their
/// respective sequences.
pub fn diff_traces<T: Scalar>(
    positive: &ActivationTrace<T>,
    negative: &ActivationTrace<T>,
) -> Result<Vec<Vec<T>>> {
    if positive.per_layer.len() != negative.per_layer.len() {
        return Err(Error::LengthMismatch {
            expected: positive.per_layer.len(),
            actual: negative.per_layer.len(),
        });
    }
    positive
        .per_layer
        .iter()
        .zip(&negative.per_layer)
        .map(|(p, n)| {
            if p.len() != n.len() {
                return Err(Error::LengthMismatch {
                    expected: p.len(),
                    actual: n.len(),
                });
            }
            Ok(p.iter().zip(n).map(|(&a, &b)| a - b).collect())
        })
        .collect()
}

/// Forward both prompts of a pair and return the last-token activation
/// difference for one element class.
pub fn extract_difference<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    pair: &ContrastivePair,
    template: &Template,
    class: ElementClass,
) -> Result<InstanceDifference<T>> {
    pair.validate()?;
    let (pos_text, neg_text) = build_prompts(pair, template);
    let max = weights.spec().max_positions;
    let side = |text: &str, what: &str| -> Result<Vec<u32>> {
        let tokens = tokenizer.encode(text)?;
        if tokens.len() > max {
            return Err(Error::SequenceTooLong {
                what: format!("{what} prompt of pair `{}`", pair.id),
                len: tokens.len(),
                max,
            });
        }
        Ok(tokens)
    };
    let pos_tokens = side(&pos_text, "positive")?;
    let neg_tokens = side(&neg_text, "negative")?;

    let pos_out = weights.forward(&pos_tokens, None)?;
    let neg_out = weights.forward(&neg_tokens, None)?;
    let per_layer = diff_traces(&pos_out.traces.last(class), &neg_out.traces.last(class))?;

    Ok(InstanceDifference {
        id: pair.id.clone(),
        layout: Layout::for_class(weights.spec(), class),
        per_layer,
    })
}

/// Extract differences for a whole batch of pairs.
pub fn extract_differences<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    pairs: &[ContrastivePair],
    template: &Template,
    class: ElementClass,
) -> Result<Vec<InstanceDifference<T>>> {
    pairs
        .iter()
        .map(|p| extract_difference(weights, tokenizer, p, template, class))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceManifest {
    count: usize,
    element_class: ElementClass,
    n_layers: usize,
    units_per_layer: usize,
    unit_width: usize,
    ids: Vec<String>,
}

const DIFFS_FILE: &str = "diffs.safetensors";
const MANIFEST_FILE: &str = "manifest.json";

/// Persist a homogeneous batch of instance differences under `dir` as a
/// tensor container (`diff/{id}/layer{l}`) plus a JSON manifest. The round
/// trip through [`load_traces`] is lossless at f32 precision.
pub fn dump_traces<T: Scalar>(diffs: &[InstanceDifference<T>], dir: impl AsRef<Path>) -> Result<()> {
    let first = diffs.first().ok_or(Error::EmptyBatch)?;
    let layout = first.layout;
    let mut tensors = std::collections::BTreeMap::new();
    for d in diffs {
        if d.layout != layout {
            return Err(Error::HeterogeneousBatch {
                detail: format!(
                    "instance `{}` has layout {:?}, expected {:?}",
                    d.id, d.layout, layout
                ),
            });
        }
        for (l, layer) in d.per_layer.iter().enumerate() {
            tensors.insert(
                format!("diff/{}/layer{l}", d.id),
                RawTensor {
                    shape: vec![layer.len()],
                    data: layer.iter().map(|v| v.to_storage()).collect(),
                },
            );
        }
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    container::write_container_file(dir.join(DIFFS_FILE), &tensors)?;
    let manifest = TraceManifest {
        count: diffs.len(),
        element_class: layout.element_class,
        n_layers: layout.n_layers,
        units_per_layer: layout.units_per_layer,
        unit_width: layout.unit_width,
        ids: diffs.iter().map(|d| d.id.clone()).collect(),
    };
    std::fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Reload a dumped batch in its original order.
pub fn load_traces<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<InstanceDifference<T>>> {
    let dir = dir.as_ref();
    let manifest: TraceManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let tensors = container::read_container_file(dir.join(DIFFS_FILE))?;
    let layout = Layout {
        element_class: manifest.element_class,
        n_layers: manifest.n_layers,
        units_per_layer: manifest.units_per_layer,
        unit_width: manifest.unit_width,
    };
    let width = layout.layer_width();
    let mut out = Vec::with_capacity(manifest.ids.len());
    for id in &manifest.ids {
        let mut per_layer = Vec::with_capacity(layout.n_layers);
        for l in 0..layout.n_layers {
            let name = format!("diff/{id}/layer{l}");
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::MissingTensor { name: name.clone() })?;
            if t.shape != vec![width] {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: vec![width],
                    actual: t.shape.clone(),
                });
            }
            per_layer.push(t.data.iter().map(|&v| T::from_storage(v)).collect());
        }
        out.push(InstanceDifference {
            id: id.clone(),
            layout,
            per_layer,
        });
    }
    Ok(out)
}

/// Read contrastive pairs from JSONL, one object per line.
pub fn read_pairs_jsonl(path: impl AsRef<Path>) -> Result<Vec<ContrastivePair>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: ContrastivePair = serde_json::from_str(line)?;
        pair.validate()?;
        out.push(pair);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_prompts_substitutes_literally() {
        let t = Template::parse("Q: {q}\nA: {a}").unwrap();
        let pair = ContrastivePair {
            id: "p0".to_string(),
            question: "It rained.".to_string(),
            positive: "Streets got wet.".to_string(),
            negative: "Streets stayed dry.".to_string(),
        };
        let (pos, neg) = build_prompts(&pair, &t);
        assert_eq!(pos, "Q: It rained.\nA: Streets got wet.");
        assert_eq!(neg, "Q: It rained.\nA: Streets stayed dry.");
    }

    #[test]
    fn diff_traces_subtracts_elementwise() {
        let mk = |v: Vec<f32>| ActivationTrace {
            element_class: ElementClass::Hidden,
            per_layer: vec![v],
            token_index: 0,
        };
        let d = diff_traces(&mk(vec![1.0, 2.0]), &mk(vec![0.5, 2.0])).unwrap();
        assert_eq!(d, vec![vec![0.5, 0.0]]);
    }

    #[test]
    fn invalid_pairs_rejected() {
        let pair = ContrastivePair {
            id: "p".to_string(),
            question: "q".to_string(),
            positive: "same".to_string(),
            negative: "same".to_string(),
        };
        assert_eq!(pair.validate().unwrap_err().kind(), "InvalidPair");
        let pair = ContrastivePair {
            id: "p".to_string(),
            question: String::new(),
            positive: "a".to_string(),
            negative: "b".to_string(),
        };
        assert_eq!(pair.validate().unwrap_err().kind(), "InvalidPair");
    }

    #[test]
    fn blank_negative_uses_single_space() {
        let pair = blank_negative_pair("t", "who?", "someone");
        assert_eq!(pair.negative, " ");
        pair.validate().unwrap();
    }

    #[test]
    fn dump_rejects_empty_and_mixed_batches() {
        let dir = tempfile::tempdir().unwrap();
        let empty: Vec<InstanceDifference<f32>> = vec![];
        assert_eq!(dump_traces(&empty, dir.path()).unwrap_err().kind(), "EmptyBatch");

        let a = InstanceDifference::<f32> {
            id: "a".to_string(),
            layout: Layout {
                element_class: ElementClass::Hidden,
                n_layers: 1,
                units_per_layer: 2,
                unit_width: 1,
            },
            per_layer: vec![vec![1.0, 2.0]],
        };
        let mut b = a.clone();
        b.id = "b".to_string();
        b.layout.element_class = ElementClass::Neuron;
        assert_eq!(
            dump_traces(&[a, b], dir.path()).unwrap_err().kind(),
            "HeterogeneousBatch"
        );
    }

    #[test]
    fn dump_naming_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout {
            element_class: ElementClass::Hidden,
            n_layers: 2,
            units_per_layer: 3,
            unit_width: 1,
        };
        let diffs: Vec<InstanceDifference<f32>> = (0..3)
            .map(|i| InstanceDifference {
                id: format!("inst{i}"),
                layout,
                per_layer: vec![
                    vec![i as f32, 0.5, -1.25],
                    vec![2.0, i as f32 * -0.5, 0.0],
                ],
            })
            .collect();
        dump_traces(&diffs, dir.path()).unwrap();

        let tensors = container::read_container_file(dir.path().join(DIFFS_FILE)).unwrap();
        assert_eq!(tensors.len(), 6);
        assert!(tensors.contains_key("diff/inst0/layer0"));
        assert!(tensors.contains_key("diff/inst2/layer1"));

        let back: Vec<InstanceDifference<f32>> = load_traces(dir.path()).unwrap();
        assert_eq!(back, diffs);
    }
}
