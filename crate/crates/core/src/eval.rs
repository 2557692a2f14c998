// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation harness: multiple-choice scoring by conditional option
//! log-likelihood, open-ended exact match, hyperparameter sweeps and the
//! ablation battery.
//!
//! Option scoring convention: the context is the template text up to the
//! answer slot; the option's tokens are the tokens of context + option past
//! `len(tokenize(context))`. Adding a constant suffix to every option changes
//! scores and is only choice-preserving when the suffix tokenizes identically
//! in every option and contributes identical conditionals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{binarize, mean_difference, random_mask};
use crate::model::{ElementClass, WeightStore};
use crate::pipeline::InstanceDifference;
use crate::scalar::Scalar;
use crate::steering::{SteeringMode, SteeringSpec};
use crate::template::Template;
use crate::tokenizer::Tokenizer;

/// A multiple-choice item with 2 to 5 options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCItem {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
}

impl MCItem {
    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 || self.options.len() > 5 {
            return Err(Error::InvalidItem {
                detail: format!(
                    "item `{}` has {} options, expected 2 to 5",
                    self.id,
                    self.options.len()
                ),
            });
        }
        if self.gold_index >= self.options.len() {
            return Err(Error::InvalidItem {
                detail: format!(
                    "item `{}` gold_index {} out of range",
                    self.id, self.gold_index
                ),
            });
        }
        Ok(())
    }
}

/// An open-ended QA item with one or more reference answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAItem {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// One evaluation result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub mode: String,
    pub element_class: Option<String>,
    pub k: Option<usize>,
    pub delta: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub n_items: usize,
    pub seed: Option<u64>,
}

/// Option score aggregation. `SumLogProb` is the default; `MeanLogProb`
/// divides by the option's token count (length normalization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McScoring {
    #[default]
    SumLogProb,
    MeanLogProb,
}

impl std::str::FromStr for McScoring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(McScoring::SumLogProb),
            "mean" => Ok(McScoring::MeanLogProb),
            other => Err(Error::InvalidItem {
                detail: format!("unknown scoring rule `{other}`"),
            }),
        }
    }
}

fn summary_fields<T: Scalar>(taps: &SteeringSpec<T>) -> (String, Option<String>, Option<usize>, Option<f64>) {
    match taps.mode {
        SteeringMode::Off => ("off".to_string(), None, None, None),
        mode => (
            mode.as_str().to_string(),
            Some(taps.element_class.to_string()),
            Some(taps.mask.k),
            taps.delta.to_f64(),
        ),
    }
}

/// Log-softmax probability of `token` under a logit row.
fn log_prob<T: Scalar>(logits: &[T], token: usize) -> T {
    let mut max = T::neg_infinity();
    for &v in logits {
        if v > max {
            max = v;
        }
    }
    let mut denom = T::zero();
    for &v in logits {
        denom += (v - max).exp();
    }
    logits[token] - max - denom.ln()
}

/// Score one multiple-choice item and return the chosen option index.
///
/// For each option, sums the log-probabilities of the option's tokens
/// conditioned on the question context under the (possibly steered) forward
/// pass. Ties break toward the lowest index.
pub fn score_mc<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    item: &MCItem,
    template: &Template,
    taps: &SteeringSpec<T>,
) -> Result<usize> {
    score_mc_with(weights, tokenizer, item, template, taps, McScoring::SumLogProb)
}

pub fn score_mc_with<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    item: &MCItem,
    template: &Template,
    taps: &SteeringSpec<T>,
    scoring: McScoring,
) -> Result<usize> {
    item.validate()?;
    let context = template.context(&item.question);
    let n_ctx = tokenizer.encode(&context)?.len();
    let max = weights.spec().max_positions;

    let mut best = 0usize;
    let mut best_score = T::neg_infinity();
    for (idx, option) in item.options.iter().enumerate() {
        let full = tokenizer.encode(&format!("{context}{option}"))?;
        if full.len() > max {
            return Err(Error::SequenceTooLong {
                what: format!("option {idx} of item `{}`", item.id),
                len: full.len(),
                max,
            });
        }
        let score = if full.len() <= n_ctx {
            // Option contributed no tokens; never preferred.
            T::neg_infinity()
        } else {
            let out = weights.forward_from(&full, Some(taps), n_ctx)?;
            let mut acc = T::zero();
            for (pos, &token) in full.iter().enumerate().skip(n_ctx) {
                acc += log_prob(out.logits.row(pos - 1), token as usize);
            }
            match scoring {
                McScoring::SumLogProb => acc,
                McScoring::MeanLogProb => acc / T::from_usize(full.len() - n_ctx).unwrap(),
            }
        };
        if score > best_score {
            best_score = score;
            best = idx;
        }
    }
    Ok(best)
}

/// Accuracy of a steered (or off) pass over multiple-choice items.
pub fn eval_accuracy<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    task_id: &str,
    items: &[MCItem],
    template: &Template,
    taps: &SteeringSpec<T>,
) -> Result<EvalRecord> {
    eval_accuracy_with(weights, tokenizer, task_id, items, template, taps, McScoring::SumLogProb)
}

pub fn eval_accuracy_with<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    task_id: &str,
    items: &[MCItem],
    template: &Template,
    taps: &SteeringSpec<T>,
    scoring: McScoring,
) -> Result<EvalRecord> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for item in items {
        if score_mc_with(weights, tokenizer, item, template, taps, scoring)? == item.gold_index {
            correct += 1;
        }
    }
    let (mode, element_class, k, delta) = summary_fields(taps);
    Ok(EvalRecord {
        task_id: task_id.to_string(),
        mode,
        element_class,
        k,
        delta,
        metric: "accuracy".to_string(),
        value: correct as f64 / items.len() as f64,
        n_items: items.len(),
        seed: None,
    })
}

/// Normalize a generated answer for exact-match comparison: lowercase, drop
/// ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let depunct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    depunct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Exact-match rate of greedy continuations against reference answers.
pub fn eval_em<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    task_id: &str,
    items: &[QAItem],
    template: &Template,
    taps: &SteeringSpec<T>,
    max_new: usize,
) -> Result<EvalRecord> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut matched = 0usize;
    for item in items {
        let prompt = tokenizer.encode(&template.context(&item.question))?;
        let tokens = weights.greedy_decode(&prompt, max_new, Some(taps))?;
        let generated = tokenizer.decode(&tokens[prompt.len()..])?;
        let norm = normalize_answer(&generated);
        if item.answers.iter().any(|a| normalize_answer(a) == norm) {
            matched += 1;
        }
    }
    let (mode, element_class, k, delta) = summary_fields(taps);
    Ok(EvalRecord {
        task_id: task_id.to_string(),
        mode,
        element_class,
        k,
        delta,
        metric: "em".to_string(),
        value: matched as f64 / items.len() as f64,
        n_items: items.len(),
        seed: None,
    })
}

/// Evaluate adaptive steering over the full (K, delta) grid, K-major.
/// Every cell is emitted regardless of how it performs.
#[allow(clippy::too_many_arguments)]
pub fn sweep<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    task_id: &str,
    items: &[MCItem],
    template: &Template,
    class: ElementClass,
    diffs: &[InstanceDifference<T>],
    k_grid: &[usize],
    delta_grid: &[f64],
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k_grid.is_empty() || delta_grid.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mean = mean_difference(diffs)?;
    if mean.layout.element_class != class {
        return Err(Error::HeterogeneousBatch {
            detail: format!(
                "differences are over {} elements, sweep requested {}",
                mean.layout.element_class, class
            ),
        });
    }
    let mut records = Vec::with_capacity(k_grid.len() * delta_grid.len());
    for &k in k_grid {
        let mask = binarize(&mean, k)?;
        for &delta in delta_grid {
            let taps = SteeringSpec::adaptive(mask.clone(), T::from_config(delta));
            let mut rec = eval_accuracy(weights, tokenizer, task_id, items, template, &taps)?;
            rec.seed = Some(seed);
            records.push(rec);
        }
    }
    Ok(records)
}

/// The ablation battery: adaptive steering with the identified mask, adaptive
/// steering with random masks (averaged over seeds), fixed steering along the
/// mean difference, and the off baseline — all over identical items.
#[allow(clippy::too_many_arguments)]
pub fn ablation_battery<T: Scalar>(
    weights: &WeightStore<T>,
    tokenizer: &Tokenizer,
    task_id: &str,
    items: &[MCItem],
    template: &Template,
    class: ElementClass,
    diffs: &[InstanceDifference<T>],
    k: usize,
    delta: f64,
    seeds: &[u64],
) -> Result<Vec<EvalRecord>> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mean = mean_difference(diffs)?;
    if mean.layout.element_class != class {
        return Err(Error::HeterogeneousBatch {
            detail: format!(
                "differences are over {} elements, ablation requested {}",
                mean.layout.element_class, class
            ),
        });
    }
    let d = T::from_config(delta);
    let mask = binarize(&mean, k)?;

    let mut rows = Vec::with_capacity(4);

    let adaptive = SteeringSpec::adaptive(mask.clone(), d);
    rows.push(eval_accuracy(weights, tokenizer, task_id, items, template, &adaptive)?);

    let mut acc_sum = 0.0;
    for &seed in seeds {
        let rnd = random_mask(mean.layout, k, seed)?;
        let taps = SteeringSpec::adaptive(rnd, d);
        acc_sum += eval_accuracy(weights, tokenizer, task_id, items, template, &taps)?.value;
    }
    rows.push(EvalRecord {
        task_id: task_id.to_string(),
        mode: "random-mask".to_string(),
        element_class: Some(class.to_string()),
        k: Some(k),
        delta: Some(delta),
        metric: "accuracy".to_string(),
        value: acc_sum / seeds.len().max(1) as f64,
        n_items: items.len(),
        seed: None,
    });

    let fixed = SteeringSpec::fixed(mask, d, mean);
    rows.push(eval_accuracy(weights, tokenizer, task_id, items, template, &fixed)?);

    let off = SteeringSpec::off(weights.spec(), class);
    rows.push(eval_accuracy(weights, tokenizer, task_id, items, template, &off)?);

    Ok(rows)
}

/// Read multiple-choice items from JSONL.
pub fn read_mc_jsonl(path: impl AsRef<Path>) -> Result<Vec<MCItem>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let item: MCItem = serde_json::from_str(line)?;
        item.validate()?;
        out.push(item);
    }
    Ok(out)
}

/// Read QA items from JSONL.
pub fn read_qa_jsonl(path: impl AsRef<Path>) -> Result<Vec<QAItem>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}
