// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-signal toy task.
//!
//! A 2-layer, 4-head, d_model = 32 model in which exactly one designated
//! head (layer 1, head 2) carries a binary label signal:
//!
//! * every question starts with a cue token (`cueA` = +1, `cueB` = -1) whose
//!   embedding holds the label and a cue marker on zero-sum axis pairs;
//! * the question ends with a query-mark word `qmJJ` whose embedding holds a
//!   per-item bias `eta_j` on the logit axis pair — the noise that makes the
//!   unsteered model imperfect;
//! * the planted head attends from the query-mark position to the cue
//!   (saturated marker-to-marker attention scores), reads the label and
//!   writes `gain * label` onto the logit axis, which the unembedding turns
//!   into the yes/no logit difference;
//! * at answer positions the same head performs match detection: its query
//!   reads the answer token's label, so attention reaches the cue only when
//!   answer and cue agree, and its value picks up the cue marker. Positive
//!   and negative continuations therefore differ by a constant-sign marker
//!   read, which is what the mean activation difference identifies;
//! * every other head has a zero output projection: amplifying it cannot
//!   change logits, so random-mask ablations are exactly baseline unless
//!   they hit the planted head.
//!
//! Because every embedding component is a zero-sum axis pair, layer norms
//! only rescale, and the choice rule collapses to
//! `yes iff eta + cue * (1 + delta_if_masked) > 0` up to ~1e-9. The answer
//! margins to the decision thresholds are at least 0.15.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use actsteer_core::container::RawTensor;
use actsteer_core::eval::MCItem;
use actsteer_core::model::ModelSpec;
use actsteer_core::pipeline::ContrastivePair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_LAYERS: usize = 2;
pub const D_MODEL: usize = 32;
pub const N_HEADS: usize = 4;
pub const D_HEAD: usize = 8;
pub const D_FF: usize = 64;
pub const VOCAB_SIZE: usize = 296;
pub const MAX_POSITIONS: usize = 64;

pub const PLANTED_LAYER: usize = 1;
pub const PLANTED_HEAD: usize = 2;
/// Flat head-unit index of the planted head (layer-major).
pub const PLANTED_UNIT: usize = PLANTED_LAYER * N_HEADS + PLANTED_HEAD;

/// The template the toy task is built for.
pub const TEMPLATE: &str = "concat";

const ID_CUE_A: u32 = 256;
const ID_CUE_B: u32 = 257;
const ID_FILLER0: u32 = 258;
const N_FILLERS: usize = 16;
const ID_QM0: u32 = 274;
const N_QM: usize = 20;
const ID_YES: u32 = 294;
const ID_NO: u32 = 295;

// Embedding axis pairs (high axis, low axis); every component is written as
// amp/sqrt(2) on the high axis and -amp/sqrt(2) on the low axis, so every
// token embedding sums to zero and layer norm reduces to a rescale.
const LABEL: (usize, usize) = (0, 8);
const CUE_MARK: (usize, usize) = (1, 9);
const QM_MARK: (usize, usize) = (2, 5);
const LOGIT: (usize, usize) = (3, 6);
const MARK_OUT: (usize, usize) = (4, 7);
const BALLAST: (usize, usize) = (11, 19);
const FILLER_PAIRS: [(usize, usize); 7] = [
    (10, 18),
    (12, 20),
    (13, 21),
    (14, 22),
    (15, 23),
    (16, 24),
    (17, 25),
];

const CUE_LABEL_AMP: f32 = 2.0;
const CUE_MARK_AMP: f32 = 2.0;
const ANS_LABEL_AMP: f32 = 1.0;
const BALLAST_AMP: f32 = 4.0;
const QM_MARK_AMP: f32 = 4.0;
const FILLER_AMP: f32 = 1.5;
const Q_QM: f32 = 2.0;
const Q_LABEL: f32 = 2.0;
const K_MARK: f32 = 2.0;
const K_LABEL: f32 = 2.0;
const V_MARK: f32 = 0.5;
const V_LABEL: f32 = 0.5;
const M_OUT: f32 = 0.5;
const G_OUT: f32 = 0.5;
const U_LOGIT: f32 = 4.0;
const DISTRACTOR_READ: f32 = 0.4;

/// Noise magnitudes; query-mark `qmJJ` carries `+mag[J]` for `J < 10` and
/// `-mag[J - 10]` otherwise. Chosen to keep every item at least 0.15 away
/// from the decision thresholds 1, 1.5, 2 and 3 (delta in {0, 0.5, 1, 2}).
const ETA_MAGS: [f32; 10] = [0.3, 0.6, 0.85, 1.15, 1.35, 1.7, 1.85, 2.2, 2.6, 3.3];

pub fn eta_of_qm(j: usize) -> f32 {
    if j < 10 {
        ETA_MAGS[j]
    } else {
        -ETA_MAGS[j - 10]
    }
}

pub fn model_spec() -> ModelSpec {
    ModelSpec {
        n_layers: N_LAYERS,
        d_model: D_MODEL,
        n_heads: N_HEADS,
        d_ff: D_FF,
        vocab_size: VOCAB_SIZE,
        max_positions: MAX_POSITIONS,
        layernorm_epsilon: 1e-5,
    }
}

pub fn vocab() -> HashMap<String, u32> {
    let mut v = HashMap::new();
    for b in 0..=255u32 {
        v.insert(format!("<0x{b:02X}>"), b);
    }
    v.insert("cueA".to_string(), ID_CUE_A);
    v.insert("cueB".to_string(), ID_CUE_B);
    for i in 0..N_FILLERS {
        v.insert(format!(" f{i:02}"), ID_FILLER0 + i as u32);
    }
    for j in 0..N_QM {
        v.insert(format!(" qm{j:02}"), ID_QM0 + j as u32);
    }
    v.insert(" yes".to_string(), ID_YES);
    v.insert(" no".to_string(), ID_NO);
    v
}

fn set_pair(row: &mut [f32], pair: (usize, usize), amp: f32) {
    let half = amp / 2f32.sqrt();
    row[pair.0] += half;
    row[pair.1] -= half;
}

fn zeros(shape: Vec<usize>) -> RawTensor {
    let numel = shape.iter().product();
    RawTensor {
        shape,
        data: vec![0.0; numel],
    }
}

fn ones(shape: Vec<usize>) -> RawTensor {
    let numel = shape.iter().product();
    RawTensor {
        shape,
        data: vec![1.0; numel],
    }
}

/// Write `amp * (e_hi - e_lo)/sqrt(2)` into column `col` of an `[in, out]` matrix.
fn read_pair_into_col(w: &mut RawTensor, col: usize, pair: (usize, usize), amp: f32) {
    let out = w.shape[1];
    let half = amp / 2f32.sqrt();
    w.data[pair.0 * out + col] += half;
    w.data[pair.1 * out + col] -= half;
}

/// Write `amp * (e_hi - e_lo)/sqrt(2)` into row `row` of an `[in, out]` matrix.
fn write_pair_into_row(w: &mut RawTensor, row: usize, pair: (usize, usize), amp: f32) {
    let out = w.shape[1];
    let half = amp / 2f32.sqrt();
    w.data[row * out + pair.0] += half;
    w.data[row * out + pair.1] -= half;
}

pub fn model_tensors() -> BTreeMap<String, RawTensor> {
    let d = D_MODEL;
    let mut t = BTreeMap::new();

    let mut wte = zeros(vec![VOCAB_SIZE, d]);
    {
        fn row(w: &mut RawTensor, id: u32) -> &mut [f32] {
            let d = w.shape[1];
            let i = id as usize;
            &mut w.data[i * d..(i + 1) * d]
        }
        set_pair(row(&mut wte, ID_CUE_A), LABEL, CUE_LABEL_AMP);
        set_pair(row(&mut wte, ID_CUE_A), CUE_MARK, CUE_MARK_AMP);
        set_pair(row(&mut wte, ID_CUE_B), LABEL, -CUE_LABEL_AMP);
        set_pair(row(&mut wte, ID_CUE_B), CUE_MARK, CUE_MARK_AMP);
        set_pair(row(&mut wte, ID_YES), LABEL, ANS_LABEL_AMP);
        set_pair(row(&mut wte, ID_YES), BALLAST, BALLAST_AMP);
        set_pair(row(&mut wte, ID_NO), LABEL, -ANS_LABEL_AMP);
        set_pair(row(&mut wte, ID_NO), BALLAST, BALLAST_AMP);
        for j in 0..N_QM {
            let r = row(&mut wte, ID_QM0 + j as u32);
            set_pair(r, QM_MARK, QM_MARK_AMP);
            set_pair(r, LOGIT, eta_of_qm(j));
        }
        for i in 0..N_FILLERS {
            let sign = if i < N_FILLERS / 2 { 1.0 } else { -1.0 };
            set_pair(
                row(&mut wte, ID_FILLER0 + i as u32),
                FILLER_PAIRS[i % FILLER_PAIRS.len()],
                sign * FILLER_AMP,
            );
        }
    }
    t.insert("wte".to_string(), wte);
    t.insert("wpe".to_string(), zeros(vec![MAX_POSITIONS, d]));

    for layer in 0..N_LAYERS {
        t.insert(format!("h.{layer}.ln_1.weight"), ones(vec![d]));
        t.insert(format!("h.{layer}.ln_1.bias"), zeros(vec![d]));
        t.insert(format!("h.{layer}.ln_2.weight"), ones(vec![d]));
        t.insert(format!("h.{layer}.ln_2.bias"), zeros(vec![d]));

        let mut c_attn = zeros(vec![d, 3 * d]);
        let v_col = |head: usize, coord: usize| 2 * d + head * D_HEAD + coord;
        if layer == 0 {
            // Distractor value reads; queries and keys stay zero, so these
            // heads attend uniformly. Head 0 reads the label axis and is the
            // per-instance noise floor for mask estimation.
            read_pair_into_col(&mut c_attn, v_col(0, 0), LABEL, DISTRACTOR_READ);
            read_pair_into_col(&mut c_attn, v_col(1, 0), BALLAST, 0.25);
            read_pair_into_col(&mut c_attn, v_col(2, 0), FILLER_PAIRS[0], 0.3);
            read_pair_into_col(&mut c_attn, v_col(3, 0), FILLER_PAIRS[1], 0.3);
        } else {
            let q_col = |head: usize, coord: usize| head * D_HEAD + coord;
            let k_col = |head: usize, coord: usize| d + head * D_HEAD + coord;
            // Planted head: query-mark -> cue-marker attention plus
            // label-label match detection; values read marker and label.
            read_pair_into_col(&mut c_attn, q_col(PLANTED_HEAD, 0), QM_MARK, Q_QM);
            read_pair_into_col(&mut c_attn, q_col(PLANTED_HEAD, 1), LABEL, Q_LABEL);
            read_pair_into_col(&mut c_attn, k_col(PLANTED_HEAD, 0), CUE_MARK, K_MARK);
            read_pair_into_col(&mut c_attn, k_col(PLANTED_HEAD, 1), LABEL, K_LABEL);
            read_pair_into_col(&mut c_attn, v_col(PLANTED_HEAD, 0), CUE_MARK, V_MARK);
            read_pair_into_col(&mut c_attn, v_col(PLANTED_HEAD, 1), LABEL, V_LABEL);
            read_pair_into_col(&mut c_attn, v_col(0, 0), FILLER_PAIRS[2], 0.3);
            read_pair_into_col(&mut c_attn, v_col(1, 0), FILLER_PAIRS[3], 0.3);
            read_pair_into_col(&mut c_attn, v_col(3, 0), FILLER_PAIRS[4], 0.3);
        }
        t.insert(format!("h.{layer}.attn.c_attn.weight"), c_attn);
        t.insert(format!("h.{layer}.attn.c_attn.bias"), zeros(vec![3 * d]));

        let mut c_proj = zeros(vec![d, d]);
        if layer == PLANTED_LAYER {
            // Only the planted head projects anywhere: marker read to an
            // inert pair, label read to the logit pair.
            write_pair_into_row(&mut c_proj, PLANTED_HEAD * D_HEAD, MARK_OUT, M_OUT);
            write_pair_into_row(&mut c_proj, PLANTED_HEAD * D_HEAD + 1, LOGIT, G_OUT);
        }
        t.insert(format!("h.{layer}.attn.c_proj.weight"), c_proj);
        t.insert(format!("h.{layer}.attn.c_proj.bias"), zeros(vec![d]));

        // Feed-forward reads filler axes so neuron traces vary, but projects
        // to nothing.
        let mut c_fc = zeros(vec![d, D_FF]);
        for n in 0..D_FF {
            let axis = 10 + (n % 16);
            c_fc.data[axis * D_FF + n] = 0.25;
        }
        t.insert(format!("h.{layer}.mlp.c_fc.weight"), c_fc);
        t.insert(format!("h.{layer}.mlp.c_fc.bias"), zeros(vec![D_FF]));
        t.insert(format!("h.{layer}.mlp.c_proj.weight"), zeros(vec![D_FF, d]));
        t.insert(format!("h.{layer}.mlp.c_proj.bias"), zeros(vec![d]));
    }

    t.insert("ln_f.weight".to_string(), ones(vec![d]));
    t.insert("ln_f.bias".to_string(), zeros(vec![d]));

    let mut lm_head = zeros(vec![VOCAB_SIZE, d]);
    write_pair_into_row(&mut lm_head, ID_YES as usize, LOGIT, U_LOGIT);
    write_pair_into_row(&mut lm_head, ID_NO as usize, LOGIT, -U_LOGIT);
    t.insert("lm_head.weight".to_string(), lm_head);

    t
}

/// Cue sign (+1 / -1) and noise eta encoded in a question string.
pub fn question_params(question: &str) -> (f32, f32) {
    let words: Vec<&str> = question.split_whitespace().collect();
    let cue = match words[0] {
        "cueA" => 1.0,
        "cueB" => -1.0,
        other => panic!("not a toy question, starts with {other}"),
    };
    let qm = words[words.len() - 1]
        .strip_prefix("qm")
        .expect("toy question must end with a query mark");
    (cue, eta_of_qm(qm.parse::<usize>().unwrap()))
}

/// The choice the model makes: `yes` (0) iff `eta + cue * (1 + delta) > 0`,
/// where `delta` is the effective amplification of the planted head
/// (0 when it is not masked).
pub fn expected_choice(cue: f32, eta: f32, effective_delta: f64) -> usize {
    if f64::from(eta) + f64::from(cue) * (1.0 + effective_delta) > 0.0 {
        0
    } else {
        1
    }
}

fn question(rng: &mut ChaCha8Rng, cue_positive: bool) -> String {
    let cue = if cue_positive { "cueA" } else { "cueB" };
    let mut q = String::from(cue);
    let n_fill = rng.gen_range(2..=3);
    for _ in 0..n_fill {
        q.push_str(&format!(" f{:02}", rng.gen_range(0..N_FILLERS)));
    }
    q.push_str(&format!(" qm{:02}", rng.gen_range(0..N_QM)));
    q
}

/// Two-option items; cues alternate exactly so the label is balanced.
pub fn gen_items(n: usize, seed: u64) -> Vec<MCItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            MCItem {
                id: format!("item{i:04}"),
                question: question(&mut rng, positive),
                options: vec![" yes".to_string(), " no".to_string()],
                gold_index: usize::from(!positive),
            }
        })
        .collect()
}

/// Contrastive pairs with the same balanced construction.
pub fn gen_pairs(n: usize, seed: u64) -> Vec<ContrastivePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let (pos, neg) = if positive {
                (" yes", " no")
            } else {
                (" no", " yes")
            };
            ContrastivePair {
                id: format!("pair{i:04}"),
                question: question(&mut rng, positive),
                positive: pos.to_string(),
                negative: neg.to_string(),
            }
        })
        .collect()
}

/// A question the unsteered model answers incorrectly but a delta = 1
/// amplification of the planted head flips: cue +1, eta = -1.35.
pub fn flip_question() -> String {
    "cueA f00 f05 qm14".to_string()
}

pub fn tokenizer_json() -> String {
    serde_json::to_string_pretty(&vocab()).expect("vocab serialization")
}

/// Materialize `model.json`, `model.safetensors` and `tokenizer.json`.
pub fn write_model_dir(dir: impl AsRef<Path>) -> std::io::Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("model.json"),
        serde_json::to_string_pretty(&model_spec()).unwrap(),
    )?;
    std::fs::write(
        dir.join("model.safetensors"),
        actsteer_core::container::write_container(&model_tensors()),
    )?;
    std::fs::write(dir.join("tokenizer.json"), tokenizer_json())?;
    Ok(())
}

pub fn write_items_jsonl(items: &[MCItem], path: impl AsRef<Path>) -> std::io::Result<()> {
    let lines: Vec<String> = items
        .iter()
        .map(|i| serde_json::to_string(i).unwrap())
        .collect();
    std::fs::write(path, lines.join("\n") + "\n")
}

pub fn write_pairs_jsonl(pairs: &[ContrastivePair], path: impl AsRef<Path>) -> std::io::Result<()> {
    let lines: Vec<String> = pairs
        .iter()
        .map(|p| serde_json::to_string(p).unwrap())
        .collect();
    std::fs::write(path, lines.join("\n") + "\n")
}
