// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subcommand implementations over the core library. Each run loads its
//! inputs, writes artifacts under the configured output location and drops a
//! provenance record beside them; one progress line per stage goes to
//! standard error.

use std::path::{Path, PathBuf};

use actsteer_core::analysis;
use actsteer_core::eval::{self, EvalRecord, McScoring};
use actsteer_core::mask::{self, ScoreRule};
use actsteer_core::model::{ElementClass, WeightStore};
use actsteer_core::pipeline;
use actsteer_core::steering::{PositionPolicy, SteeringMode, SteeringSpec};
use actsteer_core::template::Template;
use actsteer_core::tokenizer::Tokenizer;

use crate::config::RunConfig;
use crate::provenance::Provenance;
use crate::CliError;

fn stage(msg: impl AsRef<str>) {
    eprintln!("[actsteer] {}", msg.as_ref());
}

fn load_world(model_dir: &Path) -> Result<(WeightStore<f32>, Tokenizer), CliError> {
    let store = WeightStore::load_dir(model_dir)?;
    let tok = Tokenizer::from_file(model_dir.join("tokenizer.json"))?;
    let spec = store.spec();
    stage(format!(
        "loaded model from {} ({} layers, d_model {}, vocab {})",
        model_dir.display(),
        spec.n_layers,
        spec.d_model,
        spec.vocab_size
    ));
    Ok((store, tok))
}

fn template_of(cfg: &RunConfig) -> Result<Template, CliError> {
    let name: String = cfg.get_or("template", "concat".to_string())?;
    Ok(Template::resolve(&name)?)
}

fn class_of(cfg: &RunConfig) -> Result<ElementClass, CliError> {
    let s: String = cfg.require("class")?;
    Ok(s.parse()?)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out: String = cfg.require("out")?;
    let dir = PathBuf::from(out);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::config("IoFailure", format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_records(records: &[EvalRecord], dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join("records.jsonl");
    let lines: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serialization"))
        .collect();
    std::fs::write(&path, lines.join("\n") + "\n")
        .map_err(|e| CliError::config("IoFailure", format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn print_records(records: &[EvalRecord]) {
    println!(
        "{:<12} {:<12} {:<8} {:>4} {:>7} {:<9} {:>8} {:>6}",
        "task", "mode", "class", "K", "delta", "metric", "value", "n"
    );
    for r in records {
        println!(
            "{:<12} {:<12} {:<8} {:>4} {:>7} {:<9} {:>8.4} {:>6}",
            r.task_id,
            r.mode,
            r.element_class.as_deref().unwrap_or("-"),
            r.k.map_or("-".to_string(), |k| k.to_string()),
            r.delta.map_or("-".to_string(), |d| format!("{d:.2}")),
            r.metric,
            r.value,
            r.n_items
        );
    }
}

/// Build the steering spec described by `mask`/`mode`/`delta`/`direction`
/// config keys. `mode` defaults to `off`.
fn steering_of(
    cfg: &RunConfig,
    store: &WeightStore<f32>,
) -> Result<SteeringSpec<f32>, CliError> {
    let mode: String = cfg.get_or("mode", "off".to_string())?;
    let mode: SteeringMode = mode.parse()?;
    let positions: String = cfg.get_or("positions", "all".to_string())?;
    let positions: PositionPolicy = positions.parse()?;
    let spec = match mode {
        SteeringMode::Off => {
            let class = cfg
                .optional::<String>("class")?
                .map(|s| s.parse::<ElementClass>())
                .transpose()?
                .unwrap_or(ElementClass::Head);
            SteeringSpec::off(store.spec(), class)
        }
        SteeringMode::Adaptive => {
            let mask = mask::load_mask(cfg.require_existing_path("mask")?)?;
            let delta: f64 = cfg.require("delta")?;
            SteeringSpec::adaptive(mask, delta as f32)
        }
        SteeringMode::Fixed => {
            let mask = mask::load_mask(cfg.require_existing_path("mask")?)?;
            let delta: f64 = cfg.require("delta")?;
            let diffs_dir = cfg.require_existing_path("direction")?;
            let diffs: Vec<pipeline::InstanceDifference<f32>> = pipeline::load_traces(&diffs_dir)?;
            let direction = mask::mean_difference(&diffs)?;
            SteeringSpec::fixed(mask, delta as f32, direction)
        }
    };
    Ok(spec.with_positions(positions))
}

pub fn extract(cfg: &RunConfig) -> Result<(), CliError> {
    let model_dir = cfg.require_existing_path("model_dir")?;
    let data = cfg.require_existing_path("data")?;
    let class = class_of(cfg)?;
    let template = template_of(cfg)?;
    let out = out_dir(cfg)?;

    let (store, tok) = load_world(&model_dir)?;
    let pairs = pipeline::read_pairs_jsonl(&data)?;
    stage(format!("read {} contrastive pairs from {}", pairs.len(), data.display()));
    let diffs = pipeline::extract_differences(&store, &tok, &pairs, &template, class)?;
    stage(format!("extracted {} {} difference vectors", diffs.len(), class));
    pipeline::dump_traces(&diffs, &out)?;
    stage(format!("wrote differences under {}", out.display()));

    let mut prov = Provenance::new("extract", cfg.snapshot(), None);
    prov.add_artifact(&out.join("diffs.safetensors"))?;
    prov.add_artifact(&out.join("manifest.json"))?;
    prov.write_into(&out)?;
    Ok(())
}

pub fn build_mask(cfg: &RunConfig) -> Result<(), CliError> {
    let diffs_dir = cfg.require_existing_path("diffs")?;
    let k: usize = cfg.require("k")?;
    let out: String = cfg.require("out")?;
    let out = PathBuf::from(out);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::config("IoFailure", format!("{}: {e}", parent.display())))?;
        }
    }

    let diffs: Vec<pipeline::InstanceDifference<f32>> = pipeline::load_traces(&diffs_dir)?;
    stage(format!("loaded {} difference vectors", diffs.len()));
    if let Some(wanted) = cfg.optional::<String>("class")? {
        let wanted: ElementClass = wanted.parse()?;
        if diffs.first().map(|d| d.layout.element_class) != Some(wanted) {
            return Err(actsteer_core::Error::HeterogeneousBatch {
                detail: format!("differences are not over {wanted} elements"),
            }
            .into());
        }
    }

    let random: bool = cfg.get_or("random", false)?;
    let mask = if random {
        let seed: u64 = cfg.require("seed")?;
        let layout = diffs
            .first()
            .map(|d| d.layout)
            .ok_or(actsteer_core::Error::EmptyBatch)?;
        stage(format!("sampling random mask (K = {k}, seed {seed})"));
        mask::random_mask(layout, k, seed)?
    } else {
        let mean = mask::mean_difference(&diffs)?;
        let signed: bool = cfg.get_or("signed", false)?;
        let rule = if signed { ScoreRule::Signed } else { ScoreRule::Absolute };
        stage(format!("binarizing mean difference (K = {k})"));
        mask::binarize_with(&mean, k, rule)?
    };
    mask::save_mask(&mask, &out)?;
    stage(format!("wrote mask to {}", out.display()));

    let seed: Option<u64> = cfg.optional("seed")?;
    let mut prov = Provenance::new("mask", cfg.snapshot(), seed);
    prov.add_artifact(&out)?;
    prov.write_sibling(&out)?;
    Ok(())
}

pub fn steer(cfg: &RunConfig) -> Result<(), CliError> {
    let model_dir = cfg.require_existing_path("model_dir")?;
    let prompt: String = cfg.require("prompt")?;
    let max_new: usize = cfg.get_or("max_new", 16)?;
    let out = out_dir(cfg)?;

    let (store, tok) = load_world(&model_dir)?;
    let taps = steering_of(cfg, &store)?;
    let prompt_tokens = tok.encode(&prompt)?;
    stage(format!(
        "steering generation: mode {}, {} prompt tokens, {} new",
        taps.mode.as_str(),
        prompt_tokens.len(),
        max_new
    ));
    let tokens = store.greedy_decode(&prompt_tokens, max_new, Some(&taps))?;
    let continuation = tok.decode(&tokens[prompt_tokens.len()..])?;
    println!("{continuation}");

    let artifact = out.join("generation.json");
    let payload = serde_json::json!({
        "prompt": prompt,
        "mode": taps.mode.as_str(),
        "delta": taps.delta,
        "tokens": tokens,
        "continuation": continuation,
    });
    std::fs::write(&artifact, serde_json::to_string_pretty(&payload).unwrap())
        .map_err(|e| CliError::config("IoFailure", format!("{}: {e}", artifact.display())))?;

    let mut prov = Provenance::new("steer", cfg.snapshot(), None);
    prov.add_artifact(&artifact)?;
    prov.write_into(&out)?;
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let model_dir = cfg.require_existing_path("model_dir")?;
    let data = cfg.require_existing_path("data")?;
    let template = template_of(cfg)?;
    let out = out_dir(cfg)?;
    let task: String = cfg.get_or("task", "mc".to_string())?;
    let task_id = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".to_string());

    let (store, tok) = load_world(&model_dir)?;
    let taps = steering_of(cfg, &store)?;

    let records = match task.as_str() {
        "mc" => {
            let items = eval::read_mc_jsonl(&data)?;
            stage(format!("scoring {} multiple-choice items", items.len()));
            let norm: String = cfg.get_or("mc_norm", "sum".to_string())?;
            let scoring: McScoring = norm.parse()?;
            vec![eval::eval_accuracy_with(
                &store, &tok, &task_id, &items, &template, &taps, scoring,
            )?]
        }
        "qa" => {
            let items = eval::read_qa_jsonl(&data)?;
            stage(format!("generating answers for {} items", items.len()));
            let max_new: usize = cfg.get_or("max_new", 16)?;
            vec![eval::eval_em(&store, &tok, &task_id, &items, &template, &taps, max_new)?]
        }
        other => {
            return Err(CliError::config(
                "TypeError",
                format!("task must be `mc` or `qa`, got `{other}`"),
            ))
        }
    };

    let path = write_records(&records, &out)?;
    print_records(&records);
    let mut prov = Provenance::new("eval", cfg.snapshot(), None);
    prov.add_artifact(&path)?;
    prov.write_into(&out)?;
    Ok(())
}

pub fn run_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let model_dir = cfg.require_existing_path("model_dir")?;
    let data = cfg.require_existing_path("data")?;
    let diffs_dir = cfg.require_existing_path("diffs")?;
    let k_grid: Vec<usize> = cfg.require("k_grid")?;
    let delta_grid: Vec<f64> = cfg.require("delta_grid")?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let template = template_of(cfg)?;
    let out = out_dir(cfg)?;
    let task_id = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".to_string());

    let (store, tok) = load_world(&model_dir)?;
    let items = eval::read_mc_jsonl(&data)?;
    let diffs: Vec<pipeline::InstanceDifference<f32>> = pipeline::load_traces(&diffs_dir)?;
    let class = diffs
        .first()
        .map(|d| d.layout.element_class)
        .ok_or(actsteer_core::Error::EmptyBatch)?;
    stage(format!(
        "sweeping {} K values x {} deltas over {} items",
        k_grid.len(),
        delta_grid.len(),
        items.len()
    ));
    let records = eval::sweep(
        &store, &tok, &task_id, &items, &template, class, &diffs, &k_grid, &delta_grid, seed,
    )?;

    let path = write_records(&records, &out)?;
    print_records(&records);
    let mut prov = Provenance::new("sweep", cfg.snapshot(), Some(seed));
    prov.add_artifact(&path)?;
    prov.write_into(&out)?;
    Ok(())
}

pub fn run_ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let model_dir = cfg.require_existing_path("model_dir")?;
    let data = cfg.require_existing_path("data")?;
    let diffs_dir = cfg.require_existing_path("diffs")?;
    let k: usize = cfg.require("k")?;
    let delta: f64 = cfg.require("delta")?;
    let seeds: Vec<u64> = cfg.get_or("seeds", vec![1, 2, 3, 4, 5])?;
    let template = template_of(cfg)?;
    let out = out_dir(cfg)?;
    let task_id = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".to_string());

    let (store, tok) = load_world(&model_dir)?;
    let items = eval::read_mc_jsonl(&data)?;
    let diffs: Vec<pipeline::InstanceDifference<f32>> = pipeline::load_traces(&diffs_dir)?;
    let class = diffs
        .first()
        .map(|d| d.layout.element_class)
        .ok_or(actsteer_core::Error::EmptyBatch)?;
    stage(format!(
        "ablation battery: K = {k}, delta = {delta}, {} random seeds, {} items",
        seeds.len(),
        items.len()
    ));
    let records = eval::ablation_battery(
        &store, &tok, &task_id, &items, &template, class, &diffs, k, delta, &seeds,
    )?;

    let path = write_records(&records, &out)?;
    print_records(&records);
    let mut prov = Provenance::new("ablate", cfg.snapshot(), None);
    prov.add_artifact(&path)?;
    prov.write_into(&out)?;
    Ok(())
}

pub fn analyze(cfg: &RunConfig, what: &str) -> Result<(), CliError> {
    let csv = match what {
        "heatmap" => {
            let diffs_dir = cfg.require_existing_path("diffs")?;
            let diffs: Vec<pipeline::InstanceDifference<f32>> = pipeline::load_traces(&diffs_dir)?;
            let mean = mask::mean_difference(&diffs)?;
            stage(format!(
                "heatmap over {} layers x {} units",
                mean.layout.n_layers, mean.layout.units_per_layer
            ));
            analysis::heatmap_csv(&analysis::difference_heatmap(&mean))
        }
        "histogram" => {
            let diffs_dir = cfg.require_existing_path("diffs")?;
            let diffs: Vec<pipeline::InstanceDifference<f32>> = pipeline::load_traces(&diffs_dir)?;
            let mean = mask::mean_difference(&diffs)?;
            let top: usize = cfg.get_or("top", 100)?;
            stage(format!("layer histogram of the top {top} units"));
            analysis::histogram_csv(&analysis::topk_layer_histogram(&mean, top)?)
        }
        "overlap" => {
            let paths: Vec<String> = cfg.require("masks")?;
            let mut masks = Vec::with_capacity(paths.len());
            for p in &paths {
                let path = PathBuf::from(p);
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.clone());
                masks.push((name, mask::load_mask(&path)?));
            }
            stage(format!("mask overlap across {} tasks", masks.len()));
            analysis::overlap_csv(&analysis::mask_overlap(&masks)?)
        }
        other => {
            return Err(CliError::config(
                "TypeError",
                format!("analyze mode must be heatmap, histogram or overlap, got `{other}`"),
            ))
        }
    };

    match cfg.optional::<String>("out")? {
        Some(out) => {
            let path = PathBuf::from(out);
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| {
                        CliError::config("IoFailure", format!("{}: {e}", parent.display()))
                    })?;
                }
            }
            std::fs::write(&path, csv)
                .map_err(|e| CliError::config("IoFailure", format!("{}: {e}", path.display())))?;
            stage(format!("wrote {}", path.display()));
            let mut prov = Provenance::new("analyze", cfg.snapshot(), None);
            prov.add_artifact(&path)?;
            prov.write_sibling(&path)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

