// SPDX-License-Identifier: MIT OR Apache-2.0

//! Black-box CLI behavior: subcommand chaining, structured error lines,
//! config-file merging and the steering modes end to end.

use std::path::{Path, PathBuf};
use std::process::Command;

use actsteer_fixtures::planted;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    model: PathBuf,
    pairs: PathBuf,
    items: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let model = root.join("model");
    planted::write_model_dir(&model).unwrap();
    let pairs = root.join("pairs.jsonl");
    planted::write_pairs_jsonl(&planted::gen_pairs(60, 11), &pairs).unwrap();
    let items = root.join("items.jsonl");
    planted::write_items_jsonl(&planted::gen_items(40, 17), &items).unwrap();
    Fixture {
        _dir: dir,
        root,
        model,
        pairs,
        items,
    }
}

fn actsteer(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_actsteer"))
        .args(args)
        .output()
        .expect("binary must run")
}

fn extract_diffs(f: &Fixture) -> PathBuf {
    let diffs = f.root.join("diffs");
    let out = actsteer(&[
        "extract",
        "--model", f.model.to_str().unwrap(),
        "--data", f.pairs.to_str().unwrap(),
        "--class", "head",
        "--template", "concat",
        "--out", diffs.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    diffs
}

fn build_mask(f: &Fixture, diffs: &Path) -> PathBuf {
    let mask = f.root.join("mask.json");
    let out = actsteer(&[
        "mask",
        "--diffs", diffs.to_str().unwrap(),
        "--k", "2",
        "--out", mask.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    mask
}

#[test]
fn mask_then_steer_pipeline_succeeds() {
    let f = fixture();
    let diffs = extract_diffs(&f);
    let mask = build_mask(&f, &diffs);

    let out = actsteer(&[
        "steer",
        "--model", f.model.to_str().unwrap(),
        "--mask", mask.to_str().unwrap(),
        "--delta", "1.0",
        "--mode", "adaptive",
        "--prompt", &planted::flip_question(),
        "--max-new", "1",
        "--out", f.root.join("steer").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim_end(), " yes");

    // The same prompt under mode off continues differently.
    let off = actsteer(&[
        "steer",
        "--model", f.model.to_str().unwrap(),
        "--mode", "off",
        "--prompt", &planted::flip_question(),
        "--max-new", "1",
        "--out", f.root.join("steer-off").to_str().unwrap(),
    ]);
    assert!(off.status.success());
    assert_eq!(String::from_utf8_lossy(&off.stdout).trim_end(), " no");

    // Fixed mode uses the dumped differences as its direction.
    let fixed = actsteer(&[
        "steer",
        "--model", f.model.to_str().unwrap(),
        "--mask", mask.to_str().unwrap(),
        "--delta", "1.0",
        "--mode", "fixed",
        "--direction", diffs.to_str().unwrap(),
        "--prompt", &planted::flip_question(),
        "--max-new", "1",
        "--out", f.root.join("steer-fixed").to_str().unwrap(),
    ]);
    assert!(fixed.status.success(), "{}", String::from_utf8_lossy(&fixed.stderr));
}

#[test]
fn empty_dataset_exits_one_with_structured_error() {
    let f = fixture();
    let empty = f.root.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = actsteer(&[
        "eval",
        "--model", f.model.to_str().unwrap(),
        "--data", empty.to_str().unwrap(),
        "--task", "mc",
        "--out", f.root.join("eval").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let error_line = stderr.lines().last().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(error_line).unwrap();
    assert_eq!(parsed["error_kind"], "EmptyDataset");
}

#[test]
fn unknown_config_key_is_reported_by_name() {
    let f = fixture();
    let cfg = f.root.join("cfg.json");
    std::fs::write(&cfg, r#"{"detla": 0.5}"#).unwrap();
    let out = actsteer(&[
        "--config", cfg.to_str().unwrap(),
        "eval",
        "--model", f.model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(parsed["error_kind"], "UnknownKey");
    assert_eq!(parsed["detail"], "detla");
}

#[test]
fn missing_required_key_is_reported_by_name() {
    let out = actsteer(&["eval", "--task", "mc"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(parsed["error_kind"], "MissingRequired");
    assert_eq!(parsed["detail"], "model_dir");
}

#[test]
fn flags_override_config_file_values() {
    let f = fixture();
    let diffs = extract_diffs(&f);
    let mask = build_mask(&f, &diffs);

    // File says delta 0.5; the flag overrides to 1.0 and the provenance
    // snapshot must reflect the effective value.
    let cfg = f.root.join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "model_dir": f.model.to_str().unwrap(),
            "data": f.items.to_str().unwrap(),
            "task": "mc",
            "template": "concat",
            "mode": "adaptive",
            "mask": mask.to_str().unwrap(),
            "delta": 0.5,
            "out": f.root.join("eval-cfg").to_str().unwrap(),
        })
        .to_string(),
    )
    .unwrap();

    let out = actsteer(&["--config", cfg.to_str().unwrap(), "eval", "--delta", "1.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let prov: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(f.root.join("eval-cfg").join("provenance.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(prov["config"]["delta"], 1.0);

    let records = std::fs::read_to_string(f.root.join("eval-cfg").join("records.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert_eq!(rec["delta"], 1.0);
}

#[test]
fn analyze_overlap_across_saved_masks() {
    let f = fixture();
    let diffs = extract_diffs(&f);
    let top = build_mask(&f, &diffs);
    let rnd = f.root.join("rand.json");
    let out = actsteer(&[
        "mask",
        "--diffs", diffs.to_str().unwrap(),
        "--k", "2",
        "--random",
        "--seed", "5",
        "--out", rnd.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let out = actsteer(&[
        "analyze",
        "overlap",
        "--masks", top.to_str().unwrap(), rnd.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "task,mask,rand");
    assert!(lines[1].starts_with("mask,1,"));
}
