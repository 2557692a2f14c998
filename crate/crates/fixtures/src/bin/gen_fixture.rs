// SPDX-License-Identifier: MIT OR Apache-2.0

//! Materialize the toy model and datasets for CLI walkthroughs:
//! `gen-fixture <out-dir>` writes model files plus pairs/items JSONL.

use actsteer_fixtures::planted;

fn main() -> std::io::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixture".to_string());
    let dir = std::path::Path::new(&out);
    planted::write_model_dir(dir.join("model"))?;
    planted::write_pairs_jsonl(&planted::gen_pairs(200, 11), dir.join("pairs.jsonl"))?;
    planted::write_items_jsonl(&planted::gen_items(200, 17), dir.join("items.jsonl"))?;
    eprintln!("fixture written under {}", dir.display());
    Ok(())
}
