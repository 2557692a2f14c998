// SPDX-License-Identifier: MIT OR Apache-2.0

//! `actsteer`: extract contrastive activation differences, build top-K
//! identification masks, steer a tapped forward pass, and evaluate the
//! result. Every flag can also come from a JSON config file (`--config`);
//! flags override file values. Errors are reported as one structured
//! `{"error_kind", "detail"}` line on standard error with exit status 1.

mod commands;
mod config;
mod provenance;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::{push_if, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config { kind: &'static str, detail: String },
    Core(actsteer_core::Error),
}

impl CliError {
    fn config(kind: &'static str, detail: String) -> Self {
        CliError::Config { kind, detail }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { kind, .. } => kind,
            CliError::Core(e) => e.kind(),
        }
    }

    pub fn detail(&self) -> String {
        match self {
            CliError::Config { detail, .. } => detail.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

impl From<actsteer_core::Error> for CliError {
    fn from(e: actsteer_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser)]
#[command(name = "actsteer", version, about = "Contrastive activation steering toolkit")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run contrastive pairs through the model and dump per-instance
    /// activation differences.
    Extract(ExtractArgs),
    /// Aggregate dumped differences and binarize a top-K mask (or sample a
    /// random one).
    Mask(MaskArgs),
    /// Greedy-decode a prompt under a steering spec.
    Steer(SteerArgs),
    /// Score a multiple-choice or QA dataset under a steering spec.
    Eval(EvalArgs),
    /// Grid-sweep K and delta with adaptive steering.
    Sweep(SweepArgs),
    /// Run the ablation battery: adaptive, random-mask, fixed, off.
    Ablate(AblateArgs),
    /// Emit difference heatmaps, top-K layer histograms or mask overlap as CSV.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory with model.json, model.safetensors and tokenizer.json.
    #[arg(long)]
    model: Option<String>,
    /// Contrastive pairs JSONL: {id, question, positive, negative}.
    #[arg(long)]
    data: Option<String>,
    /// Element class: hidden | head | neuron.
    #[arg(long)]
    class: Option<String>,
    /// Template name or literal template with {q} and {a} slots.
    #[arg(long)]
    template: Option<String>,
    /// Output directory for diffs.safetensors + manifest.json.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct MaskArgs {
    /// Directory produced by `extract`.
    #[arg(long)]
    diffs: Option<String>,
    /// Number of units to keep.
    #[arg(long)]
    k: Option<usize>,
    /// Optional element-class check against the diffs manifest.
    #[arg(long)]
    class: Option<String>,
    /// Output mask JSON path.
    #[arg(long)]
    out: Option<String>,
    /// Sample a uniform random mask instead of binarizing.
    #[arg(long)]
    random: bool,
    /// Seed for --random.
    #[arg(long)]
    seed: Option<u64>,
    /// Rank scalar units by signed value instead of absolute value.
    #[arg(long)]
    signed: bool,
}

#[derive(Args)]
struct SteerArgs {
    #[arg(long)]
    model: Option<String>,
    /// Mask JSON produced by `mask`.
    #[arg(long)]
    mask: Option<String>,
    /// Steering strength.
    #[arg(long)]
    delta: Option<f64>,
    /// adaptive | fixed | off.
    #[arg(long)]
    mode: Option<String>,
    /// Diffs directory supplying the fixed-steering direction.
    #[arg(long)]
    direction: Option<String>,
    /// Position policy: all | last-prompt.
    #[arg(long)]
    positions: Option<String>,
    /// Prompt text.
    #[arg(long)]
    prompt: Option<String>,
    /// Number of greedy tokens to generate.
    #[arg(long)]
    max_new: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<String>,
    /// Task JSONL; mc: {id, question, options, gold_index}, qa: {id, question, answers}.
    #[arg(long)]
    data: Option<String>,
    /// mc | qa.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    positions: Option<String>,
    /// Option-score aggregation: sum | mean.
    #[arg(long)]
    mc_norm: Option<String>,
    /// Greedy budget for qa.
    #[arg(long)]
    max_new: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    diffs: Option<String>,
    /// Comma-separated K grid, e.g. 2,4,8.
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    /// Comma-separated delta grid, e.g. 0.5,1,2.
    #[arg(long, value_delimiter = ',')]
    delta_grid: Option<Vec<f64>>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    diffs: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated seeds for the random-identification rows.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// heatmap | histogram | overlap.
    what: String,
    #[arg(long)]
    diffs: Option<String>,
    /// Mask JSON files for overlap; task ids are the file stems.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    masks: Option<Vec<String>>,
    /// Unit budget for the histogram.
    #[arg(long)]
    top: Option<usize>,
    /// CSV output path; standard output when omitted.
    #[arg(long)]
    out: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Extract(a) => {
            let mut ov: Vec<(&'static str, Value)> = Vec::new();
            push_if(&mut ov, "model_dir", &a.model);
            push_if(&mut ov, "data", &a.data);
            push_if(&mut ov, "class", &a.class);
            push_if(&mut ov, "template", &a.template);
            push_if(&mut ov, "out", &a.out);
            commands::extract(&RunConfig::from_sources(config_path, ov)?)
        }
        Command::Mask(a) => {
            let mut ov: Vec<(&'static str, Value)> = Vec::new();
            push_if(&mut ov, "diffs", &a.diffs);
            push_if(&mut ov, "k", &a.k);
            push_if(&mut ov, "class", &a.class);
            push_if(&mut ov, "out", &a.out);
            push_if(&mut ov, "seed", &a.seed);
            if a.random {
                ov.push(("random", Value::Bool(true)));
            }
            if a.signed {
                ov.push(("signed", Value::Bool(true)));
            }
            commands::build_mask(&RunConfig::from_sources(config_path, ov)?)
        }
        Command::Steer(a) => {
            let mut ov: Vec<(&'static str, Value)> = Vec::new();
            push_if(&mut ov, "model_dir", &a.model);
            push_if(&mut ov, "mask", &a.mask);
            push_if(&mut ov, "delta", &a.delta);
            push_if(&mut ov, "mode", &a.mode);
            push_if(&mut ov, "direction", &a.direction);
            push_if(&mut ov, "positions", &a.positions);
            push_if(&mut ov, "prompt", &a.prompt);
            push_if(&mut ov, "max_new", &a.max_new);
            push_if(&mut ov, "out", &a.out);
            commands::steer(&RunConfig::from_sources(config_path, ov)?)
        }
        Command::Eval(a) => {
            let mut ov: Vec<(&'static str, Value)> = Vec::new();
            push_if(&mut ov, "model_dir", &a.model);
            push_if(&mut ov, "data", &a.data);
            push_if(&mut ov, "task", &a.task);
            push_if(&mut ov, "template", &a.template);
            push_if(&mut ov, "mask", &a.mask);
            push_if(&mut ov, "delta", &a.delta);
            push_if(&mut ov, "mode", &a.mode);
            push_if(&mut ov, "direction", &a.direction);
            push_if(&mut ov, "positions", &a.positions);
            push_if(&mut ov, "mc_norm", &a.mc_norm);
            push_if(&mut ov, "max_new", &a.max_new);
            push_if(&mut ov, "out", &a.out);
            commands::evaluate(&RunConfig::from_sources(config_path, ov)?)
        }
        Command::Sweep(a) => {
            let mut ov: Vec<(&'static str, Value)> = Vec::new();
            push_if(&mut ov, "model_dir", &a.model);
            push_if(&mut ov, "data", &a.data);
            push_if(&mut ov, "diffs", &a.diffs);
            push_if(&mut ov, "k_grid", &a.k_grid);
            push_if(&mut ov, "delta_grid", &a.delta_grid);
            push_if(&mut ov, "template", &a.template);
            push_if(&mut ov, "seed", &a.seed);
            push_if(&mut ov, "out", &a.out);
            commands::run_sweep(&RunConfig::from_sources(config_path, ov)?)
        }
        Command::Ablate(a) => {
            let mut ov: Vec<(&'static str, Value)> = Vec::new();
            push_if(&mut ov, "model_dir", &a.model);
            push_if(&mut ov, "data", &a.data);
            push_if(&mut ov, "diffs", &a.diffs);
            push_if(&mut ov, "k", &a.k);
            push_if(&mut ov, "delta", &a.delta);
            push_if(&mut ov, "seeds", &a.seeds);
            push_if(&mut ov, "template", &a.template);
            push_if(&mut ov, "out", &a.out);
            commands::run_ablate(&RunConfig::from_sources(config_path, ov)?)
        }
        Command::Analyze(a) => {
            let mut ov: Vec<(&'static str, Value)> = Vec::new();
            push_if(&mut ov, "diffs", &a.diffs);
            push_if(&mut ov, "masks", &a.masks);
            push_if(&mut ov, "top", &a.top);
            push_if(&mut ov, "out", &a.out);
            let what = a.what.clone();
            commands::analyze(&RunConfig::from_sources(config_path, ov)?, &what)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let line = serde_json::json!({
            "error_kind": e.kind(),
            "detail": e.detail(),
        });
        eprintln!("{line}");
        std::process::exit(1);
    }
}
