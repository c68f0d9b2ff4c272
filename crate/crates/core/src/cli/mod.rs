//! Command-line front end: `gen-data`, `train`, `eval`, `preset`,
//! `emit-curves` and `validate`. Every command that writes results leaves a
//! `<command>.manifest.json` in its output directory; passing that file
//! back as `--config` reruns the command bit for bit.

mod config;
mod curves;
mod manifest;
pub mod presets;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

pub use config::{locate_key, DatasetKind, ExperimentConfig, ExperimentExtras};
pub use curves::{emit_curves, CurveSummary};
pub use manifest::{hash_tree, sha256_file, Manifest, OutputLock, MANIFEST_VERSION};

use crate::data::load_dataset;
use crate::error::{Result, RmlError};
use crate::netcore::Checkpoint;
use crate::trainer::{evaluate_model, run_rml, JsonlSink, SslData};

#[derive(Debug, Parser)]
#[command(name = "rml-lab", version, about = "Robust mutual learning on desk-scale segmentation data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON config or a run manifest.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// shapes or mnist.
    #[arg(long, global = true)]
    pub dataset: Option<DatasetKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (shapes) or convert (MNIST) a dataset with its split.
    GenData(CommonArgs),
    /// Train the baselines and run mutual learning.
    Train(CommonArgs),
    /// Score a checkpoint on the evaluation split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a named experiment preset.
    Preset {
        #[command(flatten)]
        common: CommonArgs,
        /// One of fig2-divergence, ablation-table, threshold-sweep, hetero-pair, stage-sweep.
        name: Option<String>,
    },
    /// Turn JSON-lines metrics into per-series CSV files.
    EmitCurves {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding `*.jsonl` metrics; defaults to `--out`.
        dir: Option<PathBuf>,
    },
    /// Validate a config and print the resolved form.
    Validate(CommonArgs),
}

impl CommonArgs {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.extras.out = out.clone();
        }
        if let Some(d) = self.dataset {
            cfg.extras.dataset = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, body).map_err(|e| RmlError::io(path, e))
}

fn finish(cfg: &ExperimentConfig, command: &str, root: &Path) -> Result<Manifest> {
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        command: command.to_string(),
        seed: cfg.train.seed,
        config: cfg.to_value(),
        artifacts: hash_tree(root)?,
    };
    manifest.write(&cfg.extras.out)?;
    Ok(manifest)
}

/// Writes the dataset into the configured data directory.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut cfg = cfg.clone();
    let dir = cfg.data_dir();
    cfg.extras.data_dir = Some(dir.clone());
    let _lock = OutputLock::acquire(&cfg.extras.out)?;
    presets::save_experiment_data(&cfg, cfg.train.seed, &dir)?;
    let mut manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        command: "gen-data".into(),
        seed: cfg.train.seed,
        config: cfg.to_value(),
        artifacts: hash_tree(&dir)?,
    };
    manifest.artifacts = manifest
        .artifacts
        .into_iter()
        .map(|(k, v)| (format!("data/{k}"), v))
        .collect();
    manifest.write(&cfg.extras.out)?;
    Ok(manifest)
}

fn load_ssl(cfg: &ExperimentConfig) -> Result<SslData> {
    let (data, split) = load_dataset(&cfg.data_dir())?;
    SslData::new(data, split)
}

/// Trains on the dataset in the data directory, writing metrics,
/// checkpoints and a summary under `out`.
pub fn train(cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut cfg = cfg.clone();
    cfg.extras.data_dir = Some(cfg.data_dir());
    let out = cfg.extras.out.clone();
    let ssl = load_ssl(&cfg)?;
    let _lock = OutputLock::acquire(&out)?;
    let run_dir = out.join("run");
    std::fs::create_dir_all(&run_dir).map_err(|e| RmlError::io(&run_dir, e))?;
    let mut sink = JsonlSink::create(&run_dir.join("metrics.jsonl"))?;
    let result = run_rml(&ssl, &cfg.train, None, &mut sink, Some(&run_dir))?;
    write_json(
        &run_dir.join("summary.json"),
        &json!({
            "baseline": result.baseline_scores,
            "baseline_pseudo_accuracy": result.baseline_pseudo_accuracy,
            "stages": result.stages,
        }),
    )?;
    finish(&cfg, "train", &run_dir)
}

/// Scores `checkpoint` on the evaluation split.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Manifest> {
    let mut cfg = cfg.clone();
    cfg.extras.data_dir = Some(cfg.data_dir());
    let ssl = load_ssl(&cfg)?;
    let model = Checkpoint::load(checkpoint)?.model()?;
    let scores = evaluate_model(&model, &ssl.data, &ssl.split.eval)?;
    let out = cfg.extras.out.clone();
    let _lock = OutputLock::acquire(&out)?;
    let dir = out.join("eval");
    std::fs::create_dir_all(&dir).map_err(|e| RmlError::io(&dir, e))?;
    write_json(
        &dir.join("eval.json"),
        &json!({ "checkpoint": checkpoint, "checkpoint_sha256": sha256_file(checkpoint)?, "scores": scores }),
    )?;
    finish(&cfg, "eval", &dir)
}

/// Runs a preset and writes its metrics and report under `out/<name>`.
pub fn preset(cfg: &ExperimentConfig, name: &str) -> Result<Manifest> {
    let kind: presets::Preset = name.parse()?;
    let mut cfg = cfg.clone();
    cfg.extras.preset = Some(kind.name().to_string());
    let out = cfg.extras.out.clone();
    let _lock = OutputLock::acquire(&out)?;
    let dir = out.join(kind.name());
    std::fs::create_dir_all(&dir).map_err(|e| RmlError::io(&dir, e))?;
    let report = presets::run_preset(kind, &cfg, Some(&dir))?;
    write_json(&dir.join("report.json"), &report)?;
    finish(&cfg, "preset", &dir)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let m = gen_data(&a.resolve()?)?;
            log::info!("dataset written ({} files)", m.artifacts.len());
        }
        Command::Train(a) => {
            train(&a.resolve()?)?;
        }
        Command::Eval { common, checkpoint } => {
            eval(&common.resolve()?, &checkpoint)?;
        }
        Command::Preset { common, name } => {
            let cfg = common.resolve()?;
            let name = name
                .or_else(|| cfg.extras.preset.clone())
                .ok_or_else(|| RmlError::config("preset", "no preset named on the command line or in the config"))?;
            preset(&cfg, &name)?;
        }
        Command::EmitCurves { common, dir } => {
            let dir = match dir {
                Some(d) => d,
                None => common.resolve()?.extras.out,
            };
            let s = emit_curves(&dir)?;
            println!(
                "wrote {} curve files; {} warnings ({} malformed, {} duplicate iterations)",
                s.files.len(),
                s.warnings(),
                s.malformed,
                s.duplicates
            );
        }
        Command::Validate(a) => {
            print!("{}", a.resolve()?.dump());
        }
    }
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Failures print one `error: <category>: <message>` line to stderr.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}
