//! Named experiments with their desk-scale hyperparameters. Each runner
//! returns a serializable report; with an output directory it also writes
//! one metrics JSON-lines file per run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DatasetKind, ExperimentConfig};
use crate::data::{generate_shapes, load_mnist_raw, make_split, save_dataset, save_dataset_u8, Dataset, IdxData, IdxTensor};
use crate::error::{Result, RmlError};
use crate::netcore::{ArchKind, NetModel};
use crate::rectify::ConfidenceSource;
use crate::tensor::{LabelMap, Tensor4};
use crate::trainer::{
    run_rml, train_baselines, JsonlSink, LossTerms, MetricsRecord, MetricsSink, RmlConfig, RunResult, SslData,
    StageSummary, Variant,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Fig2Divergence,
    AblationTable,
    ThresholdSweep,
    HeteroPair,
    StageSweep,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Fig2Divergence,
        Preset::AblationTable,
        Preset::ThresholdSweep,
        Preset::HeteroPair,
        Preset::StageSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2Divergence => "fig2-divergence",
            Preset::AblationTable => "ablation-table",
            Preset::ThresholdSweep => "threshold-sweep",
            Preset::HeteroPair => "hetero-pair",
            Preset::StageSweep => "stage-sweep",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = RmlError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            RmlError::config("preset", format!("unknown preset `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// The shapes study shared by the ablation, threshold, pairing and stage
/// presets.
pub fn shapes_experiment() -> ExperimentConfig {
    let train = RmlConfig {
        baseline_lr: 0.05,
        baseline_iterations: 3000,
        lr: 0.02,
        iterations: 2000,
        stages: 2,
        lambda: 0.99,
        dropout_rate: 0.0,
        stochastic_depth_survival: 0.95,
        strong_strength: 0.5,
        eval_interval: 250,
        ..RmlConfig::default()
    };
    let mut cfg = ExperimentConfig {
        train,
        ..ExperimentConfig::default()
    };
    cfg.extras.num_train = 64;
    cfg.extras.num_eval = 128;
    cfg.extras.shapes.hue_jitter = 0.4;
    cfg.extras.shapes.rare_radius = [1.5, 2.2];
    cfg
}

/// MNIST with 3-layer perceptrons, 1000 labeled images.
pub fn mnist_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.extras.dataset = DatasetKind::Mnist;
    cfg.extras.num_eval = 2000;
    cfg.train = RmlConfig {
        labeled_fraction: 1.0 / 60.0,
        arch_pair: [ArchKind::Mlp, ArchKind::Mlp],
        hidden: 128,
        feature_dim: 64,
        cutmix: false,
        distinct_baselines: true,
        baseline_lr: 0.1,
        baseline_iterations: 2000,
        lr: 0.01,
        iterations: 10_000,
        stages: 1,
        batch_size: 32,
        unlabeled_batch: 32,
        eval_interval: 500,
        ..RmlConfig::default()
    };
    cfg
}

/// Builds the in-memory dataset and split for `cfg` with data seed `seed`.
pub fn build_experiment_data(cfg: &ExperimentConfig, seed: u64) -> Result<SslData> {
    let x = &cfg.extras;
    match x.dataset {
        DatasetKind::Shapes => {
            let data = generate_shapes(x.num_train + x.num_eval, &x.shapes, seed)?;
            let split = make_split(x.num_train, cfg.train.labeled_fraction, seed)?
                .with_eval((x.num_train..x.num_train + x.num_eval).collect());
            SslData::new(data, split)
        }
        DatasetKind::Mnist => {
            let (images, labels, split) = mnist_parts(cfg, seed)?;
            let n = images.dims[0];
            let pixels: usize = images.dims[1..].iter().product();
            let IdxData::U8(lb) = labels.data else {
                return Err(RmlError::Internal("MNIST labels are not u8".into()));
            };
            let data = Dataset::new(
                Tensor4::from_vec([n, 1, 1, pixels], images.to_unit_f64())?,
                LabelMap::new([n, 1, 1], lb)?,
                10,
            )?;
            SslData::new(data, split)
        }
    }
}

const MNIST_TRAIN: usize = 60_000;

fn mnist_parts(cfg: &ExperimentConfig, seed: u64) -> Result<(IdxTensor, IdxTensor, crate::data::DatasetSplit)> {
    let (images, labels) = load_mnist_raw(&cfg.extras.mnist_dir)?;
    let total = images.dims[0];
    if total <= MNIST_TRAIN {
        return Err(RmlError::Input(format!("MNIST holds {total} images, expected train and test sets")));
    }
    let eval = cfg.extras.num_eval.min(total - MNIST_TRAIN);
    let split = make_split(MNIST_TRAIN, cfg.train.labeled_fraction, seed)?
        .with_eval((MNIST_TRAIN..MNIST_TRAIN + eval).collect());
    Ok((images, labels, split))
}

/// Writes the dataset of [`build_experiment_data`] into `dir`.
pub fn save_experiment_data(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    match cfg.extras.dataset {
        DatasetKind::Shapes => {
            let ssl = build_experiment_data(cfg, seed)?;
            save_dataset(dir, &ssl.data, &ssl.split)
        }
        DatasetKind::Mnist => {
            let (images, labels, split) = mnist_parts(cfg, seed)?;
            save_dataset_u8(dir, &images, &labels, 10, &split)
        }
    }
}

/// Final scores of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub seed: u64,
    pub baseline_miou: [f64; 2],
    pub baseline_pseudo_accuracy: Option<f64>,
    pub stages: Vec<StageSummary>,
}

impl RunReport {
    fn new(label: &str, seed: u64, r: &RunResult) -> Self {
        RunReport {
            label: label.to_string(),
            seed,
            baseline_miou: [r.baseline_scores[0].miou, r.baseline_scores[1].miou],
            baseline_pseudo_accuracy: r.baseline_pseudo_accuracy,
            stages: r.stages.clone(),
        }
    }

    /// Mean teacher mIoU at the end of `stage` (1-based).
    pub fn stage_miou(&self, stage: usize) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).map(StageSummary::mean_teacher_miou)
    }

    pub fn final_miou(&self) -> f64 {
        self.stages.last().map(StageSummary::mean_teacher_miou).unwrap_or(f64::NAN)
    }

    pub fn mean_baseline_miou(&self) -> f64 {
        0.5 * (self.baseline_miou[0] + self.baseline_miou[1])
    }
}

/// Forwards records to an optional JSON-lines file.
struct RunSink {
    file: Option<JsonlSink>,
}

impl MetricsSink for RunSink {
    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        match &mut self.file {
            Some(f) => f.record(r),
            None => Ok(()),
        }
    }
}

/// Runs `train` on `ssl`, logging to `<out>/<label>.jsonl` when `out` is set.
pub fn run_labeled(
    label: &str,
    ssl: &SslData,
    train: &RmlConfig,
    baselines: Option<[NetModel; 2]>,
    out: Option<&Path>,
) -> Result<RunResult> {
    let mut sink = RunSink {
        file: out.map(|d| JsonlSink::create(&d.join(format!("{label}.jsonl")))).transpose()?,
    };
    log::info!("run {label}: {:?}, {} stage(s) × {} iterations", train.variant, train.stages, train.iterations);
    run_rml(ssl, train, baselines, &mut sink, None)
}

fn with_seed(cfg: &ExperimentConfig, seed: u64) -> RmlConfig {
    RmlConfig {
        seed,
        ..cfg.train.clone()
    }
}

/// Teacher-vs-teacher divergence of direct and indirect mutual learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub iterations: Vec<usize>,
    pub direct: Vec<f64>,
    pub indirect_noise: Vec<f64>,
}

pub fn fig2_divergence(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<DivergenceReport> {
    let mut exp = mnist_experiment();
    exp.extras.mnist_dir = cfg.extras.mnist_dir.clone();
    exp.train.seed = cfg.train.seed;
    divergence_study(&exp, out)
}

/// Direct mutual learning against indirect learning with noise, both from
/// the same baselines of `exp`.
pub fn divergence_study(exp: &ExperimentConfig, out: Option<&Path>) -> Result<DivergenceReport> {
    let seed = exp.train.seed;
    let ssl = build_experiment_data(exp, seed)?;
    let base = train_baselines(&ssl, &exp.train)?;
    let direct = RmlConfig {
        variant: Variant::DirectMl,
        input_noise: false,
        model_noise: false,
        ..exp.train.clone()
    };
    let indirect = RmlConfig {
        variant: Variant::ImlNoise,
        loss_terms: LossTerms::Cross,
        ..exp.train.clone()
    };
    let d = run_labeled("direct", &ssl, &direct, Some(base.clone()), out)?;
    let i = run_labeled("indirect_noise", &ssl, &indirect, Some(base), out)?;
    Ok(DivergenceReport {
        iterations: d.metrics.iter().map(|m| m.iteration).collect(),
        direct: d.metrics.iter().map(|m| m.tv_divergence).collect(),
        indirect_noise: i.metrics.iter().map(|m| m.tv_divergence).collect(),
    })
}

/// One seed of the ablation: the supervised baseline, plain IML, IML with
/// noise, RML over two stages and RML with teacher-softmax confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub supervised: f64,
    pub iml: RunReport,
    pub iml_noise: RunReport,
    pub rml: RunReport,
    pub rml_teacher_softmax: RunReport,
}

pub fn ablation_seed(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<AblationRow> {
    let ssl = build_experiment_data(cfg, seed)?;
    let train = with_seed(cfg, seed);
    let base = train_baselines(&ssl, &train)?;
    let one_stage = RmlConfig { stages: 1, ..train.clone() };
    let run = |label: &str, c: RmlConfig| -> Result<RunReport> {
        let r = run_labeled(&format!("{label}_seed{seed}"), &ssl, &c, Some(base.clone()), out)?;
        Ok(RunReport::new(label, seed, &r))
    };
    let rml = run("rml", RmlConfig { variant: Variant::Rml, ..train.clone() })?;
    Ok(AblationRow {
        seed,
        supervised: rml.mean_baseline_miou(),
        iml: run("iml", RmlConfig { variant: Variant::Iml, ..one_stage.clone() })?,
        iml_noise: run("iml_noise", RmlConfig { variant: Variant::ImlNoise, ..one_stage.clone() })?,
        rml_teacher_softmax: run(
            "rml_teacher_softmax",
            RmlConfig {
                variant: Variant::Rml,
                confidence_source: ConfidenceSource::TeacherSoftmax,
                ..one_stage
            },
        )?,
        rml,
    })
}

pub fn ablation_table(cfg: &ExperimentConfig, seeds: &[u64], out: Option<&Path>) -> Result<Vec<AblationRow>> {
    seeds.iter().map(|&s| ablation_seed(cfg, s, out)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub tau: f64,
    pub run: RunReport,
}

pub const SWEEP_TAUS: [f64; 3] = [0.0, 0.6, 0.9];

pub fn threshold_sweep(cfg: &ExperimentConfig, seed: u64, taus: &[f64], out: Option<&Path>) -> Result<Vec<ThresholdPoint>> {
    let ssl = build_experiment_data(cfg, seed)?;
    let train = RmlConfig {
        stages: 1,
        ..with_seed(cfg, seed)
    };
    let base = train_baselines(&ssl, &train)?;
    taus.iter()
        .map(|&tau| {
            let c = RmlConfig { tau, ..train.clone() };
            let r = run_labeled(&format!("tau{tau}_seed{seed}"), &ssl, &c, Some(base.clone()), out)?;
            Ok(ThresholdPoint {
                tau,
                run: RunReport::new(&format!("tau={tau}"), seed, &r),
            })
        })
        .collect()
}

/// Scores of an mlp × cnn pair against the baseline of each architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeteroReport {
    pub seed: u64,
    pub arch_pair: [ArchKind; 2],
    pub baseline_miou: [f64; 2],
    pub student_miou: [f64; 2],
    pub teacher_miou: [f64; 2],
}

pub fn hetero_pair(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<HeteroReport> {
    let ssl = build_experiment_data(cfg, seed)?;
    let train = RmlConfig {
        arch_pair: [ArchKind::Mlp, ArchKind::Cnn],
        stages: 1,
        ..with_seed(cfg, seed)
    };
    let r = run_labeled(&format!("hetero_seed{seed}"), &ssl, &train, None, out)?;
    let last = r.stages.last().ok_or_else(|| RmlError::Internal("run produced no stage".into()))?;
    Ok(HeteroReport {
        seed,
        arch_pair: train.arch_pair,
        baseline_miou: [r.baseline_scores[0].miou, r.baseline_scores[1].miou],
        student_miou: last.student_miou,
        teacher_miou: last.teacher_miou,
    })
}

pub fn stage_sweep(cfg: &ExperimentConfig, seed: u64, stages: usize, out: Option<&Path>) -> Result<RunReport> {
    let ssl = build_experiment_data(cfg, seed)?;
    let train = RmlConfig {
        stages,
        ..with_seed(cfg, seed)
    };
    let r = run_labeled(&format!("stages_seed{seed}"), &ssl, &train, None, out)?;
    Ok(RunReport::new("rml", seed, &r))
}

/// Runs `preset` with seeds starting at `cfg.train.seed`; the desk-scale
/// hyperparameters come from the preset, the data locations from `cfg`.
pub fn run_preset(preset: Preset, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<serde_json::Value> {
    let seed = cfg.train.seed;
    let mut shapes = shapes_experiment();
    shapes.extras.out = cfg.extras.out.clone();
    let value = match preset {
        Preset::Fig2Divergence => serde_json::to_value(fig2_divergence(cfg, out)?)?,
        Preset::AblationTable => serde_json::to_value(ablation_table(&shapes, &[seed, seed + 1, seed + 2], out)?)?,
        Preset::ThresholdSweep => serde_json::to_value(threshold_sweep(&shapes, seed, &SWEEP_TAUS, out)?)?,
        Preset::HeteroPair => serde_json::to_value(hetero_pair(&shapes, seed, out)?)?,
        Preset::StageSweep => serde_json::to_value(stage_sweep(&shapes, seed, 3, out)?)?,
    };
    Ok(value)
}
