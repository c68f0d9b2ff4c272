use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pool_pseudo_accuracy, ModelQuad, RmlConfig, SslData, EVAL_CHUNK};
use crate::data::Dataset;
use crate::error::{Result, RmlError};
use crate::metrics::{segmentation_scores, tv_distance};
use crate::netcore::NetModel;
use crate::rectify::{predict_clean, StagePseudoStore};
use crate::tensor::SoftPrediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub iou: Vec<Option<f64>>,
}

fn scores(pred: &SoftPrediction, data: &Dataset, ids: &[usize]) -> Result<ModelScores> {
    let s = segmentation_scores(&pred.argmax(), &data.labels.select(ids), data.num_classes)?;
    Ok(ModelScores {
        miou: s.miou,
        pixel_accuracy: s.pixel_accuracy,
        iou: s.iou,
    })
}

/// Clean eval-mode scores of `model` on the samples `ids`.
pub fn evaluate_model(model: &NetModel, data: &Dataset, ids: &[usize]) -> Result<ModelScores> {
    let pred = predict_clean(model, &data.images.select(ids), EVAL_CHUNK)?;
    scores(&pred, data, ids)
}

/// One evaluation point. Losses are averaged over the iterations since the
/// previous record; `fallbacks` counts rectifications that fell back to
/// `argmax p⁰` over the same span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub stage: usize,
    pub labeled_loss: [f64; 2],
    pub unlabeled_loss: [f64; 2],
    pub student: [ModelScores; 2],
    pub teacher: [ModelScores; 2],
    /// Total variation distance between the two teachers on the eval set.
    pub tv_divergence: f64,
    pub pseudo_accuracy: [Option<f64>; 2],
    pub fallbacks: usize,
}

impl MetricsRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        iteration: usize,
        stage: usize,
        labeled_loss: [f64; 2],
        unlabeled_loss: [f64; 2],
        fallbacks: usize,
        quad: &ModelQuad,
        ssl: &SslData,
        store: &StagePseudoStore,
        cfg: &RmlConfig,
    ) -> Result<Self> {
        let ids = &ssl.split.eval;
        let x = ssl.data.images.select(ids);
        let tp = [
            predict_clean(&quad.teachers[0], &x, EVAL_CHUNK)?,
            predict_clean(&quad.teachers[1], &x, EVAL_CHUNK)?,
        ];
        let student = [
            evaluate_model(&quad.students[0], &ssl.data, ids)?,
            evaluate_model(&quad.students[1], &ssl.data, ids)?,
        ];
        Ok(MetricsRecord {
            iteration,
            stage,
            labeled_loss,
            unlabeled_loss,
            student,
            teacher: [scores(&tp[0], &ssl.data, ids)?, scores(&tp[1], &ssl.data, ids)?],
            tv_divergence: tv_distance(&tp[0], &tp[1])?,
            pseudo_accuracy: [
                pool_pseudo_accuracy(quad, 0, ssl, store, cfg)?,
                pool_pseudo_accuracy(quad, 1, ssl, store, cfg)?,
            ],
            fallbacks,
        })
    }
}

/// End-of-stage scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub student_miou: [f64; 2],
    pub teacher_miou: [f64; 2],
    pub tv_divergence: f64,
    pub pseudo_accuracy: [Option<f64>; 2],
}

impl StageSummary {
    pub fn from_record(r: &MetricsRecord) -> Self {
        StageSummary {
            stage: r.stage,
            student_miou: [r.student[0].miou, r.student[1].miou],
            teacher_miou: [r.teacher[0].miou, r.teacher[1].miou],
            tv_divergence: r.tv_divergence,
            pseudo_accuracy: r.pseudo_accuracy,
        }
    }

    /// Mean teacher mIoU over the two learners.
    pub fn mean_teacher_miou(&self) -> f64 {
        0.5 * (self.teacher_miou[0] + self.teacher_miou[1])
    }

    /// Mean pseudo-label accuracy over learners that reported one.
    pub fn mean_pseudo_accuracy(&self) -> Option<f64> {
        let v: Vec<f64> = self.pseudo_accuracy.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Receives metrics records as training produces them.
pub trait MetricsSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards records.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON line per record, flushed immediately so a failed run
/// keeps everything recorded before the failure.
pub struct JsonlSink {
    path: std::path::PathBuf,
    file: std::fs::File,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| RmlError::io(path, e))?;
        Ok(JsonlSink {
            path: path.to_path_buf(),
            file,
        })
    }
}

impl MetricsSink for JsonlSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record)? + "\n";
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| RmlError::io(&self.path, e))
    }
}
