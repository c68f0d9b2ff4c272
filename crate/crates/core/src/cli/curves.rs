use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Result, RmlError};
use crate::trainer::MetricsRecord;

/// Outcome of [`emit_curves`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveSummary {
    pub files: Vec<PathBuf>,
    /// Lines that did not parse as a metrics record.
    pub malformed: usize,
    /// Records whose iteration repeated an earlier one (the later record wins).
    pub duplicates: usize,
}

impl CurveSummary {
    pub fn warnings(&self) -> usize {
        self.malformed + self.duplicates
    }
}

type Series = (&'static str, fn(&MetricsRecord) -> Option<f64>);

const SERIES: [Series; 11] = [
    ("labeled_loss_1", |r| Some(r.labeled_loss[0])),
    ("labeled_loss_2", |r| Some(r.labeled_loss[1])),
    ("unlabeled_loss_1", |r| Some(r.unlabeled_loss[0])),
    ("unlabeled_loss_2", |r| Some(r.unlabeled_loss[1])),
    ("student_miou_1", |r| Some(r.student[0].miou)),
    ("student_miou_2", |r| Some(r.student[1].miou)),
    ("teacher_miou_1", |r| Some(r.teacher[0].miou)),
    ("teacher_miou_2", |r| Some(r.teacher[1].miou)),
    ("tv_divergence", |r| Some(r.tv_divergence)),
    ("pseudo_accuracy_1", |r| r.pseudo_accuracy[0]),
    ("pseudo_accuracy_2", |r| r.pseudo_accuracy[1]),
];

/// Reads every `*.jsonl` file in `dir` and writes one
/// `curves/<stem>.<series>.csv` per tracked series with `iteration,value`
/// rows in iteration order.
pub fn emit_curves(dir: &Path) -> Result<CurveSummary> {
    if !dir.is_dir() {
        return Err(RmlError::Input(format!("{} is not a directory", dir.display())));
    }
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| RmlError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    inputs.sort();
    let mut summary = CurveSummary::default();
    if inputs.is_empty() {
        return Ok(summary);
    }
    let curves = dir.join("curves");
    std::fs::create_dir_all(&curves).map_err(|e| RmlError::io(&curves, e))?;
    for input in inputs {
        let text = std::fs::read_to_string(&input).map_err(|e| RmlError::io(&input, e))?;
        let mut by_iter: BTreeMap<usize, MetricsRecord> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<MetricsRecord>(line) {
                Ok(r) => {
                    if by_iter.insert(r.iteration, r).is_some() {
                        summary.duplicates += 1;
                    }
                }
                Err(e) => {
                    log::warn!("{}: skipping malformed record: {e}", input.display());
                    summary.malformed += 1;
                }
            }
        }
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
        for (name, get) in SERIES {
            let mut body = String::from("iteration,value\n");
            for (it, r) in &by_iter {
                if let Some(v) = get(r) {
                    writeln!(body, "{it},{v}").expect("writing to a String");
                }
            }
            let path = curves.join(format!("{stem}.{name}.csv"));
            std::fs::write(&path, body).map_err(|e| RmlError::io(&path, e))?;
            summary.files.push(path);
        }
    }
    Ok(summary)
}
