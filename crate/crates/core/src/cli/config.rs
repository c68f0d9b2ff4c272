use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::ShapesConfig;
use crate::error::{Result, RmlError};
use crate::trainer::RmlConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Shapes,
    Mnist,
}

impl std::str::FromStr for DatasetKind {
    type Err = RmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shapes" => Ok(DatasetKind::Shapes),
            "mnist" => Ok(DatasetKind::Mnist),
            other => Err(RmlError::config("dataset", format!("unknown dataset `{other}` (expected shapes or mnist)"))),
        }
    }
}

/// Experiment settings outside the trainer's own configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentExtras {
    pub dataset: DatasetKind,
    /// Dataset directory written by `gen-data`; `<out>/data` when unset.
    pub data_dir: Option<PathBuf>,
    /// Directory holding the four raw MNIST files.
    pub mnist_dir: PathBuf,
    pub out: PathBuf,
    pub preset: Option<String>,
    /// Shapes: size of the training pool that is split into L and U.
    pub num_train: usize,
    /// Held-out evaluation images (shapes: generated, MNIST: taken from the test set).
    pub num_eval: usize,
    pub shapes: ShapesConfig,
}

impl Default for ExperimentExtras {
    fn default() -> Self {
        ExperimentExtras {
            dataset: DatasetKind::Shapes,
            data_dir: None,
            mnist_dir: PathBuf::from("data/mnist"),
            out: PathBuf::from("runs/default"),
            preset: None,
            num_train: 128,
            num_eval: 128,
            shapes: ShapesConfig::default(),
        }
    }
}

/// Trainer configuration plus dataset and output selection. On disk it is
/// one flat JSON object: trainer fields sit next to the extras.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub train: RmlConfig,
    pub extras: ExperimentExtras,
}

fn object_keys<T: Serialize>(v: &T) -> Vec<String> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// 1-based line of the first `"key":` in `text`.
pub fn locate_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().enumerate().find_map(|(i, line)| {
        let at = line.find(&needle)?;
        line[at + needle.len()..].trim_start().starts_with(':').then_some(i + 1)
    })
}

fn with_line(err: RmlError, text: &str) -> RmlError {
    match err {
        RmlError::Config {
            field,
            line: None,
            message,
        } => {
            let line = locate_key(text, &field);
            RmlError::Config { field, line, message }
        }
        other => other,
    }
}

fn json_error(e: serde_json::Error, text: &str) -> RmlError {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field") || msg.contains("field `"))
        .unwrap_or("config")
        .to_string();
    let line = if field != "config" {
        locate_key(text, &field).or(Some(e.line()))
    } else {
        Some(e.line())
    };
    let message = msg.split(" at line ").next().unwrap_or(&msg).to_string();
    RmlError::Config { field, line, message }
}

impl ExperimentConfig {
    /// Parses and validates JSON text. A run manifest is accepted too: its
    /// `config` object is used.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| json_error(e, text))?;
        let Value::Object(mut top) = value else {
            return Err(RmlError::Config {
                field: "config".into(),
                line: Some(1),
                message: "expected a JSON object".into(),
            });
        };
        if top.contains_key("manifest_version") {
            match top.remove("config") {
                Some(Value::Object(inner)) => top = inner,
                _ => {
                    return Err(RmlError::Config {
                        field: "config".into(),
                        line: locate_key(text, "manifest_version"),
                        message: "manifest lacks a `config` object".into(),
                    })
                }
            }
        }
        let train_keys = object_keys(&RmlConfig::default());
        let extra_keys = object_keys(&ExperimentExtras::default());
        let (mut train, mut extras) = (Map::new(), Map::new());
        for (k, v) in top {
            if train_keys.contains(&k) {
                train.insert(k, v);
            } else if extra_keys.contains(&k) {
                extras.insert(k, v);
            } else {
                return Err(RmlError::Config {
                    line: locate_key(text, &k),
                    field: k,
                    message: "unknown field".into(),
                });
            }
        }
        let cfg = ExperimentConfig {
            train: serde_json::from_value(Value::Object(train)).map_err(|e| json_error(e, text))?,
            extras: serde_json::from_value(Value::Object(extras)).map_err(|e| json_error(e, text))?,
        };
        cfg.validate().map_err(|e| with_line(e, text))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(RmlError::config("config", format!("{} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| RmlError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let x = &self.extras;
        if x.dataset == DatasetKind::Shapes {
            x.shapes.validate()?;
            if x.num_train < 2 {
                return Err(RmlError::config("num_train", "needs at least 2 images"));
            }
        }
        if x.num_eval == 0 {
            return Err(RmlError::config("num_eval", "must be positive"));
        }
        Ok(())
    }

    /// The flat JSON object written to disk.
    pub fn to_value(&self) -> Value {
        let mut m = match serde_json::to_value(&self.train) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        if let Ok(Value::Object(x)) = serde_json::to_value(&self.extras) {
            m.extend(x);
        }
        Value::Object(m)
    }

    /// Pretty-printed resolved configuration; validating it again yields
    /// the same dump.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("config values are finite") + "\n"
    }

    pub fn data_dir(&self) -> PathBuf {
        self.extras.data_dir.clone().unwrap_or_else(|| self.extras.out.join("data"))
    }
}
