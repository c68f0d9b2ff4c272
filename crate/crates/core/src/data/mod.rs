//! Datasets, IDX persistence, splits and the on-disk dataset layout:
//!
//! ```text
//! <dir>/images.idx   f32 N×H×W×C in [0,1] (u8 N×H×W[×C] is accepted and scaled)
//! <dir>/labels.idx   u8 N×H×W class map, or u8 N for whole-image labels
//! <dir>/split.json   DatasetSplit plus the class count
//! ```

mod idx;
mod mnist;
mod shapes;
mod split;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use idx::{read_idx, write_idx, IdxData, IdxTensor};
pub use mnist::{load_mnist_raw, MNIST_FILES};
pub use shapes::{generate_shapes, generate_shapes_dataset, ShapesConfig};
pub use split::{make_split, DatasetSplit};

use crate::error::{Result, RmlError};
use crate::tensor::{ImageBatch, LabelMap, Tensor4};

/// Images with aligned per-pixel labels. Whole-image classification data
/// is held as 1×1 "images" whose channels are the flattened pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: ImageBatch,
    pub labels: LabelMap,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: ImageBatch, labels: LabelMap, num_classes: usize) -> Result<Self> {
        if labels.shape() != [images.n(), images.h(), images.w()] {
            return Err(RmlError::Input(format!(
                "labels {:?} do not align with images {:?}",
                labels.shape(),
                images.shape()
            )));
        }
        if labels.max_label().is_some_and(|m| m as usize >= num_classes) {
            return Err(RmlError::Input(format!("labels exceed K={num_classes}")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(ids),
            labels: self.labels.select(ids),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    num_classes: usize,
    #[serde(flatten)]
    split: DatasetSplit,
}

/// Writes the dataset layout into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, data: &Dataset, split: &DatasetSplit) -> Result<()> {
    split.validate(data.len())?;
    std::fs::create_dir_all(dir).map_err(|e| RmlError::io(dir, e))?;
    let [n, h, w, c] = data.images.shape();
    let images = IdxTensor::new(
        vec![n, h, w, c],
        IdxData::F32(data.images.data().iter().map(|&v| v as f32).collect()),
    )?;
    write_idx(&images, &dir.join("images.idx"))?;
    let labels = IdxTensor::new(vec![n, h, w], IdxData::U8(data.labels.data().to_vec()))?;
    write_idx(&labels, &dir.join("labels.idx"))?;
    write_split(dir, data.num_classes, split)
}

fn write_split(dir: &Path, num_classes: usize, split: &DatasetSplit) -> Result<()> {
    let path = dir.join("split.json");
    let body = serde_json::to_string_pretty(&SplitFile {
        num_classes,
        split: split.clone(),
    })?;
    std::fs::write(&path, body + "\n").map_err(|e| RmlError::io(&path, e))
}

/// Writes raw u8 images (N×H×W or N×H×W×C) with per-image or per-pixel labels.
pub fn save_dataset_u8(
    dir: &Path,
    images: &IdxTensor,
    labels: &IdxTensor,
    num_classes: usize,
    split: &DatasetSplit,
) -> Result<()> {
    split.validate(images.dims.first().copied().unwrap_or(0))?;
    std::fs::create_dir_all(dir).map_err(|e| RmlError::io(dir, e))?;
    write_idx(images, &dir.join("images.idx"))?;
    write_idx(labels, &dir.join("labels.idx"))?;
    write_split(dir, num_classes, split)
}

/// Loads a dataset directory written by [`save_dataset`] or
/// [`save_dataset_u8`].
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetSplit)> {
    let split_path = dir.join("split.json");
    if !dir.is_dir() || !split_path.is_file() {
        return Err(RmlError::DatasetNotFound(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&split_path).map_err(|e| RmlError::io(&split_path, e))?;
    let SplitFile { num_classes, split } = serde_json::from_str(&text)?;
    let images = read_idx(&dir.join("images.idx"))?;
    let labels = read_idx(&dir.join("labels.idx"))?;
    let IdxData::U8(label_data) = labels.data else {
        return Err(RmlError::Format {
            offset: 2,
            message: "labels.idx must hold u8 values".into(),
        });
    };
    let values = images.to_unit_f64();
    let n = images.dims.first().copied().unwrap_or(0);
    let shape = match (images.dims.as_slice(), labels.dims.len()) {
        (_, 1) => [n, 1, 1, values.len() / n.max(1)],
        (&[n, h, w], _) => [n, h, w, 1],
        (&[n, h, w, c], _) => [n, h, w, c],
        (d, _) => return Err(RmlError::Input(format!("images.idx has unsupported dims {d:?}"))),
    };
    let images = Tensor4::from_vec(shape, values)?;
    let labels = LabelMap::new([shape[0], shape[1], shape[2]], label_data)?;
    let data = Dataset::new(images, labels, num_classes)?;
    split.validate(data.len())?;
    Ok((data, split))
}
