use std::path::Path;

use super::idx::{read_idx, IdxData, IdxTensor};
use crate::error::{Result, RmlError};

/// Raw file names of the public MNIST distribution (uncompressed).
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Reads the four raw MNIST files from `dir` and returns the 60000 train
/// images followed by the 10000 test images (u8, N×28×28) with their
/// labels (u8, N).
pub fn load_mnist_raw(dir: &Path) -> Result<(IdxTensor, IdxTensor)> {
    let mut parts = Vec::new();
    for name in MNIST_FILES {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(RmlError::DatasetNotFound(path));
        }
        parts.push(read_idx(&path)?);
    }
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    let (mut n, mut dims) = (0, Vec::new());
    for pair in parts.chunks(2) {
        let (IdxData::U8(im), IdxData::U8(lb)) = (&pair[0].data, &pair[1].data) else {
            return Err(RmlError::Format {
                offset: 2,
                message: "MNIST files must hold u8 values".into(),
            });
        };
        if pair[0].dims.len() != 3 || pair[1].dims != [pair[0].dims[0]] {
            return Err(RmlError::Input(format!(
                "MNIST dims {:?} / {:?} are inconsistent",
                pair[0].dims, pair[1].dims
            )));
        }
        if !dims.is_empty() && dims != pair[0].dims[1..] {
            return Err(RmlError::Input("MNIST train and test image sizes differ".into()));
        }
        dims = pair[0].dims[1..].to_vec();
        n += pair[0].dims[0];
        images.extend_from_slice(im);
        labels.extend_from_slice(lb);
    }
    Ok((
        IdxTensor::new([vec![n], dims].concat(), IdxData::U8(images))?,
        IdxTensor::new(vec![n], IdxData::U8(labels))?,
    ))
}
