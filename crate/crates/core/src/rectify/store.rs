use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_idx, write_idx, IdxData, IdxTensor};
use crate::error::{Result, RmlError};
use crate::tensor::{SoftPrediction, Tensor4};

/// The frozen initial soft labels `p⁰` of every unlabeled image for one
/// stage, keyed by image id.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePseudoStore {
    stage: usize,
    ids: Vec<usize>,
    index: HashMap<usize, usize>,
    p0: SoftPrediction,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    stage: usize,
    num_classes: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    id: usize,
    file: String,
}

impl StagePseudoStore {
    /// `p0` holds one prediction per entry of `ids`, in order.
    pub fn new(stage: usize, ids: Vec<usize>, p0: SoftPrediction) -> Result<Self> {
        if p0.tensor().n() != ids.len() {
            return Err(RmlError::Input(format!(
                "{} predictions for {} ids",
                p0.tensor().n(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (pos, &id) in ids.iter().enumerate() {
            if index.insert(id, pos).is_some() {
                return Err(RmlError::Input(format!("image id {id} appears twice in the store")));
            }
        }
        Ok(StagePseudoStore { stage, ids, index, p0 })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn predictions(&self) -> &SoftPrediction {
        &self.p0
    }

    /// `p⁰` for the given ids, stacked in the order asked.
    pub fn get(&self, ids: &[usize]) -> Result<SoftPrediction> {
        let pos = ids
            .iter()
            .map(|id| {
                self.index
                    .get(id)
                    .copied()
                    .ok_or_else(|| RmlError::State(format!("no stored pseudo label for image {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.p0.select(&pos))
    }

    /// Writes `index.json` and one f64 IDX file (H×W×K) per image.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| RmlError::io(dir, e))?;
        let [_, h, w, k] = self.p0.tensor().shape();
        let mut entries = Vec::with_capacity(self.ids.len());
        for (pos, &id) in self.ids.iter().enumerate() {
            let file = format!("p0_{id:06}.idx");
            let t = IdxTensor::new(vec![h, w, k], IdxData::F64(self.p0.tensor().sample(pos).to_vec()))?;
            write_idx(&t, &dir.join(&file))?;
            entries.push(IndexEntry { id, file });
        }
        let index = IndexFile {
            stage: self.stage,
            num_classes: k,
            entries,
        };
        let path = dir.join("index.json");
        std::fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| RmlError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = std::fs::read_to_string(&path).map_err(|e| RmlError::io(&path, e))?;
        let index: IndexFile = serde_json::from_str(&text)?;
        let mut data = Vec::new();
        let mut dims: Option<Vec<usize>> = None;
        for e in &index.entries {
            let t = read_idx(&dir.join(&e.file))?;
            let IdxData::F64(v) = t.data else {
                return Err(RmlError::Format {
                    offset: 2,
                    message: format!("{} must hold f64 values", e.file),
                });
            };
            if t.dims.len() != 3 || t.dims[2] != index.num_classes || dims.as_ref().is_some_and(|d| *d != t.dims) {
                return Err(RmlError::Input(format!("{} has inconsistent dims {:?}", e.file, t.dims)));
            }
            dims = Some(t.dims);
            data.extend(v);
        }
        let d = dims.unwrap_or_else(|| vec![0, 0, index.num_classes]);
        let p0 = SoftPrediction::new(Tensor4::from_vec([index.entries.len(), d[0], d[1], d[2]], data)?)?;
        StagePseudoStore::new(index.stage, index.entries.iter().map(|e| e.id).collect(), p0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> StagePseudoStore {
        let data = vec![0.25, 0.75, 1.0, 0.0, 0.5, 0.5, 0.1, 0.9];
        let p = SoftPrediction::new(Tensor4::from_vec([2, 1, 2, 2], data).unwrap()).unwrap();
        StagePseudoStore::new(1, vec![7, 3], p).unwrap()
    }

    #[test]
    fn lookup_by_id_and_missing_id() {
        let s = store();
        assert_eq!(s.get(&[3]).unwrap().tensor().data(), &[0.5, 0.5, 0.1, 0.9]);
        assert_eq!(s.get(&[4]).unwrap_err().category(), "state");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let p = store().predictions().clone();
        assert!(StagePseudoStore::new(1, vec![2, 2], p).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        s.save(dir.path()).unwrap();
        assert_eq!(StagePseudoStore::load(dir.path()).unwrap(), s);
    }
}
