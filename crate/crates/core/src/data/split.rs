use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RmlError};
use crate::LabRng;

/// Labeled/unlabeled partition of the training ids plus held-out eval ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub fraction: f64,
    pub seed: u64,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Draws `round(fraction·n_train)` labeled ids uniformly from `0..n_train`;
/// the rest are unlabeled. Both lists are sorted.
pub fn make_split(n_train: usize, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(RmlError::config("labeled_fraction", format!("{fraction} outside (0, 1]")));
    }
    let count = (fraction * n_train as f64).round() as usize;
    if count == 0 {
        return Err(RmlError::config(
            "labeled_fraction",
            format!("{fraction} of {n_train} images leaves no labeled data"),
        ));
    }
    let mut ids: Vec<usize> = (0..n_train).collect();
    ids.shuffle(&mut LabRng::seed_from_u64(seed));
    let mut labeled = ids[..count].to_vec();
    let mut unlabeled = ids[count..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(DatasetSplit {
        fraction,
        seed,
        labeled,
        unlabeled,
        eval: Vec::new(),
    })
}

impl DatasetSplit {
    pub fn with_eval(mut self, eval: Vec<usize>) -> Self {
        self.eval = eval;
        self
    }

    /// Checks disjointness and that every id indexes a dataset of `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &id in self.labeled.iter().chain(&self.unlabeled).chain(&self.eval) {
            if id >= n {
                return Err(RmlError::Input(format!("split id {id} outside a dataset of {n}")));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(RmlError::Input(format!("split id {id} appears twice")));
            }
        }
        if self.labeled.is_empty() {
            return Err(RmlError::Input("split has no labeled ids".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_fraction_leaves_nothing_unlabeled() {
        let s = make_split(10, 1.0, 3).unwrap();
        assert_eq!(s.labeled.len(), 10);
        assert!(s.unlabeled.is_empty());
    }

    #[test]
    fn mnist_sixtieth() {
        let s = make_split(60_000, 1.0 / 60.0, 0).unwrap();
        assert_eq!(s.labeled.len(), 1000);
        assert_eq!(s.unlabeled.len(), 59_000);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let a = make_split(100, 0.125, 9).unwrap();
        assert_eq!(a, make_split(100, 0.125, 9).unwrap());
        assert_ne!(a.labeled, make_split(100, 0.125, 10).unwrap().labeled);
        a.validate(100).unwrap();
        assert_eq!(a.labeled.len() + a.unlabeled.len(), 100);
    }

    #[test]
    fn empty_labeled_set_is_config_error() {
        assert_eq!(make_split(3, 0.1, 0).unwrap_err().category(), "config");
        assert!(make_split(3, 0.0, 0).is_err());
    }
}
