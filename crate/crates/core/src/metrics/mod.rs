//! Evaluation metrics: teacher divergence, segmentation scores and
//! pseudo-label quality.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmlError};
use crate::tensor::{LabelMap, OneHotMap, SoftPrediction};

/// Mean over pixels of `0.5·Σ_k |p_k − q_k|`.
pub fn tv_distance(p: &SoftPrediction, q: &SoftPrediction) -> Result<f64> {
    let (a, b) = (p.tensor(), q.tensor());
    if a.shape() != b.shape() {
        return Err(RmlError::Input(format!(
            "TV distance between shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.pixels() == 0 {
        return Ok(0.0);
    }
    let total: f64 = a
        .pixel_iter()
        .zip(b.pixel_iter())
        .map(|(x, y)| 0.5 * x.iter().zip(y).map(|(u, v)| (u - v).abs()).sum::<f64>())
        .sum();
    Ok((total / a.pixels() as f64).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    /// Row-major K×K counts, `confusion[gt·K + pred]`.
    pub confusion: Vec<u64>,
    /// `TP/(TP+FP+FN)`, `None` for classes absent from both maps.
    pub iou: Vec<Option<f64>>,
    /// Mean IoU over present classes; NaN when both maps are empty.
    pub miou: f64,
    pub pixel_accuracy: f64,
}

pub fn segmentation_scores(pred: &LabelMap, gt: &LabelMap, k: usize) -> Result<SegScores> {
    if pred.shape() != gt.shape() {
        return Err(RmlError::Input(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut confusion = vec![0u64; k * k];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p as usize, g as usize);
        if p >= k || g >= k {
            return Err(RmlError::Input(format!("label {} outside K={k}", p.max(g))));
        }
        confusion[g * k + p] += 1;
    }
    let mut iou = Vec::with_capacity(k);
    let mut correct = 0;
    for c in 0..k {
        let tp = confusion[c * k + c];
        let gt_c: u64 = confusion[c * k..(c + 1) * k].iter().sum();
        let pred_c: u64 = (0..k).map(|g| confusion[g * k + c]).sum();
        let union = gt_c + pred_c - tp;
        correct += tp;
        iou.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        f64::NAN
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let total = pred.len();
    Ok(SegScores {
        confusion,
        iou,
        miou,
        pixel_accuracy: if total == 0 { f64::NAN } else { correct as f64 / total as f64 },
    })
}

/// Fraction of valid pixels whose pseudo class equals the ground truth;
/// `None` when no pixel is valid.
pub fn pseudo_accuracy(labels: &OneHotMap, gt: &LabelMap) -> Result<Option<f64>> {
    if labels.shape() != gt.shape() {
        return Err(RmlError::Input("pseudo labels and ground truth differ in shape".into()));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for ((&c, &v), &g) in labels.classes().iter().zip(labels.valid()).zip(gt.data()) {
        if v {
            total += 1;
            hit += (c == g) as usize;
        }
    }
    Ok((total > 0).then(|| hit as f64 / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4;

    fn sp(rows: &[[f64; 2]]) -> SoftPrediction {
        SoftPrediction::new(Tensor4::from_vec([1, 1, rows.len(), 2], rows.concat()).unwrap()).unwrap()
    }

    #[test]
    fn tv_examples() {
        let a = sp(&[[0.5, 0.5]]);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&sp(&[[1.0, 0.0]]), &sp(&[[0.0, 1.0]])).unwrap(), 1.0);
        assert_eq!(tv_distance(&a, &sp(&[[1.0, 0.0]])).unwrap(), 0.5);
        assert!(tv_distance(&a, &sp(&[[1.0, 0.0], [1.0, 0.0]])).is_err());
    }

    #[test]
    fn miou_worked_example() {
        let gt = LabelMap::new([1, 2, 2], vec![0, 0, 1, 1]).unwrap();
        let pred = LabelMap::new([1, 2, 2], vec![0, 1, 1, 1]).unwrap();
        let s = segmentation_scores(&pred, &gt, 2).unwrap();
        assert_eq!(s.iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((s.miou - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(s.pixel_accuracy, 0.75);
    }

    #[test]
    fn absent_class_is_excluded() {
        let gt = LabelMap::new([1, 1, 2], vec![0, 1]).unwrap();
        let s = segmentation_scores(&gt, &gt, 3).unwrap();
        assert_eq!(s.iou[2], None);
        assert_eq!(s.miou, 1.0);
    }

    #[test]
    fn pseudo_accuracy_rules() {
        let gt = LabelMap::new([1, 1, 3], vec![0, 1, 1]).unwrap();
        let same = OneHotMap::from_labels(&gt, 2).unwrap();
        assert_eq!(pseudo_accuracy(&same, &gt).unwrap(), Some(1.0));
        let gated = same.clone().with_valid(vec![false; 3]).unwrap();
        assert_eq!(pseudo_accuracy(&gated, &gt).unwrap(), None);
        let part = OneHotMap::new([1, 1, 3], 2, vec![0, 0, 1], vec![true, true, false]).unwrap();
        assert_eq!(pseudo_accuracy(&part, &gt).unwrap(), Some(0.5));
    }
}
