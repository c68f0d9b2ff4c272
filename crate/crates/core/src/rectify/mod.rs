//! Pseudo labels: teacher prediction, thresholding, prototype-based
//! rectification of the frozen stage labels, and the per-stage store.

mod store;

pub use store::StagePseudoStore;

use serde::{Deserialize, Serialize};

use crate::augment::{mix_label_maps, photometric, AugLevel, AugmentPolicy, CutMixMask};
use crate::error::{Result, RmlError};
use crate::netcore::{Mode, NetModel};
use crate::protobank::{confidence_weights, ConfidenceMap, PrototypeBank};
use crate::tensor::{argmax, FeatureMap, ImageBatch, OneHotMap, SoftPrediction, Tensor4};
use crate::LabRng;

/// Where the rectification weights ω come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    /// Distance softmax against the learner's prototype bank.
    Prototype,
    /// The teacher's own softmax output.
    TeacherSoftmax,
    /// Constant `1/K`, which leaves the frozen labels' argmax unchanged.
    Uniform,
}

/// Teacher features and probabilities on the weakly augmented input.
pub fn teacher_predict(
    teacher: &NetModel,
    x: &ImageBatch,
    policy: &AugmentPolicy,
    rng: &mut LabRng,
) -> Result<(FeatureMap, SoftPrediction)> {
    if teacher.mode() != Mode::Eval {
        return Err(RmlError::State("teachers must be in eval mode".into()));
    }
    let weak = photometric(x, policy, AugLevel::Weak, rng);
    teacher.predict(&weak, None)
}

/// Clean eval-mode predictions in chunks of `chunk` images.
pub fn predict_clean(model: &NetModel, x: &ImageBatch, chunk: usize) -> Result<SoftPrediction> {
    let mut parts = Vec::new();
    let ids: Vec<usize> = (0..x.n()).collect();
    let mut eval = model.clone();
    eval.set_mode(Mode::Eval);
    for part in ids.chunks(chunk.max(1)) {
        parts.push(eval.predict(&x.select(part), None)?.1);
    }
    if parts.is_empty() {
        let [_, h, w, _] = x.shape();
        return SoftPrediction::new(Tensor4::zeros([0, h, w, model.num_classes()]));
    }
    SoftPrediction::concat(&parts.iter().collect::<Vec<_>>())
}

/// Elementwise mean of two predictions.
pub fn average_predictions(p: &SoftPrediction, q: &SoftPrediction) -> Result<SoftPrediction> {
    if p.tensor().shape() != q.tensor().shape() {
        return Err(RmlError::Input("cannot average predictions of different shapes".into()));
    }
    let data = p
        .tensor()
        .data()
        .iter()
        .zip(q.tensor().data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    SoftPrediction::new(Tensor4::from_vec(p.tensor().shape(), data)?)
}

/// One-hot argmax (ties toward class 0) gated by `max_k p_k > tau`.
pub fn harden_with_threshold(p: &SoftPrediction, tau: f64) -> OneHotMap {
    let t = p.tensor();
    let mut classes = Vec::with_capacity(t.pixels());
    let mut valid = Vec::with_capacity(t.pixels());
    for row in t.pixel_iter() {
        let c = argmax(row);
        classes.push(c as u8);
        valid.push(row[c] > tau);
    }
    OneHotMap::new([t.n(), t.h(), t.w()], t.c(), classes, valid).expect("argmax is in range")
}

/// Rectified labels and the number of pixels that fell back to `argmax p⁰`
/// because every product `ω_k·p⁰_k` was zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoised {
    pub labels: OneHotMap,
    pub fallbacks: usize,
}

/// `argmax_k ω_k·p⁰_k` per pixel, gated on the renormalized product.
pub fn denoise(p0: &SoftPrediction, omega: &ConfidenceMap, tau: f64) -> Result<Denoised> {
    let (p, w) = (p0.tensor(), omega.omega());
    if p.shape() != w.shape() {
        return Err(RmlError::Input(format!(
            "p0 {:?} and omega {:?} are not aligned",
            p.shape(),
            w.shape()
        )));
    }
    let mut classes = Vec::with_capacity(p.pixels());
    let mut valid = Vec::with_capacity(p.pixels());
    let mut fallbacks = 0;
    let mut prod = vec![0.0; p.c()];
    for (pr, wr) in p.pixel_iter().zip(w.pixel_iter()) {
        for ((o, a), b) in prod.iter_mut().zip(pr).zip(wr) {
            *o = a * b;
        }
        let total: f64 = prod.iter().sum();
        if total > 0.0 {
            let c = argmax(&prod);
            classes.push(c as u8);
            valid.push(prod[c] / total > tau);
        } else {
            fallbacks += 1;
            let c = argmax(pr);
            classes.push(c as u8);
            valid.push(pr[c] > tau);
        }
    }
    Ok(Denoised {
        labels: OneHotMap::new([p.n(), p.h(), p.w()], p.c(), classes, valid)?,
        fallbacks,
    })
}

/// Rectified labels for one view plus the teacher features that produced them.
#[derive(Clone, Debug)]
pub struct RectifiedView {
    pub labels: OneHotMap,
    pub features: FeatureMap,
    pub fallbacks: usize,
}

/// Rectifies the stored `p⁰` of images `ids` using teacher output on the
/// weakly augmented `x`.
#[allow(clippy::too_many_arguments)]
pub fn rectify_view(
    teacher: &NetModel,
    x: &ImageBatch,
    ids: &[usize],
    bank: Option<&PrototypeBank>,
    store: &StagePseudoStore,
    source: ConfidenceSource,
    tau: f64,
    policy: &AugmentPolicy,
    rng: &mut LabRng,
) -> Result<RectifiedView> {
    let p0 = store.get(ids)?;
    let (features, soft) = teacher_predict(teacher, x, policy, rng)?;
    let omega = match source {
        ConfidenceSource::Prototype => {
            let bank = bank.ok_or_else(|| RmlError::State("prototype confidence needs a bank".into()))?;
            confidence_weights(&features, bank)?
        }
        ConfidenceSource::TeacherSoftmax => ConfidenceMap::new(soft.into_tensor())?,
        ConfidenceSource::Uniform => ConfidenceMap::uniform(p0.tensor().shape()),
    };
    let d = denoise(&p0, &omega, tau)?;
    Ok(RectifiedView {
        labels: d.labels,
        features,
        fallbacks: d.fallbacks,
    })
}

/// Denoises both images of a CutMix pair against `bank` and mixes the
/// rectified labels with `m`.
#[allow(clippy::too_many_arguments)]
pub fn mix_rectify(
    teacher: &NetModel,
    x1: &ImageBatch,
    ids1: &[usize],
    x2: &ImageBatch,
    ids2: &[usize],
    m: &CutMixMask,
    bank: &PrototypeBank,
    store: &StagePseudoStore,
    tau: f64,
    policy: &AugmentPolicy,
    rng: &mut LabRng,
) -> Result<OneHotMap> {
    let src = ConfidenceSource::Prototype;
    let a = rectify_view(teacher, x1, ids1, Some(bank), store, src, tau, policy, rng)?;
    let b = rectify_view(teacher, x2, ids2, Some(bank), store, src, tau, policy, rng)?;
    mix_label_maps(&a.labels, &b.labels, m)
}
