//! Class prototypes in a teacher's feature space and the distance-softmax
//! confidence weights derived from them.

use crate::error::{Result, RmlError};
use crate::netcore::{Checkpoint, NetModel};
use crate::tensor::{FeatureMap, ImageBatch, LabelMap, Tensor4, PROB_TOL};

/// Running per-class feature sums.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeAccumulator {
    k: usize,
    c: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl PrototypeAccumulator {
    pub fn new(k: usize, c: usize) -> Self {
        PrototypeAccumulator {
            k,
            c,
            sums: vec![0.0; k * c],
            counts: vec![0; k],
        }
    }

    /// Adds every pixel of `features` to the class `assign` gives it,
    /// skipping pixels where `valid` is false.
    pub fn add(&mut self, features: &FeatureMap, assign: &LabelMap, valid: Option<&[bool]>) -> Result<()> {
        if features.c() != self.c
            || assign.shape() != [features.n(), features.h(), features.w()]
            || valid.is_some_and(|v| v.len() != assign.len())
        {
            return Err(RmlError::Input(format!(
                "features {:?} and assignments {:?} disagree",
                features.shape(),
                assign.shape()
            )));
        }
        for (i, z) in features.pixel_iter().enumerate() {
            if valid.is_some_and(|v| !v[i]) {
                continue;
            }
            let k = assign.data()[i] as usize;
            if k >= self.k {
                return Err(RmlError::Input(format!("class {k} out of range for K={}", self.k)));
            }
            self.counts[k] += 1;
            for (s, v) in self.sums[k * self.c..(k + 1) * self.c].iter_mut().zip(z) {
                *s += v;
            }
        }
        Ok(())
    }

    /// Per-class means (`eta′`) and the classes that received any pixel.
    pub fn means(&self) -> (Vec<f64>, Vec<bool>) {
        let mut eta = vec![0.0; self.k * self.c];
        for k in 0..self.k {
            if self.counts[k] > 0 {
                let inv = 1.0 / self.counts[k] as f64;
                for (e, s) in eta[k * self.c..(k + 1) * self.c]
                    .iter_mut()
                    .zip(&self.sums[k * self.c..(k + 1) * self.c])
                {
                    *e = s * inv;
                }
            }
        }
        (eta, self.counts.iter().map(|&n| n > 0).collect())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Per-class mean feature of one batch.
pub fn batch_prototypes(features: &FeatureMap, assign: &LabelMap, k: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut acc = PrototypeAccumulator::new(k, features.c());
    acc.add(features, assign, None)?;
    Ok(acc.means())
}

/// K centroids `η` with momentum `λ`, uniform mixture weights `π`, and a
/// record of which classes have ever been observed.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    k: usize,
    c: usize,
    eta: Vec<f64>,
    pi: Vec<f64>,
    seen: Vec<bool>,
    lambda: f64,
}

impl PrototypeBank {
    pub fn new(eta: Vec<f64>, seen: Vec<bool>, c: usize, lambda: f64) -> Result<Self> {
        let k = seen.len();
        if eta.len() != k * c || c == 0 || k < 2 {
            return Err(RmlError::Input(format!("bank of {} values cannot be {k}×{c}", eta.len())));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(RmlError::config("lambda", format!("{lambda} outside [0, 1)")));
        }
        Ok(PrototypeBank {
            k,
            c,
            eta,
            pi: vec![1.0 / k as f64; k],
            seen,
            lambda,
        })
    }

    pub fn from_accumulator(acc: &PrototypeAccumulator, lambda: f64) -> Result<Self> {
        let (eta, seen) = acc.means();
        PrototypeBank::new(eta, seen, acc.c, lambda)
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }
    pub fn feature_dim(&self) -> usize {
        self.c
    }
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
    pub fn prototype(&self, k: usize) -> &[f64] {
        &self.eta[k * self.c..(k + 1) * self.c]
    }
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }
    pub fn seen(&self) -> &[bool] {
        &self.seen
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `η_k ← λ·η_k + (1−λ)·η′_k` for present classes. A class seen for
    /// the first time takes `η′_k` directly, since its old row holds no
    /// information.
    pub fn update(&mut self, eta_prime: &[f64], present: &[bool]) -> Result<()> {
        if eta_prime.len() != self.eta.len() || present.len() != self.k {
            return Err(RmlError::Input("batch prototypes do not match the bank".into()));
        }
        let (l, r) = (self.lambda, 1.0 - self.lambda);
        for k in (0..self.k).filter(|&k| present[k]) {
            let row = &mut self.eta[k * self.c..(k + 1) * self.c];
            let new = &eta_prime[k * self.c..(k + 1) * self.c];
            if self.seen[k] {
                for (e, n) in row.iter_mut().zip(new) {
                    *e = l * *e + r * n;
                }
            } else {
                row.copy_from_slice(new);
                self.seen[k] = true;
            }
        }
        Ok(())
    }

    pub fn write_into(&self, ck: &mut Checkpoint) {
        ck.push("bank.eta", vec![self.k, self.c], &self.eta);
        ck.push("bank.pi", vec![self.k], &self.pi);
        let seen: Vec<f64> = self.seen.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        ck.push("bank.seen", vec![self.k], &seen);
        ck.push("bank.lambda", vec![], &[self.lambda]);
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            ck.get(name)
                .ok_or_else(|| RmlError::Input(format!("checkpoint lacks `{name}`")))
        };
        let eta = get("bank.eta")?;
        let seen = get("bank.seen")?;
        let lambda = get("bank.lambda")?;
        let [k, c] = eta.shape[..] else {
            return Err(RmlError::Input("bank.eta must be K×C".into()));
        };
        if seen.data.len() != k || lambda.data.len() != 1 {
            return Err(RmlError::Input("bank tensors disagree on K".into()));
        }
        PrototypeBank::new(
            eta.data.iter().map(|&v| v as f64).collect(),
            seen.data.iter().map(|&v| v != 0.0).collect(),
            c,
            lambda.data[0] as f64,
        )
    }
}

/// Builds a bank from a model's eval-mode features. Each set contributes
/// ground-truth assignments when labels are given and the model's own
/// argmax otherwise.
pub fn init_bank(
    model: &NetModel,
    sets: &[(&ImageBatch, Option<&LabelMap>)],
    lambda: f64,
    chunk: usize,
) -> Result<PrototypeBank> {
    let mut acc = PrototypeAccumulator::new(model.num_classes(), model.feature_dim());
    for &(images, labels) in sets {
        let ids: Vec<usize> = (0..images.n()).collect();
        for part in ids.chunks(chunk.max(1)) {
            let x = images.select(part);
            let (z, p) = model.predict(&x, None)?;
            match labels {
                Some(l) => acc.add(&z, &l.select(part), None)?,
                None => acc.add(&z, &p.argmax(), None)?,
            }
        }
    }
    PrototypeBank::from_accumulator(&acc, lambda)
}

/// Per-pixel class weights ω, each row positive over seen classes and
/// summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap(Tensor4);

impl ConfidenceMap {
    pub fn new(omega: Tensor4) -> Result<Self> {
        for row in omega.pixel_iter() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| v.is_nan() || v < 0.0) || (s - 1.0).abs() > PROB_TOL {
                return Err(RmlError::Input("confidence rows must be nonnegative and sum to 1".into()));
            }
        }
        Ok(ConfidenceMap(omega))
    }

    pub fn uniform(shape: [usize; 4]) -> Self {
        ConfidenceMap(Tensor4::filled(shape, 1.0 / shape[3] as f64))
    }

    pub fn omega(&self) -> &Tensor4 {
        &self.0
    }
    pub fn into_tensor(self) -> Tensor4 {
        self.0
    }
}

/// `ω_k = π_k·exp(−‖z−η_k‖) / Σ_j π_j·exp(−‖z−η_j‖)` over seen classes,
/// with Euclidean distance on raw features.
pub fn confidence_weights(features: &FeatureMap, bank: &PrototypeBank) -> Result<ConfidenceMap> {
    confidence_weights_with_priors(features, bank, &bank.pi)
}

/// As [`confidence_weights`] with caller-supplied mixture weights.
pub fn confidence_weights_with_priors(features: &FeatureMap, bank: &PrototypeBank, pi: &[f64]) -> Result<ConfidenceMap> {
    if features.c() != bank.c {
        return Err(RmlError::Input(format!(
            "features have C={} but the bank was built for C={}",
            features.c(),
            bank.c
        )));
    }
    if pi.len() != bank.k || pi.iter().any(|&p| p.is_nan() || p <= 0.0) {
        return Err(RmlError::Input("priors must be K positive values".into()));
    }
    let seen: Vec<usize> = (0..bank.k).filter(|&k| bank.seen[k]).collect();
    if seen.len() < 2 {
        return Err(RmlError::State(format!(
            "confidence needs at least 2 seen prototypes, bank has {}",
            seen.len()
        )));
    }
    let [n, h, w, _] = features.shape();
    let mut omega = Tensor4::zeros([n, h, w, bank.k]);
    let mut logits = vec![0.0; seen.len()];
    for (i, z) in features.pixel_iter().enumerate() {
        for (l, &k) in logits.iter_mut().zip(&seen) {
            let d2: f64 = z.iter().zip(bank.prototype(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            *l = pi[k].ln() - d2.sqrt();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let row = omega.pixel_mut(i);
        for (l, &k) in logits.iter().zip(&seen) {
            row[k] = (l - max).exp() / total;
        }
    }
    Ok(ConfidenceMap(omega))
}
