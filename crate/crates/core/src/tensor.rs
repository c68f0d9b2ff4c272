//! Dense NHWC tensors and the label containers exchanged between modules.
//!
//! Everything numeric is `f64`; a "pixel" is one `(n, y, x)` position and its
//! trailing channel vector is contiguous.

use crate::error::{Result, RmlError};

/// Tolerance used when checking that a vector is a probability distribution.
pub const PROB_TOL: f64 = 1e-6;

/// Row-major `N×H×W×C` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

/// Input images, `N×H×W×Ch`, values in `[0, 1]`.
pub type ImageBatch = Tensor4;
/// Per-pixel feature vectors `N×H×W×C`.
pub type FeatureMap = Tensor4;
/// Per-pixel class scores `N×H×W×K`.
pub type Logits = Tensor4;

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(RmlError::Input(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn h(&self) -> usize {
        self.shape[1]
    }
    pub fn w(&self) -> usize {
        self.shape[2]
    }
    pub fn c(&self) -> usize {
        self.shape[3]
    }

    /// Number of `(n, y, x)` positions.
    pub fn pixels(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        let c = self.shape[3];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.shape[3];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn pixel_iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.shape[3].max(1))
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Gathers the listed samples into a new batch.
    pub fn select(&self, indices: &[usize]) -> Tensor4 {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor4 {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }

    /// Stacks batches with identical per-sample shape.
    pub fn concat(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| RmlError::Input("concat of zero tensors".into()))?;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(RmlError::Input(format!(
                    "concat shape mismatch: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 {
            shape: [n, first.shape[1], first.shape[2], first.shape[3]],
            data,
        })
    }

    pub fn ensure_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(RmlError::Input(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel class indices, `N×H×W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(RmlError::Input(format!(
                "label map of shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(LabelMap { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    pub fn select(&self, indices: &[usize]) -> LabelMap {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        LabelMap {
            shape: [indices.len(), self.shape[1], self.shape[2]],
            data,
        }
    }

    pub fn max_label(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }
}

/// Hard per-pixel labels plus the threshold gate. One-hotness is structural:
/// each pixel stores exactly one class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OneHotMap {
    shape: [usize; 3],
    num_classes: usize,
    classes: Vec<u8>,
    valid: Vec<bool>,
}

impl OneHotMap {
    pub fn new(
        shape: [usize; 3],
        num_classes: usize,
        classes: Vec<u8>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let len: usize = shape.iter().product();
        if classes.len() != len || valid.len() != len {
            return Err(RmlError::Input(format!(
                "one-hot map of shape {shape:?} needs {len} entries"
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= num_classes) {
            return Err(RmlError::Input(format!(
                "class {bad} out of range for K={num_classes}"
            )));
        }
        Ok(OneHotMap {
            shape,
            num_classes,
            classes,
            valid,
        })
    }

    /// All pixels valid.
    pub fn from_labels(labels: &LabelMap, num_classes: usize) -> Result<Self> {
        OneHotMap::new(
            labels.shape(),
            num_classes,
            labels.data().to_vec(),
            vec![true; labels.len()],
        )
    }

    /// Parses a dense `N×H×W×K` binary tensor; every pixel must hold exactly
    /// one 1 and zeros elsewhere.
    pub fn from_dense(t: &Tensor4) -> Result<Self> {
        let k = t.c();
        let mut classes = Vec::with_capacity(t.pixels());
        for (i, px) in t.pixel_iter().enumerate() {
            let mut hot = None;
            for (j, &v) in px.iter().enumerate() {
                if v == 1.0 {
                    if hot.is_some() {
                        return Err(RmlError::Input(format!("pixel {i} has several hot classes")));
                    }
                    hot = Some(j);
                } else if v != 0.0 {
                    return Err(RmlError::Input(format!("pixel {i} holds non-binary value {v}")));
                }
            }
            let hot = hot.ok_or_else(|| RmlError::Input(format!("pixel {i} has no hot class")))?;
            classes.push(hot as u8);
        }
        OneHotMap::new(
            [t.n(), t.h(), t.w()],
            k,
            classes,
            vec![true; t.pixels()],
        )
    }

    pub fn to_dense(&self) -> Tensor4 {
        let mut t = Tensor4::zeros([self.shape[0], self.shape[1], self.shape[2], self.num_classes]);
        for (i, &c) in self.classes.iter().enumerate() {
            t.pixel_mut(i)[c as usize] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }
    pub fn len(&self) -> usize {
        self.classes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn as_label_map(&self) -> LabelMap {
        LabelMap {
            shape: self.shape,
            data: self.classes.clone(),
        }
    }

    /// Replaces the gate mask.
    pub fn with_valid(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.classes.len() {
            return Err(RmlError::Input("gate mask length mismatch".into()));
        }
        self.valid = valid;
        Ok(self)
    }

    /// Stacks maps along the batch axis.
    pub fn concat(parts: &[&OneHotMap]) -> Result<OneHotMap> {
        let first = parts
            .first()
            .ok_or_else(|| RmlError::Input("concat of zero label maps".into()))?;
        let mut n = 0;
        let mut classes = Vec::new();
        let mut valid = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] || p.num_classes != first.num_classes {
                return Err(RmlError::Input("label map concat mismatch".into()));
            }
            n += p.shape[0];
            classes.extend_from_slice(&p.classes);
            valid.extend_from_slice(&p.valid);
        }
        OneHotMap::new([n, first.shape[1], first.shape[2]], first.num_classes, classes, valid)
    }
}

/// Per-pixel probability vectors, `N×H×W×K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPrediction(Tensor4);

impl SoftPrediction {
    /// Validates nonnegativity and unit sum (within [`PROB_TOL`]) per pixel.
    pub fn new(t: Tensor4) -> Result<Self> {
        for (i, px) in t.pixel_iter().enumerate() {
            if px.iter().any(|&v| v.is_nan() || v < 0.0) {
                return Err(RmlError::Input(format!("pixel {i} has a negative or NaN probability")));
            }
            let s: f64 = px.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return Err(RmlError::Input(format!("pixel {i} probabilities sum to {s}")));
            }
        }
        Ok(SoftPrediction(t))
    }

    /// Max-shifted softmax over the channel axis.
    pub fn from_logits(logits: &Logits) -> Self {
        let mut out = logits.clone();
        let k = out.c();
        for px in out.data_mut().chunks_exact_mut(k) {
            softmax_in_place(px);
        }
        SoftPrediction(out)
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.0
    }
    pub fn into_tensor(self) -> Tensor4 {
        self.0
    }
    pub fn num_classes(&self) -> usize {
        self.0.c()
    }

    /// Argmax per pixel, ties toward the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let data = self.0.pixel_iter().map(|px| argmax(px) as u8).collect();
        LabelMap {
            shape: [self.0.n(), self.0.h(), self.0.w()],
            data,
        }
    }

    pub fn select(&self, indices: &[usize]) -> SoftPrediction {
        SoftPrediction(self.0.select(indices))
    }

    pub fn concat(parts: &[&SoftPrediction]) -> Result<SoftPrediction> {
        let ts: Vec<&Tensor4> = parts.iter().map(|p| &p.0).collect();
        Ok(SoftPrediction(Tensor4::concat(&ts)?))
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
