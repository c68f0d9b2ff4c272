use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::arch::{ArchKind, ArchSpec};
use super::ops::{
    col2im3x3, dense_backward, dense_forward, gemm, im2col3x3, patchify, relu, relu_backward, unpatchify,
};
use crate::error::{Result, RmlError};
use crate::tensor::{softmax_in_place, FeatureMap, ImageBatch, Logits, Tensor4};
use crate::LabRng;

/// Model noise. Dropout sits on the last hidden layer (the feature map);
/// stochastic depth samples one keep/drop decision per image and residual
/// block. Both use inverted scaling so eval mode needs no correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub dropout_rate: f64,
    pub stochastic_depth_survival: f64,
    pub enabled: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            dropout_rate: 0.5,
            stochastic_depth_survival: 0.8,
            enabled: true,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        NoiseConfig {
            enabled: false,
            ..NoiseConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dropout_rate", self.dropout_rate),
            ("stochastic_depth_survival", self.stochastic_depth_survival),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(RmlError::config(name, format!("{v} is not a probability")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradients keyed by parameter name, in the model's parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub(crate) names: Vec<String>,
    pub(crate) values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &NetModel) -> Gradients {
        Gradients {
            names: model.params.iter().map(|p| p.name.clone()).collect(),
            values: model.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(Vec::as_slice))
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Elementwise sum of two gradient sets with identical keys.
    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        if self.names != other.names {
            return Err(RmlError::Internal("gradient key mismatch in add".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// `f` (feature extractor) and `g` (per-pixel linear classifier) with
/// their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetModel {
    arch: ArchSpec,
    num_classes: usize,
    feature_dim: usize,
    noise: NoiseConfig,
    mode: Mode,
    pub(crate) params: Vec<Param>,
}

/// Intermediate buffers kept by a training forward pass.
#[derive(Clone, Debug)]
enum Cache {
    Mlp {
        x: Vec<f64>,
        h1: Vec<f64>,
        z: Vec<f64>,
    },
    Cnn {
        c0: Vec<f64>,
        h0: Vec<f64>,
        c1: Vec<f64>,
        f1: Vec<f64>,
        s1: Vec<f64>,
        c2: Vec<f64>,
        f2: Vec<f64>,
        s2: Vec<f64>,
    },
    Attn {
        patches: Vec<f64>,
        e: Vec<f64>,
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
        attn: Vec<f64>,
        o: Vec<f64>,
        s: Vec<f64>,
        r: Vec<f64>,
        d: Vec<f64>,
    },
}

/// Output of [`NetModel::forward_train`]: features, logits and the tape
/// needed by [`NetModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub features: FeatureMap,
    pub logits: Logits,
    /// Features after dropout, i.e. the classifier input.
    classifier_in: Vec<f64>,
    dropout_scale: Option<Vec<f64>>,
    cache: Cache,
    batch: usize,
}

/// Weight and bias gradient buffers stored at `i` and `i + 1`.
fn weight_and_bias(vals: &mut [Vec<f64>], i: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = vals.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

fn glorot(rng: &mut LabRng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..=limit)).collect()
}

impl NetModel {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    pub fn noise(&self) -> NoiseConfig {
        self.noise
    }
    pub fn set_noise(&mut self, noise: NoiseConfig) {
        self.noise = noise;
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// True when both models have the same descriptor, sizes and parameter keys.
    pub fn same_architecture(&self, other: &NetModel) -> bool {
        self.arch == other.arch
            && self.num_classes == other.num_classes
            && self.feature_dim == other.feature_dim
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[i].data
    }

    /// Builds a model in train mode. Weights are Glorot-uniform in
    /// `±sqrt(6/(fan_in+fan_out))` drawn from a ChaCha8 stream seeded by
    /// `seed`, in parameter order; biases start at zero.
    pub fn build(arch: ArchSpec, num_classes: usize, feature_dim: usize, noise: NoiseConfig, seed: u64) -> Result<NetModel> {
        arch.validate()?;
        noise.validate()?;
        if num_classes < 2 {
            return Err(RmlError::config("num_classes", "need at least 2 classes"));
        }
        if num_classes > u8::MAX as usize {
            return Err(RmlError::config("num_classes", "at most 255 classes are supported"));
        }
        if feature_dim == 0 {
            return Err(RmlError::config("feature_dim", "must be positive"));
        }
        let mut rng = LabRng::seed_from_u64(seed);
        let (k, c, ch) = (num_classes, feature_dim, arch.in_channels);
        let mut params = Vec::new();
        let mut weight = |rng: &mut LabRng, name: &str, shape: Vec<usize>, fan_in: usize, fan_out: usize| {
            let len = shape.iter().product();
            params.push(Param {
                name: name.to_string(),
                data: glorot(rng, fan_in, fan_out, len),
                shape,
            });
        };
        let zeros = |name: &str, len: usize| Param {
            name: name.to_string(),
            shape: vec![len],
            data: vec![0.0; len],
        };
        let mut biases: Vec<(usize, Param)> = Vec::new();
        match arch.kind {
            ArchKind::Mlp => {
                let hdim = arch.hidden;
                weight(&mut rng, "fc1.weight", vec![ch, hdim], ch, hdim);
                biases.push((1, zeros("fc1.bias", hdim)));
                weight(&mut rng, "fc2.weight", vec![hdim, c], hdim, c);
                biases.push((3, zeros("fc2.bias", c)));
            }
            ArchKind::Cnn => {
                weight(&mut rng, "stem.weight", vec![9 * ch, c], 9 * ch, 9 * c);
                biases.push((1, zeros("stem.bias", c)));
                weight(&mut rng, "block1.weight", vec![9 * c, c], 9 * c, 9 * c);
                biases.push((3, zeros("block1.bias", c)));
                weight(&mut rng, "block2.weight", vec![9 * c, c], 9 * c, 9 * c);
                biases.push((5, zeros("block2.bias", c)));
            }
            ArchKind::Attn => {
                let (d, pp, t) = (arch.hidden, arch.patch * arch.patch, arch.tokens());
                weight(&mut rng, "embed.weight", vec![pp * ch, d], pp * ch, d);
                biases.push((1, zeros("embed.bias", d)));
                weight(&mut rng, "pos", vec![t, d], t, d);
                weight(&mut rng, "attn.q.weight", vec![d, d], d, d);
                weight(&mut rng, "attn.k.weight", vec![d, d], d, d);
                weight(&mut rng, "attn.v.weight", vec![d, d], d, d);
                weight(&mut rng, "attn.out.weight", vec![d, d], d, d);
                biases.push((7, zeros("attn.out.bias", d)));
                weight(&mut rng, "decode.weight", vec![d, pp * c], d, pp * c);
                biases.push((9, zeros("decode.bias", pp * c)));
            }
        }
        weight(&mut rng, "classifier.weight", vec![c, k], c, k);
        for (at, b) in biases {
            params.insert(at, b);
        }
        params.push(zeros("classifier.bias", k));
        Ok(NetModel {
            arch,
            num_classes,
            feature_dim,
            noise,
            mode: Mode::Train,
            params,
        })
    }

    /// Reassembles a model from stored parameters (checkpoint loading).
    pub(crate) fn from_params(
        arch: ArchSpec,
        num_classes: usize,
        feature_dim: usize,
        params: Vec<Param>,
    ) -> Result<NetModel> {
        let template = NetModel::build(arch, num_classes, feature_dim, NoiseConfig::off(), 0)?;
        if template.params.len() != params.len()
            || template
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(RmlError::Input(format!(
                "stored parameters do not match descriptor {arch}"
            )));
        }
        Ok(NetModel {
            params,
            mode: Mode::Eval,
            ..template
        })
    }

    fn check_input(&self, x: &ImageBatch) -> Result<()> {
        let a = &self.arch;
        if x.h() != a.height || x.w() != a.width || x.c() != a.in_channels {
            return Err(RmlError::Input(format!(
                "model {} expects N×{}×{}×{} input, got {:?}",
                a.kind,
                a.height,
                a.width,
                a.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    fn noisy(&self) -> bool {
        self.mode == Mode::Train && self.noise.enabled
    }

    /// Inference-style forward pass. Noise is sampled from `rng` only in
    /// train mode with noise enabled; otherwise the output depends on
    /// `(self, x)` alone and `rng` may be `None`.
    pub fn forward(&self, x: &ImageBatch, rng: Option<&mut LabRng>) -> Result<(FeatureMap, Logits)> {
        let pass = self.forward_train(x, rng)?;
        Ok((pass.features, pass.logits))
    }

    /// Probabilities as a convenience over [`NetModel::forward`].
    pub fn predict(&self, x: &ImageBatch, rng: Option<&mut LabRng>) -> Result<(FeatureMap, crate::tensor::SoftPrediction)> {
        let (f, l) = self.forward(x, rng)?;
        Ok((f, crate::tensor::SoftPrediction::from_logits(&l)))
    }

    /// Forward pass that records the tape for [`NetModel::backward`].
    pub fn forward_train(&self, x: &ImageBatch, mut rng: Option<&mut LabRng>) -> Result<ForwardPass> {
        self.check_input(x)?;
        if self.noisy() && rng.is_none() {
            return Err(RmlError::Input(
                "train-mode forward with noise enabled needs a random generator".into(),
            ));
        }
        let noisy = self.noisy();
        let n = x.n();
        let (h, w) = (x.h(), x.w());
        let rows = n * h * w;
        let c = self.feature_dim;

        let depth_scales = |rng: &mut Option<&mut LabRng>| -> Vec<f64> {
            let s = self.noise.stochastic_depth_survival;
            match rng.as_deref_mut() {
                Some(r) if noisy => (0..n)
                    .map(|_| if s > 0.0 && r.random::<f64>() < s { 1.0 / s } else { 0.0 })
                    .collect(),
                _ => vec![1.0; n],
            }
        };

        let (z, cache) = match self.arch.kind {
            ArchKind::Mlp => {
                let ch = self.arch.in_channels;
                let hd = self.arch.hidden;
                let xv = x.data().to_vec();
                let mut h1 = dense_forward(&xv, rows, self.p(0), Some(self.p(1)), ch, hd);
                relu(&mut h1);
                let mut z = dense_forward(&h1, rows, self.p(2), Some(self.p(3)), hd, c);
                relu(&mut z);
                (z.clone(), Cache::Mlp { x: xv, h1, z })
            }
            ArchKind::Cnn => {
                let ch = self.arch.in_channels;
                let c0 = im2col3x3(x.data(), n, h, w, ch);
                let mut h0 = dense_forward(&c0, rows, self.p(0), Some(self.p(1)), 9 * ch, c);
                relu(&mut h0);
                let block = |inp: &[f64], wi: usize, scales: &[f64]| {
                    let cols = im2col3x3(inp, n, h, w, c);
                    let mut f = dense_forward(&cols, rows, self.p(wi), Some(self.p(wi + 1)), 9 * c, c);
                    relu(&mut f);
                    let mut out = inp.to_vec();
                    let per = h * w * c;
                    for (b, &s) in scales.iter().enumerate() {
                        for i in b * per..(b + 1) * per {
                            out[i] += s * f[i];
                        }
                    }
                    (cols, f, out)
                };
                let s1 = depth_scales(&mut rng);
                let (c1, f1, h1) = block(&h0, 2, &s1);
                let s2 = depth_scales(&mut rng);
                let (c2, f2, h2) = block(&h1, 4, &s2);
                (
                    h2,
                    Cache::Cnn {
                        c0,
                        h0,
                        c1,
                        f1,
                        s1,
                        c2,
                        f2,
                        s2,
                    },
                )
            }
            ArchKind::Attn => {
                let a = self.arch;
                let (p, d) = (a.patch, a.hidden);
                let t = a.tokens();
                let pdim = p * p * a.in_channels;
                let trows = n * t;
                let patches = patchify(x.data(), n, h, w, a.in_channels, p);
                let mut e = dense_forward(&patches, trows, self.p(0), Some(self.p(1)), pdim, d);
                let pos = self.p(2);
                for tok in e.chunks_exact_mut(t * d) {
                    for (v, pv) in tok.iter_mut().zip(pos) {
                        *v += pv;
                    }
                }
                let q = dense_forward(&e, trows, self.p(3), None, d, d);
                let k = dense_forward(&e, trows, self.p(4), None, d, d);
                let v = dense_forward(&e, trows, self.p(5), None, d, d);
                let scale = 1.0 / (d as f64).sqrt();
                let mut attn = vec![0.0; n * t * t];
                let mut o = vec![0.0; trows * d];
                for b in 0..n {
                    let qs = &q[b * t * d..(b + 1) * t * d];
                    let ks = &k[b * t * d..(b + 1) * t * d];
                    let vs = &v[b * t * d..(b + 1) * t * d];
                    let am = &mut attn[b * t * t..(b + 1) * t * t];
                    gemm(t, d, t, qs, false, ks, true, am, false);
                    for row in am.chunks_exact_mut(t) {
                        for s in row.iter_mut() {
                            *s *= scale;
                        }
                        softmax_in_place(row);
                    }
                    gemm(t, t, d, am, false, vs, false, &mut o[b * t * d..(b + 1) * t * d], false);
                }
                let y = dense_forward(&o, trows, self.p(6), Some(self.p(7)), d, d);
                let s = depth_scales(&mut rng);
                let mut r = e.clone();
                for ((rb, yb), sb) in r.chunks_mut(t * d).zip(y.chunks(t * d)).zip(&s) {
                    for (ri, yi) in rb.iter_mut().zip(yb) {
                        *ri += sb * yi;
                    }
                }
                let mut dec = dense_forward(&r, trows, self.p(8), Some(self.p(9)), d, p * p * c);
                relu(&mut dec);
                let z = unpatchify(&dec, n, h, w, c, p);
                (
                    z,
                    Cache::Attn {
                        patches,
                        e,
                        q,
                        k,
                        v,
                        attn,
                        o,
                        s,
                        r,
                        d: dec,
                    },
                )
            }
        };

        let (classifier_in, dropout_scale) = match rng {
            Some(r) if noisy && self.noise.dropout_rate > 0.0 => {
                let keep = 1.0 - self.noise.dropout_rate;
                let mask: Vec<f64> = (0..z.len())
                    .map(|_| if keep > 0.0 && r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                (z.iter().zip(&mask).map(|(a, m)| a * m).collect(), Some(mask))
            }
            _ => (z.clone(), None),
        };
        let nc = self.params.len();
        let k = self.num_classes;
        let logits = dense_forward(&classifier_in, rows, self.p(nc - 2), Some(self.p(nc - 1)), c, k);
        Ok(ForwardPass {
            features: Tensor4::from_vec([n, h, w, c], z)?,
            logits: Tensor4::from_vec([n, h, w, k], logits)?,
            classifier_in,
            dropout_scale,
            cache,
            batch: n,
        })
    }

    /// Back-propagates `dlogits` (gradient of the loss w.r.t. the logits)
    /// through the recorded pass.
    pub fn backward(&self, pass: &ForwardPass, dlogits: &Logits) -> Result<Gradients> {
        dlogits.ensure_shape(pass.logits.shape(), "dlogits")?;
        let mut g = Gradients::zeros_like(self);
        let n = pass.batch;
        let (h, w) = (self.arch.height, self.arch.width);
        let rows = n * h * w;
        let c = self.feature_dim;
        let k = self.num_classes;
        let nc = self.params.len();

        let (head, tail) = g.values.split_at_mut(nc - 2);
        let (gcw, gcb) = tail.split_at_mut(1);
        let mut dz = dense_backward(
            &pass.classifier_in,
            rows,
            self.p(nc - 2),
            c,
            k,
            dlogits.data(),
            &mut gcw[0],
            Some(&mut gcb[0]),
            true,
        )
        .unwrap_or_default();
        if let Some(mask) = &pass.dropout_scale {
            for (d, m) in dz.iter_mut().zip(mask) {
                *d *= m;
            }
        }

        match &pass.cache {
            Cache::Mlp { x, h1, z } => {
                let ch = self.arch.in_channels;
                let hd = self.arch.hidden;
                relu_backward(z, &mut dz);
                let (gw2, gb2) = weight_and_bias(head, 2);
                let mut dh1 = dense_backward(h1, rows, self.p(2), hd, c, &dz, gw2, Some(gb2), true).unwrap();
                relu_backward(h1, &mut dh1);
                let (gw1, gb1) = weight_and_bias(head, 0);
                dense_backward(x, rows, self.p(0), ch, hd, &dh1, gw1, Some(gb1), false);
            }
            Cache::Cnn {
                c0,
                h0,
                c1,
                f1,
                s1,
                c2,
                f2,
                s2,
            } => {
                let ch = self.arch.in_channels;
                let per = h * w * c;
                // Residual: dh_in = dh_out + col2im(dcols of s·relu(conv)).
                let block_back = |dout: &[f64], cols: &[f64], f: &[f64], s: &[f64], wi: usize, vals: &mut [Vec<f64>]| {
                    let mut df = dout.to_vec();
                    for (b, &sc) in s.iter().enumerate() {
                        for v in &mut df[b * per..(b + 1) * per] {
                            *v *= sc;
                        }
                    }
                    relu_backward(f, &mut df);
                    let (gw, gb) = weight_and_bias(vals, wi);
                    let dcols = dense_backward(cols, rows, self.p(wi), 9 * c, c, &df, gw, Some(gb), true).unwrap();
                    let mut din = col2im3x3(&dcols, n, h, w, c);
                    for (a, b) in din.iter_mut().zip(dout) {
                        *a += b;
                    }
                    din
                };
                let dh1 = block_back(&dz, c2, f2, s2, 4, head);
                let mut dh0 = block_back(&dh1, c1, f1, s1, 2, head);
                relu_backward(h0, &mut dh0);
                let (gw, gb) = weight_and_bias(head, 0);
                dense_backward(c0, rows, self.p(0), 9 * ch, c, &dh0, gw, Some(gb), false);
            }
            Cache::Attn {
                patches,
                e,
                q,
                k: keys,
                v,
                attn,
                o,
                s,
                r,
                d: dec,
            } => {
                let a = self.arch;
                let (p, d) = (a.patch, a.hidden);
                let t = a.tokens();
                let pdim = p * p * a.in_channels;
                let trows = n * t;
                let mut ddec = patchify(&dz, n, h, w, c, p);
                relu_backward(dec, &mut ddec);
                let (gwd, gbd) = weight_and_bias(head, 8);
                let dr = dense_backward(r, trows, self.p(8), d, p * p * c, &ddec, gwd, Some(gbd), true).unwrap();
                // r = e + s·y
                let mut de = dr.clone();
                let mut dy = dr;
                for b in 0..n {
                    for v in &mut dy[b * t * d..(b + 1) * t * d] {
                        *v *= s[b];
                    }
                }
                let (gwo, gbo) = weight_and_bias(head, 6);
                let do_ = dense_backward(o, trows, self.p(6), d, d, &dy, gwo, Some(gbo), true).unwrap();
                let scale = 1.0 / (d as f64).sqrt();
                let mut dq = vec![0.0; trows * d];
                let mut dk = vec![0.0; trows * d];
                let mut dv = vec![0.0; trows * d];
                for b in 0..n {
                    let span = b * t * d..(b + 1) * t * d;
                    let am = &attn[b * t * t..(b + 1) * t * t];
                    let dob = &do_[span.clone()];
                    // dA = dO·Vᵀ, dV = Aᵀ·dO
                    let mut da = vec![0.0; t * t];
                    gemm(t, d, t, dob, false, &v[span.clone()], true, &mut da, false);
                    gemm(t, t, d, am, true, dob, false, &mut dv[span.clone()], false);
                    // softmax backward, then the 1/sqrt(d) scale
                    for (arow, darow) in am.chunks_exact(t).zip(da.chunks_exact_mut(t)) {
                        let dot: f64 = arow.iter().zip(darow.iter()).map(|(x, y)| x * y).sum();
                        for (dv_, &av) in darow.iter_mut().zip(arow) {
                            *dv_ = av * (*dv_ - dot) * scale;
                        }
                    }
                    gemm(t, t, d, &da, false, &keys[span.clone()], false, &mut dq[span.clone()], false);
                    gemm(t, t, d, &da, true, &q[span.clone()], false, &mut dk[span.clone()], false);
                }
                for (wi, dd) in [(3usize, &dq), (4, &dk), (5, &dv)] {
                    let dx = dense_backward(e, trows, self.p(wi), d, d, dd, &mut head[wi], None, true).unwrap();
                    for (a, b) in de.iter_mut().zip(&dx) {
                        *a += b;
                    }
                }
                // positional embedding gradient: sum over images
                for tok in de.chunks_exact(t * d) {
                    for (g, v) in head[2].iter_mut().zip(tok) {
                        *g += v;
                    }
                }
                let (gwe, gbe) = weight_and_bias(head, 0);
                dense_backward(patches, trows, self.p(0), pdim, d, &de, gwe, Some(gbe), false);
            }
        }
        Ok(g)
    }
}
