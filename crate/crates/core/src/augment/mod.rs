//! Photometric perturbations and CutMix.
//!
//! Augmentation never moves pixels, so a pseudo label computed on one view
//! of an image stays aligned with every other view.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RmlError};
use crate::tensor::{ImageBatch, OneHotMap};
use crate::LabRng;

/// Largest brightness shift at strength 1.
pub const MAX_BRIGHTNESS: f64 = 0.2;
/// Largest relative contrast change at strength 1.
pub const MAX_CONTRAST: f64 = 0.4;
/// Pixel noise standard deviation at strength 1.
pub const NOISE_SIGMA: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugLevel {
    Weak,
    Strong,
}

/// Strengths of the weak (γ) and strong (Γ) views. At strength `s` each
/// image gets a brightness shift drawn from `±s·MAX_BRIGHTNESS`, a contrast
/// factor from `1 ± s·MAX_CONTRAST` about its mean, and per-pixel Gaussian
/// noise of deviation `s·NOISE_SIGMA`, then is clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub weak_strength: f64,
    pub strong_strength: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            weak_strength: 0.25,
            strong_strength: 1.0,
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        AugmentPolicy {
            weak_strength: 0.0,
            strong_strength: 0.0,
        }
    }

    pub fn strength(&self, level: AugLevel) -> f64 {
        match level {
            AugLevel::Weak => self.weak_strength,
            AugLevel::Strong => self.strong_strength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("weak_strength", self.weak_strength), ("strong_strength", self.strong_strength)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(RmlError::config(name, format!("{v} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Adds `b` to every value of image `i`, clamping to `[0, 1]`.
pub fn brightness(x: &mut ImageBatch, i: usize, b: f64) {
    for v in x.sample_mut(i) {
        *v = (*v + b).clamp(0.0, 1.0);
    }
}

/// Scales image `i` about its mean by `factor`, clamping to `[0, 1]`.
pub fn contrast(x: &mut ImageBatch, i: usize, factor: f64) {
    let s = x.sample_mut(i);
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    for v in s {
        *v = (mean + (*v - mean) * factor).clamp(0.0, 1.0);
    }
}

/// Applies the policy at `level`. Strength 0 returns the input unchanged
/// and draws nothing from `rng`.
pub fn photometric(x: &ImageBatch, policy: &AugmentPolicy, level: AugLevel, rng: &mut LabRng) -> ImageBatch {
    let s = policy.strength(level);
    let mut out = x.clone();
    if s == 0.0 {
        return out;
    }
    let noise = Normal::new(0.0, s * NOISE_SIGMA).expect("finite positive sigma");
    for i in 0..out.n() {
        let b = rng.random_range(-1.0..=1.0) * s * MAX_BRIGHTNESS;
        let c = (1.0 + rng.random_range(-1.0..=1.0) * s * MAX_CONTRAST).max(0.0);
        brightness(&mut out, i, b);
        contrast(&mut out, i, c);
        for v in out.sample_mut(i) {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Axis-aligned rectangle on the image torus: it covers rows
/// `top..top+height` and columns `left..left+width`, both taken modulo
/// the image size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Binary H×W mixing mask, 1 inside `rect`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutMixMask {
    height: usize,
    width: usize,
    rect: Rect,
    m: Vec<u8>,
}

impl CutMixMask {
    pub fn from_rect(height: usize, width: usize, rect: Rect) -> Result<Self> {
        if rect.height > height || rect.width > width || rect.top >= height.max(1) || rect.left >= width.max(1) {
            return Err(RmlError::Input(format!("rect {rect:?} does not fit a {height}×{width} image")));
        }
        let mut m = vec![0u8; height * width];
        for dy in 0..rect.height {
            let y = (rect.top + dy) % height;
            for dx in 0..rect.width {
                m[y * width + (rect.left + dx) % width] = 1;
            }
        }
        Ok(CutMixMask { height, width, rect, m })
    }

    /// The all-ones mask (selects the first image everywhere).
    pub fn full(height: usize, width: usize) -> Self {
        CutMixMask {
            height,
            width,
            rect: Rect {
                top: 0,
                left: 0,
                height,
                width,
            },
            m: vec![1; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn rect(&self) -> Rect {
        self.rect
    }
    pub fn values(&self) -> &[u8] {
        &self.m
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.m[y * self.width + x] == 1
    }

    pub fn area(&self) -> usize {
        self.m.iter().map(|&v| v as usize).sum()
    }

    /// `1 − m`. The complement of a rectangle is generally not a
    /// rectangle, so `rect` is left describing the original.
    pub fn complement(&self) -> Self {
        CutMixMask {
            m: self.m.iter().map(|&v| 1 - v).collect(),
            ..self.clone()
        }
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height, self.width) {
            return Err(RmlError::Input(format!(
                "{}×{} mask applied to {h}×{w} maps",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Integer `(height, width)` pairs whose area is closest to half the image.
pub fn half_area_shapes(height: usize, width: usize) -> Vec<(usize, usize)> {
    let target = (height * width).div_ceil(2);
    let mut best = usize::MAX;
    let mut shapes = Vec::new();
    for hh in 1..=height {
        for ww in 1..=width {
            let gap = (hh * ww).abs_diff(target);
            if gap < best {
                best = gap;
                shapes.clear();
            }
            if gap == best {
                shapes.push((hh, ww));
            }
        }
    }
    shapes
}

/// Samples a half-area rectangle: the shape is uniform over
/// [`half_area_shapes`] and the top-left corner uniform over the torus, so
/// every pixel is covered with the same probability.
pub fn sample_rect_mask(height: usize, width: usize, rng: &mut LabRng) -> Result<CutMixMask> {
    if height < 2 || width < 2 {
        return Err(RmlError::Input(format!("CutMix needs H, W ≥ 2, got {height}×{width}")));
    }
    let shapes = half_area_shapes(height, width);
    let (hh, ww) = shapes[rng.random_range(0..shapes.len())];
    let rect = Rect {
        top: rng.random_range(0..height),
        left: rng.random_range(0..width),
        height: hh,
        width: ww,
    };
    CutMixMask::from_rect(height, width, rect)
}

/// `m·x1 + (1−m)·x2`, the same mask for every image and channel.
pub fn mix_images(x1: &ImageBatch, x2: &ImageBatch, m: &CutMixMask) -> Result<ImageBatch> {
    if x1.shape() != x2.shape() {
        return Err(RmlError::Input(format!(
            "cannot mix images of shapes {:?} and {:?}",
            x1.shape(),
            x2.shape()
        )));
    }
    m.check(x1.h(), x1.w())?;
    let mut out = x1.clone();
    let hw = x1.h() * x1.w();
    for p in 0..x1.pixels() {
        if m.m[p % hw] == 0 {
            out.pixel_mut(p).copy_from_slice(x2.pixel(p));
        }
    }
    Ok(out)
}

/// Takes class and gate from `y1` inside the mask and from `y2` outside.
pub fn mix_label_maps(y1: &OneHotMap, y2: &OneHotMap, m: &CutMixMask) -> Result<OneHotMap> {
    if y1.shape() != y2.shape() || y1.num_classes() != y2.num_classes() {
        return Err(RmlError::Input("cannot mix label maps of different shapes".into()));
    }
    let [_, h, w] = y1.shape();
    m.check(h, w)?;
    let hw = h * w;
    let pick = |i: usize| m.m[i % hw] == 1;
    let classes = (0..y1.len())
        .map(|i| if pick(i) { y1.classes()[i] } else { y2.classes()[i] })
        .collect();
    let valid = (0..y1.len())
        .map(|i| if pick(i) { y1.valid()[i] } else { y2.valid()[i] })
        .collect();
    OneHotMap::new(y1.shape(), y1.num_classes(), classes, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{LabelMap, Tensor4};
    use rand::SeedableRng;

    fn rng(seed: u64) -> LabRng {
        LabRng::seed_from_u64(seed)
    }

    fn ramp(shape: [usize; 4]) -> Tensor4 {
        let len = shape.iter().product::<usize>();
        Tensor4::from_vec(shape, (0..len).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect()).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let x = ramp([2, 4, 4, 3]);
        let out = photometric(&x, &AugmentPolicy::identity(), AugLevel::Strong, &mut rng(1));
        assert_eq!(out, x);
    }

    #[test]
    fn brightness_on_constant_image_clamps() {
        let mut x = Tensor4::filled([1, 3, 3, 1], 0.7);
        brightness(&mut x, 0, 0.2);
        assert!(x.data().iter().all(|&v| (v - 0.9).abs() < 1e-12));
        brightness(&mut x, 0, 0.5);
        assert!(x.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn photometric_is_seeded_and_in_range() {
        let x = ramp([3, 5, 5, 3]);
        let p = AugmentPolicy::default();
        let a = photometric(&x, &p, AugLevel::Strong, &mut rng(4));
        let b = photometric(&x, &p, AugLevel::Strong, &mut rng(4));
        assert_eq!(a, b);
        assert_ne!(a, x);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.shape(), x.shape());
    }

    #[test]
    fn mask_area_rules() {
        let mut r = rng(2);
        for _ in 0..50 {
            assert_eq!(sample_rect_mask(8, 8, &mut r).unwrap().area(), 32);
            assert_eq!(sample_rect_mask(2, 2, &mut r).unwrap().area(), 2);
        }
        assert!(sample_rect_mask(1, 8, &mut r).is_err());
    }

    #[test]
    fn mask_is_one_exactly_inside_rect() {
        let m = CutMixMask::from_rect(
            4,
            5,
            Rect {
                top: 3,
                left: 4,
                height: 2,
                width: 2,
            },
        )
        .unwrap();
        let ones: Vec<(usize, usize)> = (0..4)
            .flat_map(|y| (0..5).map(move |x| (y, x)))
            .filter(|&(y, x)| m.get(y, x))
            .collect();
        assert_eq!(ones, vec![(0, 0), (0, 4), (3, 0), (3, 4)]);
    }

    #[test]
    fn coverage_is_uniform() {
        let mut r = rng(3);
        let mut hits = [0u32; 64];
        let n = 10_000;
        for _ in 0..n {
            let m = sample_rect_mask(8, 8, &mut r).unwrap();
            for (h, &v) in hits.iter_mut().zip(m.values()) {
                *h += v as u32;
            }
        }
        for h in hits {
            let f = h as f64 / n as f64;
            assert!((f - 0.5).abs() <= 0.05, "coverage {f}");
        }
    }

    #[test]
    fn mixing_identities_and_counts() {
        let x1 = ramp([2, 4, 4, 2]);
        let x2 = Tensor4::filled([2, 4, 4, 2], 0.3);
        assert_eq!(mix_images(&x1, &x2, &CutMixMask::full(4, 4)).unwrap(), x1);
        let m = sample_rect_mask(4, 4, &mut rng(8)).unwrap();
        assert_eq!(
            mix_images(&x1, &x2, &m).unwrap(),
            mix_images(&x2, &x1, &m.complement()).unwrap()
        );
        let zeros = Tensor4::zeros([1, 4, 4, 2]);
        let ones = Tensor4::filled([1, 4, 4, 2], 1.0);
        let mixed = mix_images(&zeros, &ones, &m).unwrap();
        let sum: f64 = mixed.data().iter().sum();
        assert_eq!(sum, 2.0 * (16 - m.area()) as f64);
        assert!(mix_images(&x1, &zeros, &m).is_err());
    }

    #[test]
    fn label_mixing_follows_mask() {
        let a = OneHotMap::from_labels(&LabelMap::new([1, 2, 2], vec![0, 1, 2, 0]).unwrap(), 3).unwrap();
        let b = OneHotMap::from_labels(&LabelMap::new([1, 2, 2], vec![2, 2, 1, 1]).unwrap(), 3).unwrap();
        let m = CutMixMask::from_rect(
            2,
            2,
            Rect {
                top: 0,
                left: 0,
                height: 1,
                width: 2,
            },
        )
        .unwrap();
        let out = mix_label_maps(&a, &b, &m).unwrap();
        assert_eq!(out.classes(), &[0, 1, 1, 1]);
        assert_eq!(mix_label_maps(&a, &a, &m).unwrap(), a);
        assert_eq!(mix_label_maps(&a, &b, &CutMixMask::full(2, 2)).unwrap(), a);
    }
}
