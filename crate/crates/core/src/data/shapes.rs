//! Synthetic segmentation: textured colored rectangles and disks on a
//! background, with one class that is both rare and small.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, RmlError};
use crate::tensor::{LabelMap, Tensor4};
use crate::LabRng;

const BACKGROUND: [f64; 3] = [0.45, 0.45, 0.45];

/// Color of foreground class `k`, whose hue sits at `k−1` plus `shift`
/// in units of the spacing between class hues.
fn palette(k: usize, num_classes: usize, shift: f64) -> [f64; 3] {
    let hue = ((k - 1) as f64 + shift).rem_euclid((num_classes - 1) as f64) / (num_classes - 1) as f64 * 6.0;
    let (s, v) = (0.55, 0.75);
    let f = hue - hue.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match hue.floor() as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Generator settings. Class 0 is background and class `K−1` is the rare
/// one: each shape takes it with probability `rare_class_freq` and it is
/// always a small disk. Other classes alternate between rectangles (odd)
/// and disks (even).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapesConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub rare_class_freq: f64,
    /// Per-pixel Gaussian texture noise.
    pub texture_sigma: f64,
    /// Per-image multiplicative gain range.
    pub gain: [f64; 2],
    /// Per-image additive offset, drawn from `±offset`.
    pub offset: f64,
    /// Per-shape hue shift, drawn from `±hue_jitter` class spacings.
    pub hue_jitter: f64,
    /// Radius range of the rare class disks, in pixels.
    pub rare_radius: [f64; 2],
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig {
            height: 16,
            width: 16,
            num_classes: 6,
            rare_class_freq: 0.15,
            texture_sigma: 0.12,
            gain: [0.75, 1.15],
            offset: 0.08,
            hue_jitter: 0.0,
            rare_radius: [1.0, 1.6],
        }
    }
}

impl ShapesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 3 || self.num_classes > u8::MAX as usize {
            return Err(RmlError::config("num_classes", "shapes needs 3 ≤ K ≤ 255"));
        }
        if !(self.rare_class_freq > 0.0 && self.rare_class_freq < 0.5) {
            return Err(RmlError::config(
                "rare_class_freq",
                format!("{} outside (0, 0.5)", self.rare_class_freq),
            ));
        }
        if self.height < 8 || self.width < 8 {
            return Err(RmlError::config("image_size", "shapes needs images of at least 8×8"));
        }
        if !(self.texture_sigma.is_finite() && self.texture_sigma >= 0.0) {
            return Err(RmlError::config("texture_sigma", "must be a nonnegative number"));
        }
        if !(self.gain[0].is_finite() && self.gain[0] > 0.0 && self.gain[0] < self.gain[1] && self.gain[1].is_finite()) {
            return Err(RmlError::config("gain", "needs 0 < low < high"));
        }
        if !(self.offset.is_finite() && self.offset > 0.0) {
            return Err(RmlError::config("offset", "must be positive"));
        }
        let [r0, r1] = self.rare_radius;
        if !(r0 >= 0.5 && r0 < r1 && 2.0 * r1 < self.height.min(self.width) as f64) {
            return Err(RmlError::config("rare_radius", "needs 0.5 ≤ low < high < half the image"));
        }
        if !(self.hue_jitter >= 0.0 && self.hue_jitter < 0.5) {
            return Err(RmlError::config("hue_jitter", "must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Shorthand for [`generate_shapes`] with default nuisance settings.
pub fn generate_shapes_dataset(
    n: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    rare_class_freq: f64,
    seed: u64,
) -> Result<Dataset> {
    let cfg = ShapesConfig {
        height,
        width,
        num_classes,
        rare_class_freq,
        ..ShapesConfig::default()
    };
    generate_shapes(n, &cfg, seed)
}

/// Generates `n` samples of size `height×width×3`. Colors get a per-image
/// gain and offset plus texture noise, and values are rounded to f32 so
/// the stored dataset reloads exactly.
pub fn generate_shapes(n: usize, cfg: &ShapesConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let (height, width, num_classes) = (cfg.height, cfg.width, cfg.num_classes);
    let rare_class_freq = cfg.rare_class_freq;
    let mut rng = LabRng::seed_from_u64(seed);
    let texture = Normal::new(0.0, cfg.texture_sigma).expect("validated sigma");
    let rare = num_classes - 1;
    let per = height * width;
    let mut images = vec![0.0; n * per * 3];
    let mut labels = vec![0u8; n * per];
    let mut colors = vec![BACKGROUND; per];
    for i in 0..n {
        let lab = &mut labels[i * per..(i + 1) * per];
        let color = &mut colors[..];
        color.fill(BACKGROUND);
        for _ in 0..rng.random_range(1..=3) {
            let class = if rng.random::<f64>() < rare_class_freq {
                rare
            } else {
                rng.random_range(1..rare)
            };
            let shift = if cfg.hue_jitter > 0.0 {
                rng.random_range(-cfg.hue_jitter..cfg.hue_jitter)
            } else {
                0.0
            };
            let rgb = palette(class, num_classes, shift);
            if class == rare || class % 2 == 0 {
                let r = if class == rare {
                    rng.random_range(cfg.rare_radius[0]..cfg.rare_radius[1])
                } else {
                    rng.random_range(2.0..(height.min(width) as f64 / 4.0).max(2.5))
                };
                let cy = rng.random_range(r..height as f64 - r);
                let cx = rng.random_range(r..width as f64 - r);
                for y in 0..height {
                    for x in 0..width {
                        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                        if dy * dy + dx * dx <= r * r {
                            lab[y * width + x] = class as u8;
                            color[y * width + x] = rgb;
                        }
                    }
                }
            } else {
                let hh = rng.random_range(3..=height / 2);
                let ww = rng.random_range(3..=width / 2);
                let top = rng.random_range(0..=height - hh);
                let left = rng.random_range(0..=width - ww);
                for y in top..top + hh {
                    for x in left..left + ww {
                        lab[y * width + x] = class as u8;
                        color[y * width + x] = rgb;
                    }
                }
            }
        }
        let gain = rng.random_range(cfg.gain[0]..cfg.gain[1]);
        let offset = rng.random_range(-cfg.offset..cfg.offset);
        let img = &mut images[i * per * 3..(i + 1) * per * 3];
        for (p, base) in color.iter().enumerate() {
            for ch in 0..3 {
                let v = (gain * base[ch] + offset + texture.sample(&mut rng)).clamp(0.0, 1.0);
                img[p * 3 + ch] = v as f32 as f64;
            }
        }
    }
    Dataset::new(
        Tensor4::from_vec([n, height, width, 3], images)?,
        LabelMap::new([n, height, width], labels)?,
        num_classes,
    )
}
