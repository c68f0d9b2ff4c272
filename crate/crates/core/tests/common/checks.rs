//! Property suites shared by `properties.rs` and the acceptance run. Each
//! suite returns `Err` with a description of the first counterexample.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use rml_lab::augment::{mix_images, mix_label_maps, sample_rect_mask, CutMixMask, Rect};
use rml_lab::data::{make_split, IdxData, IdxTensor};
use rml_lab::metrics::{segmentation_scores, tv_distance};
use rml_lab::netcore::{ema_update, ArchSpec, NetModel, NoiseConfig};
use rml_lab::protobank::{
    confidence_weights, confidence_weights_with_priors, ConfidenceMap, PrototypeAccumulator, PrototypeBank,
};
use rml_lab::rectify::denoise;
use rml_lab::tensor::{softmax_in_place, LabelMap, OneHotMap, SoftPrediction, Tensor4};

use super::{gradient_check, random_images, rng};

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const SUITES: [Suite; 12] = [
    ("gradients match finite differences", gradients),
    ("softmax rows", softmax_rows),
    ("confidence normalization and invariances", omega_invariances),
    ("denoise oracle and uniform-omega invariance", denoise_oracle),
    ("threshold gating is monotone", threshold_monotone),
    ("prototype and teacher EMA decay", ema_decay),
    ("prototype accumulator means", accumulator_means),
    ("CutMix identities", cutmix_identities),
    ("TV distance axioms", tv_axioms),
    ("segmentation scores on every 3x3 K=3 map", segmentation_exhaustive),
    ("IDX round trip", idx_round_trip),
    ("split partition", split_partition),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Softmax rows of random logits, shape `[n, h, w, k]`.
fn soft(shape: [usize; 4], logits: &[f64]) -> SoftPrediction {
    let mut t = Tensor4::from_vec(shape, logits.to_vec()).unwrap();
    for i in 0..t.pixels() {
        softmax_in_place(t.pixel_mut(i));
    }
    SoftPrediction::new(t).unwrap()
}

fn gradients() -> Result<(), String> {
    for arch in [ArchSpec::mlp(3, 2, 2, 5), ArchSpec::cnn(2, 4, 4), ArchSpec::attn(2, 4, 4, 4, 2)] {
        for noise in [NoiseConfig::off(), NoiseConfig::default()] {
            let err = gradient_check(arch, 3, 3, noise, 2);
            if err > 1e-4 {
                return Err(format!("{} relative error {err:e}", arch.kind));
            }
        }
    }
    Ok(())
}

fn softmax_rows() -> Result<(), String> {
    run(256, (prop::collection::vec(-30.0..30.0f64, 2..8), -100.0..100.0f64), |(v, shift)| {
        let mut a = v.clone();
        softmax_in_place(&mut a);
        let mut b: Vec<f64> = v.iter().map(|x| x + shift).collect();
        softmax_in_place(&mut b);
        prop_assert!(close(a.iter().sum::<f64>(), 1.0, 1e-12));
        prop_assert!(a.iter().all(|&x| x > 0.0));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(*x, *y, 1e-9));
        }
        Ok(())
    })
}

fn omega_invariances() -> Result<(), String> {
    let strategy = (2usize..6, 1usize..5).prop_flat_map(|(k, c)| {
        (
            Just(k),
            Just(c),
            prop::collection::vec(-3.0..3.0f64, k * c),
            prop::collection::vec(-3.0..3.0f64, 6 * c),
            prop::collection::vec(-5.0..5.0f64, c),
            prop::collection::vec(0.05..1.0f64, k),
            0.1..10.0f64,
        )
    });
    run(128, strategy, |(k, c, eta, z, shift, pi, scale)| {
        let bank = PrototypeBank::new(eta.clone(), vec![true; k], c, 0.9).unwrap();
        let feats = Tensor4::from_vec([1, 2, 3, c], z.clone()).unwrap();
        let om = confidence_weights(&feats, &bank).unwrap();
        // Direct evaluation of the distance softmax with uniform priors.
        for (i, row) in om.omega().pixel_iter().enumerate() {
            prop_assert!(close(row.iter().sum::<f64>(), 1.0, 1e-12));
            let zi = &z[i * c..(i + 1) * c];
            let e: Vec<f64> = (0..k)
                .map(|j| {
                    let d: f64 = zi.iter().zip(&eta[j * c..(j + 1) * c]).map(|(a, b)| (a - b).powi(2)).sum();
                    (-d.sqrt()).exp()
                })
                .collect();
            let total: f64 = e.iter().sum();
            for (w, x) in row.iter().zip(&e) {
                prop_assert!(close(*w, x / total, 1e-9));
            }
        }
        // Translating features and prototypes together.
        let eta_t: Vec<f64> = eta.iter().enumerate().map(|(i, v)| v + shift[i % c]).collect();
        let z_t: Vec<f64> = z.iter().enumerate().map(|(i, v)| v + shift[i % c]).collect();
        let om_t = confidence_weights(
            &Tensor4::from_vec([1, 2, 3, c], z_t).unwrap(),
            &PrototypeBank::new(eta_t, vec![true; k], c, 0.9).unwrap(),
        )
        .unwrap();
        for (a, b) in om.omega().data().iter().zip(om_t.omega().data()) {
            prop_assert!(close(*a, *b, 1e-9));
        }
        // Relabeling the classes permutes the weights.
        let perm: Vec<usize> = (0..k).rev().collect();
        let eta_p: Vec<f64> = perm.iter().flat_map(|&j| eta[j * c..(j + 1) * c].to_vec()).collect();
        let om_p = confidence_weights(&feats, &PrototypeBank::new(eta_p, vec![true; k], c, 0.9).unwrap()).unwrap();
        for (a, b) in om.omega().pixel_iter().zip(om_p.omega().pixel_iter()) {
            for (j, &p) in perm.iter().enumerate() {
                prop_assert!(close(b[j], a[p], 1e-9));
            }
        }
        // Priors matter only up to a common scale.
        let scaled: Vec<f64> = pi.iter().map(|p| p * scale).collect();
        let a = confidence_weights_with_priors(&feats, &bank, &pi).unwrap();
        let b = confidence_weights_with_priors(&feats, &bank, &scaled).unwrap();
        for (x, y) in a.omega().data().iter().zip(b.omega().data()) {
            prop_assert!(close(*x, *y, 1e-9));
        }
        Ok(())
    })
}

fn denoise_oracle() -> Result<(), String> {
    let fixed = denoise(
        &SoftPrediction::new(Tensor4::from_vec([1, 1, 1, 2], vec![0.6, 0.4]).unwrap()).unwrap(),
        &ConfidenceMap::new(Tensor4::from_vec([1, 1, 1, 2], vec![0.25, 0.75]).unwrap()).unwrap(),
        0.0,
    )
    .unwrap();
    if fixed.labels.classes() != [1] {
        return Err(format!("(0.6, 0.4)·(0.25, 0.75) gave class {:?}", fixed.labels.classes()));
    }
    let strategy = (2usize..6).prop_flat_map(|k| {
        (
            Just(k),
            prop::collection::vec(-6.0..6.0f64, 8 * k),
            prop::collection::vec(-6.0..6.0f64, 8 * k),
        )
    });
    run(256, strategy, |(k, a, b)| {
        let p0 = soft([2, 2, 2, k], &a);
        let w = soft([2, 2, 2, k], &b);
        let out = denoise(&p0, &ConfidenceMap::new(w.tensor().clone()).unwrap(), 0.0).unwrap();
        for (i, (pr, wr)) in p0.tensor().pixel_iter().zip(w.tensor().pixel_iter()).enumerate() {
            let prod: Vec<f64> = pr.iter().zip(wr).map(|(x, y)| x * y).collect();
            let best = prod.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(prod[out.labels.classes()[i] as usize], best);
        }
        prop_assert!(out.labels.valid().iter().all(|&v| v));
        let uniform = denoise(&p0, &ConfidenceMap::uniform([2, 2, 2, k]), 0.0).unwrap();
        prop_assert_eq!(uniform.labels.as_label_map(), p0.argmax());
        Ok(())
    })
}

fn threshold_monotone() -> Result<(), String> {
    let strategy = (
        prop::collection::vec(-4.0..4.0f64, 36),
        prop::collection::vec(-4.0..4.0f64, 36),
        0.0..1.0f64,
        0.0..1.0f64,
    );
    run(256, strategy, |(a, b, t1, t2)| {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let p0 = soft([1, 3, 4, 3], &a);
        let w = ConfidenceMap::new(soft([1, 3, 4, 3], &b).into_tensor()).unwrap();
        let x = denoise(&p0, &w, lo).unwrap();
        let y = denoise(&p0, &w, hi).unwrap();
        prop_assert_eq!(x.labels.classes(), y.labels.classes());
        for (u, v) in x.labels.valid().iter().zip(y.labels.valid()) {
            prop_assert!(*u || !*v);
        }
        Ok(())
    })
}

fn ema_decay() -> Result<(), String> {
    let strategy = (0.5..0.999f64, 0.5..0.9999f64, 0u64..1000);
    run(16, strategy, |(alpha, lambda, seed)| {
        let student = NetModel::build(ArchSpec::mlp(2, 1, 2, 4), 3, 2, NoiseConfig::off(), seed).unwrap();
        let mut teacher = NetModel::build(ArchSpec::mlp(2, 1, 2, 4), 3, 2, NoiseConfig::off(), seed + 1).unwrap();
        let gap = |t: &NetModel| -> Vec<f64> {
            t.params()
                .iter()
                .zip(student.params())
                .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect::<Vec<_>>())
                .collect()
        };
        let g0 = gap(&teacher);
        for t in 1..=100 {
            ema_update(&mut teacher, &student, alpha).unwrap();
            let f = alpha.powi(t);
            for (g, g0) in gap(&teacher).iter().zip(&g0) {
                prop_assert!((g - f * g0).abs() <= 1e-9 * g0.abs().max(1e-300) + 1e-15, "t={t}");
            }
        }
        let eta0: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let target: Vec<f64> = (0..6).map(|i| (i * i) as f64 * 0.1).collect();
        let mut bank = PrototypeBank::new(eta0.clone(), vec![true; 3], 2, lambda).unwrap();
        for t in 1..=100 {
            bank.update(&target, &[true; 3]).unwrap();
            let f = lambda.powi(t);
            for ((e, e0), n) in bank.eta().iter().zip(&eta0).zip(&target) {
                let want = f * (e0 - n);
                prop_assert!((e - n - want).abs() <= 1e-9 * (e0 - n).abs() + 1e-12, "t={t}");
            }
        }
        Ok(())
    })
}

fn accumulator_means() -> Result<(), String> {
    let strategy = (
        prop::collection::vec(-2.0..2.0f64, 2 * 3 * 3 * 2),
        prop::collection::vec(0u8..4, 2 * 3 * 3),
        prop::collection::vec(any::<bool>(), 2 * 3 * 3),
    );
    run(128, strategy, |(z, assign, valid)| {
        let feats = Tensor4::from_vec([2, 3, 3, 2], z.clone()).unwrap();
        let labels = LabelMap::new([2, 3, 3], assign.clone()).unwrap();
        let mut acc = PrototypeAccumulator::new(4, 2);
        acc.add(&feats, &labels, Some(&valid)).unwrap();
        let (eta, seen) = acc.means();
        for k in 0..4u8 {
            let members: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == k && valid[i]).collect();
            prop_assert_eq!(seen[k as usize], !members.is_empty());
            for d in 0..2 {
                let want = if members.is_empty() {
                    0.0
                } else {
                    members.iter().map(|&i| z[i * 2 + d]).sum::<f64>() / members.len() as f64
                };
                prop_assert!(close(eta[k as usize * 2 + d], want, 1e-12));
            }
        }
        Ok(())
    })
}

fn cutmix_identities() -> Result<(), String> {
    let strategy = (2usize..9, 2usize..9, 0u64..10_000);
    run(128, strategy, |(h, w, seed)| {
        let x1 = random_images([2, h, w, 3], seed);
        let x2 = random_images([2, h, w, 3], seed + 1);
        let mut r = rng(seed);
        let m = sample_rect_mask(h, w, &mut r).unwrap();
        prop_assert_eq!(m.area(), m.rect().height * m.rect().width);
        prop_assert!(m.area().abs_diff((h * w).div_ceil(2)) <= h.max(w));
        prop_assert_eq!(mix_images(&x1, &x2, &CutMixMask::full(h, w)).unwrap(), x1.clone());
        prop_assert_eq!(mix_images(&x1, &x2, &CutMixMask::full(h, w).complement()).unwrap(), x2.clone());
        prop_assert_eq!(m.complement().complement(), m.clone());
        prop_assert_eq!(
            mix_images(&x1, &x2, &m).unwrap(),
            mix_images(&x2, &x1, &m.complement()).unwrap()
        );
        let mixed = mix_images(&x1, &x2, &m).unwrap();
        for p in 0..mixed.pixels() {
            let (y, xx) = ((p / w) % h, p % w);
            let src = if m.get(y, xx) { &x1 } else { &x2 };
            prop_assert_eq!(mixed.pixel(p), src.pixel(p));
        }
        let n = 2 * h * w;
        let y1 = OneHotMap::new([2, h, w], 3, (0..n).map(|i| (i % 3) as u8).collect(), vec![true; n]).unwrap();
        let y2 = OneHotMap::new([2, h, w], 3, (0..n).map(|i| ((i + 1) % 3) as u8).collect(), (0..n).map(|i| i % 2 == 0).collect()).unwrap();
        let ym = mix_label_maps(&y1, &y2, &m).unwrap();
        let dense = ym.to_dense();
        for (i, row) in dense.pixel_iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
            prop_assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
            let inside = m.get((i / w) % h, i % w);
            let (src_c, src_v) = if inside { (y1.classes()[i], y1.valid()[i]) } else { (y2.classes()[i], y2.valid()[i]) };
            prop_assert_eq!(ym.classes()[i], src_c);
            prop_assert_eq!(ym.valid()[i], src_v);
        }
        Ok(())
    })?;
    let wrap = CutMixMask::from_rect(4, 4, Rect { top: 3, left: 3, height: 2, width: 2 }).map_err(|e| e.to_string())?;
    if !(wrap.get(3, 3) && wrap.get(0, 0) && wrap.get(0, 3) && wrap.get(3, 0) && wrap.area() == 4) {
        return Err("rectangle does not wrap around the image edges".into());
    }
    Ok(())
}

fn tv_axioms() -> Result<(), String> {
    let strategy = (2usize..6).prop_flat_map(|k| {
        (
            Just(k),
            prop::collection::vec(-5.0..5.0f64, 6 * k),
            prop::collection::vec(-5.0..5.0f64, 6 * k),
            prop::collection::vec(-5.0..5.0f64, 6 * k),
        )
    });
    run(256, strategy, |(k, a, b, c)| {
        let (p, q, r) = (soft([1, 2, 3, k], &a), soft([1, 2, 3, k], &b), soft([1, 2, 3, k], &c));
        let tv = |x: &SoftPrediction, y: &SoftPrediction| tv_distance(x, y).unwrap();
        prop_assert_eq!(tv(&p, &p), 0.0);
        prop_assert!(close(tv(&p, &q), tv(&q, &p), 1e-15));
        prop_assert!(tv(&p, &r) <= tv(&p, &q) + tv(&q, &r) + 1e-12);
        prop_assert!((0.0..=1.0).contains(&tv(&p, &q)));
        Ok(())
    })?;
    let one = |c: usize| SoftPrediction::new(Tensor4::from_vec([1, 1, 1, 3], (0..3).map(|i| (i == c) as u8 as f64).collect()).unwrap()).unwrap();
    let d = tv_distance(&one(0), &one(2)).map_err(|e| e.to_string())?;
    if d != 1.0 {
        return Err(format!("disjoint one-hot rows at distance {d}"));
    }
    Ok(())
}

/// IoU of class `c` counted straight from the definition.
fn iou_oracle(pred: &[u8], gt: &[u8], c: u8) -> Option<f64> {
    let inter = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g == c).count();
    let union = pred.iter().zip(gt).filter(|(p, g)| **p == c || **g == c).count();
    (union > 0).then(|| inter as f64 / union as f64)
}

fn segmentation_exhaustive() -> Result<(), String> {
    let decode = |mut code: usize| -> Vec<u8> {
        (0..9)
            .map(|_| {
                let v = (code % 3) as u8;
                code /= 3;
                v
            })
            .collect()
    };
    let total = 3usize.pow(9);
    // Every map is scored against itself, a fixed mixed map, and a
    // relabeled and shifted copy of itself.
    let fixed = decode(5_000);
    for code in 0..total {
        let gt = decode(code);
        let shifted: Vec<u8> = (0..9).map(|i| (gt[(i + 4) % 9] + 1) % 3).collect();
        for pred in [gt.clone(), fixed.clone(), shifted] {
            let s = segmentation_scores(
                &LabelMap::new([1, 3, 3], pred.clone()).unwrap(),
                &LabelMap::new([1, 3, 3], gt.clone()).unwrap(),
                3,
            )
            .map_err(|e| e.to_string())?;
            let iou: Vec<Option<f64>> = (0..3).map(|c| iou_oracle(&pred, &gt, c)).collect();
            let present: Vec<f64> = iou.iter().flatten().copied().collect();
            let miou = present.iter().sum::<f64>() / present.len() as f64;
            let acc = pred.iter().zip(&gt).filter(|(p, g)| p == g).count() as f64 / 9.0;
            let iou_ok = s.iou.iter().zip(&iou).all(|(a, b)| match (a, b) {
                (Some(x), Some(y)) => close(*x, *y, 1e-12),
                (None, None) => true,
                _ => false,
            });
            if !iou_ok || !close(s.miou, miou, 1e-12) || !close(s.pixel_accuracy, acc, 1e-12) {
                return Err(format!("pred {pred:?} gt {gt:?}: got {s:?}"));
            }
        }
    }
    Ok(())
}

fn idx_round_trip() -> Result<(), String> {
    let dims = prop::collection::vec(1usize..5, 1..4);
    let strategy = (dims, 0u8..6, any::<u64>());
    run(256, strategy, |(dims, kind, seed)| {
        let n: usize = dims.iter().product();
        let mut r = rng(seed);
        use rand::Rng;
        let data = match kind {
            0 => IdxData::U8((0..n).map(|_| r.random()).collect()),
            1 => IdxData::I8((0..n).map(|_| r.random()).collect()),
            2 => IdxData::I16((0..n).map(|_| r.random()).collect()),
            3 => IdxData::I32((0..n).map(|_| r.random()).collect()),
            4 => IdxData::F32((0..n).map(|_| r.random_range(-1e6..1e6)).collect()),
            _ => IdxData::F64((0..n).map(|_| r.random_range(-1e12..1e12)).collect()),
        };
        let t = IdxTensor::new(dims, data).unwrap();
        let bytes = t.to_bytes();
        let back = IdxTensor::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.to_bytes(), bytes);
        Ok(())
    })
}

fn split_partition() -> Result<(), String> {
    let strategy = (8usize..300, 0.01..1.0f64, any::<u64>());
    run(256, strategy, |(n, frac, seed)| {
        let Ok(s) = make_split(n, frac, seed) else {
            prop_assert_eq!((frac * n as f64).round() as usize, 0);
            return Ok(());
        };
        prop_assert_eq!(s.labeled.len(), (frac * n as f64).round() as usize);
        let mut all: Vec<usize> = s.labeled.iter().chain(&s.unlabeled).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(make_split(n, frac, seed).unwrap(), s);
        Ok(())
    })
}
