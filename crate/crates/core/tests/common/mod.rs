#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rml_lab::netcore::{cross_entropy, ArchSpec, NetModel, NoiseConfig};
use rml_lab::tensor::{OneHotMap, Tensor4};
use rml_lab::LabRng;

pub fn rng(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

pub fn random_images(shape: [usize; 4], seed: u64) -> Tensor4 {
    let mut r = rng(seed);
    let len = shape.iter().product();
    Tensor4::from_vec(shape, (0..len).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn random_targets(shape: [usize; 3], k: usize, seed: u64) -> OneHotMap {
    let mut r = rng(seed);
    let len = shape.iter().product();
    let classes = (0..len).map(|_| r.random_range(0..k) as u8).collect();
    let valid = (0..len).map(|i| i % 5 != 3).collect();
    OneHotMap::new(shape, k, classes, valid).unwrap()
}

/// Largest relative error between analytic gradients and central finite
/// differences over every parameter entry. The noise stream is reseeded
/// for each evaluation so dropout and stochastic depth draw identical masks.
pub fn gradient_check(arch: ArchSpec, k: usize, c: usize, noise: NoiseConfig, n: usize) -> f64 {
    let mut model = NetModel::build(arch, k, c, noise, 11).unwrap();
    // Zero biases put dead-input pre-activations exactly on the ReLU kink.
    let mut r = rng(12);
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    for name in names.iter().filter(|n| n.ends_with("bias")) {
        for v in &mut model.param_mut(name).unwrap().data {
            *v = r.random_range(-0.1..0.1);
        }
    }
    let x = random_images([n, arch.height, arch.width, arch.in_channels], 5);
    let target = random_targets([n, arch.height, arch.width], k, 6);
    let loss_at = |m: &NetModel| {
        let pass = m.forward_train(&x, Some(&mut rng(99))).unwrap();
        cross_entropy(&pass.logits, &target, None).unwrap().0
    };
    let pass = model.forward_train(&x, Some(&mut rng(99))).unwrap();
    let (_, dlogits) = cross_entropy(&pass.logits, &target, None).unwrap();
    let grads = model.backward(&pass, &dlogits).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.iter().map(|(n, g)| (n.to_string(), g.to_vec())).collect();
    let step = 1e-4;
    let mut worst = 0.0f64;
    for (name, g) in analytic {
        for (i, gi) in g.iter().enumerate() {
            let orig = model.param(&name).unwrap().data[i];
            model.param_mut(&name).unwrap().data[i] = orig + step;
            let up = loss_at(&model);
            model.param_mut(&name).unwrap().data[i] = orig - step;
            let down = loss_at(&model);
            model.param_mut(&name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (numeric - gi).abs() / numeric.abs().max(gi.abs()).max(1e-6);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
