mod common;

use common::gradient_check;
use rml_lab::netcore::{ArchSpec, NoiseConfig};

const TOL: f64 = 1e-4;

#[test]
fn mlp_gradients_match_finite_differences() {
    let err = gradient_check(ArchSpec::mlp(3, 2, 2, 5), 3, 4, NoiseConfig::off(), 2);
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn cnn_gradients_match_finite_differences() {
    let err = gradient_check(ArchSpec::cnn(2, 4, 4), 3, 3, NoiseConfig::off(), 2);
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn attn_gradients_match_finite_differences() {
    let err = gradient_check(ArchSpec::attn(2, 4, 4, 4, 2), 3, 3, NoiseConfig::off(), 2);
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn gradients_hold_under_sampled_noise() {
    let noise = NoiseConfig::default();
    for arch in [
        ArchSpec::mlp(3, 2, 2, 5),
        ArchSpec::cnn(2, 4, 4),
        ArchSpec::attn(2, 4, 4, 4, 2),
    ] {
        let err = gradient_check(arch, 3, 3, noise, 3);
        assert!(err <= TOL, "{} relative error {err}", arch.kind);
    }
}
