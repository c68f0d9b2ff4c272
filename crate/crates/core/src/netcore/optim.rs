use super::model::{Gradients, NetModel};
use crate::error::{Result, RmlError};

/// Plain SGD: `θ ← θ − lr·g` for every parameter.
pub fn sgd_step(model: &mut NetModel, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.names.len() != model.params.len()
        || model
            .params
            .iter()
            .zip(&grads.names)
            .zip(&grads.values)
            .any(|((p, n), g)| &p.name != n || p.data.len() != g.len())
    {
        return Err(RmlError::Internal("gradient keys do not match model parameters".into()));
    }
    if lr == 0.0 {
        return Ok(());
    }
    for (p, g) in model.params.iter_mut().zip(&grads.values) {
        for (v, d) in p.data.iter_mut().zip(g) {
            *v -= lr * d;
        }
    }
    Ok(())
}

/// Mean-teacher update: `θ̃ ← α·θ̃ + (1−α)·θ`.
pub fn ema_update(teacher: &mut NetModel, student: &NetModel, alpha: f64) -> Result<()> {
    if !teacher.same_architecture(student) {
        return Err(RmlError::Internal(
            "teacher and student architectures differ".into(),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RmlError::Internal(format!("EMA momentum {alpha} outside [0, 1]")));
    }
    if alpha == 1.0 {
        return Ok(());
    }
    let beta = 1.0 - alpha;
    for (t, s) in teacher.params.iter_mut().zip(&student.params) {
        for (a, b) in t.data.iter_mut().zip(&s.data) {
            *a = alpha * *a + beta * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{ArchSpec, NoiseConfig};

    fn tiny() -> NetModel {
        NetModel::build(ArchSpec::mlp(2, 1, 1, 3), 2, 2, NoiseConfig::off(), 1).unwrap()
    }

    fn set_all(m: &mut NetModel, v: f64) {
        for p in &mut m.params {
            p.data.iter_mut().for_each(|x| *x = v);
        }
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let mut m = tiny();
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        g.values.iter_mut().flatten().for_each(|v| *v = 3.0);
        sgd_step(&mut m, &g, 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn sgd_applies_rule() {
        let mut m = tiny();
        set_all(&mut m, 1.0);
        let mut g = Gradients::zeros_like(&m);
        g.values.iter_mut().flatten().for_each(|v| *v = 0.5);
        sgd_step(&mut m, &g, 0.1).unwrap();
        assert!(m.params.iter().flat_map(|p| &p.data).all(|&v| (v - 0.95).abs() < 1e-15));
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let mut a = tiny();
        let mut b = a.clone();
        let mut g = Gradients::zeros_like(&a);
        for (i, v) in g.values.iter_mut().flatten().enumerate() {
            *v = (i as f64 * 0.7).sin();
        }
        sgd_step(&mut a, &g, 0.25).unwrap();
        sgd_step(&mut a, &g, 0.25).unwrap();
        sgd_step(&mut b, &g, 0.5).unwrap();
        for (p, q) in a.params.iter().zip(&b.params) {
            for (x, y) in p.data.iter().zip(&q.data) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mismatched_gradients_are_internal_error() {
        let mut m = tiny();
        let other = NetModel::build(ArchSpec::cnn(2, 1, 1), 2, 2, NoiseConfig::off(), 1).unwrap();
        let g = Gradients::zeros_like(&other);
        assert_eq!(sgd_step(&mut m, &g, 0.1).unwrap_err().category(), "internal");
    }

    #[test]
    fn ema_identity_and_rule() {
        let mut t = tiny();
        let mut s = tiny();
        set_all(&mut t, 1.0);
        set_all(&mut s, 0.0);
        let before = t.clone();
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t, before);
        ema_update(&mut t, &s, 0.99).unwrap();
        assert!(t.params.iter().flat_map(|p| &p.data).all(|&v| (v - 0.99).abs() < 1e-15));
    }

    #[test]
    fn ema_rejects_architecture_mismatch() {
        let mut t = tiny();
        let s = NetModel::build(ArchSpec::mlp(2, 1, 1, 4), 2, 2, NoiseConfig::off(), 1).unwrap();
        assert!(ema_update(&mut t, &s, 0.9).is_err());
    }
}
