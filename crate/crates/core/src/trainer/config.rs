use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::error::{Result, RmlError};
use crate::netcore::{ArchKind, ArchSpec, NoiseConfig};
use crate::rectify::ConfidenceSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Baseline only; unlabeled data is ignored.
    Supervised,
    /// Students label for each other directly (no mean teachers), cross terms only.
    DirectMl,
    /// Peer mean teachers label, hardened without rectification, noise off.
    Iml,
    /// As `Iml` with input and model noise forced on.
    ImlNoise,
    /// Mean teachers plus self-rectification of the frozen stage labels.
    Rml,
}

/// Which pseudo labels each student learns from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerms {
    /// Both learners' labels for both students (four terms).
    Ensemble,
    /// Each student learns from its peer's labels only.
    Cross,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmlConfig {
    pub labeled_fraction: f64,
    pub lr: f64,
    pub lr_power: f64,
    /// Base learning rate of the supervised baseline.
    pub baseline_lr: f64,
    pub baseline_iterations: usize,
    /// Mutual-learning iterations per stage.
    pub iterations: usize,
    pub stages: usize,
    pub tau: f64,
    /// Prototype momentum λ.
    pub lambda: f64,
    /// Teacher EMA momentum α.
    pub alpha: f64,
    pub input_noise: bool,
    pub model_noise: bool,
    pub variant: Variant,
    pub confidence_source: ConfidenceSource,
    pub loss_terms: LossTerms,
    pub arch_pair: [ArchKind; 2],
    /// Hidden width of the mlp and token width of the attention model.
    pub hidden: usize,
    pub feature_dim: usize,
    pub patch: usize,
    pub dropout_rate: f64,
    pub stochastic_depth_survival: f64,
    pub weak_strength: f64,
    pub strong_strength: f64,
    pub cutmix: bool,
    pub batch_size: usize,
    pub unlabeled_batch: usize,
    pub eval_interval: usize,
    /// Train one baseline per learner from different seeds even when the
    /// architectures match.
    pub distinct_baselines: bool,
    pub seed: u64,
}

impl Default for RmlConfig {
    fn default() -> Self {
        RmlConfig {
            labeled_fraction: 0.125,
            lr: 0.05,
            lr_power: 0.9,
            baseline_lr: 0.05,
            baseline_iterations: 1000,
            iterations: 1000,
            stages: 2,
            tau: 0.0,
            lambda: 0.999,
            alpha: 0.99,
            input_noise: true,
            model_noise: true,
            variant: Variant::Rml,
            confidence_source: ConfidenceSource::Prototype,
            loss_terms: LossTerms::Ensemble,
            arch_pair: [ArchKind::Cnn, ArchKind::Cnn],
            hidden: 32,
            feature_dim: 16,
            patch: 4,
            dropout_rate: 0.5,
            stochastic_depth_survival: 0.8,
            weak_strength: 0.25,
            strong_strength: 1.0,
            cutmix: true,
            batch_size: 8,
            unlabeled_batch: 8,
            eval_interval: 100,
            distinct_baselines: false,
            seed: 0,
        }
    }
}

impl RmlConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, lo_open: bool, hi_open: bool| {
            let ok = v.is_finite()
                && if lo_open { v > 0.0 } else { v >= 0.0 }
                && if hi_open { v < 1.0 } else { v <= 1.0 };
            if ok {
                Ok(())
            } else {
                Err(RmlError::config(name, format!("{v} is out of range")))
            }
        };
        unit("labeled_fraction", self.labeled_fraction, true, false)?;
        unit("tau", self.tau, false, true)?;
        unit("lambda", self.lambda, false, true)?;
        unit("alpha", self.alpha, false, false)?;
        unit("dropout_rate", self.dropout_rate, false, false)?;
        unit("stochastic_depth_survival", self.stochastic_depth_survival, false, false)?;
        for (name, v) in [
            ("lr", self.lr),
            ("baseline_lr", self.baseline_lr),
            ("lr_power", self.lr_power),
            ("weak_strength", self.weak_strength),
            ("strong_strength", self.strong_strength),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RmlError::config(name, format!("{v} must be a nonnegative number")));
            }
        }
        for (name, v) in [
            ("iterations", self.iterations),
            ("stages", self.stages),
            ("baseline_iterations", self.baseline_iterations),
            ("feature_dim", self.feature_dim),
            ("hidden", self.hidden),
            ("patch", self.patch),
            ("batch_size", self.batch_size),
            ("unlabeled_batch", self.unlabeled_batch),
            ("eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                return Err(RmlError::config(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Architecture of learner `i` for inputs of the given geometry.
    pub fn arch(&self, i: usize, in_channels: usize, height: usize, width: usize) -> ArchSpec {
        match self.arch_pair[i] {
            ArchKind::Mlp => ArchSpec::mlp(in_channels, height, width, self.hidden),
            ArchKind::Cnn => ArchSpec::cnn(in_channels, height, width),
            ArchKind::Attn => ArchSpec::attn(in_channels, height, width, self.hidden, self.patch),
        }
    }

    pub fn augment(&self) -> AugmentPolicy {
        AugmentPolicy {
            weak_strength: self.weak_strength,
            strong_strength: self.strong_strength,
        }
    }

    /// Input and model noise after the variant's overrides.
    pub fn effective_noise(&self) -> (bool, bool) {
        match self.variant {
            Variant::Iml => (false, false),
            Variant::ImlNoise => (true, true),
            _ => (self.input_noise, self.model_noise),
        }
    }

    pub fn student_noise(&self) -> NoiseConfig {
        NoiseConfig {
            dropout_rate: self.dropout_rate,
            stochastic_depth_survival: self.stochastic_depth_survival,
            enabled: self.effective_noise().1,
        }
    }

    /// Polynomial decay `lr·(1 − t/T)^power`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        self.lr * self.decay(t, total)
    }

    pub fn baseline_lr_at(&self, t: usize) -> f64 {
        self.baseline_lr * self.decay(t, self.baseline_iterations)
    }

    fn decay(&self, t: usize, total: usize) -> f64 {
        (1.0 - t as f64 / total.max(1) as f64).max(0.0).powf(self.lr_power)
    }

    pub fn loss_terms_effective(&self) -> LossTerms {
        match self.variant {
            Variant::DirectMl => LossTerms::Cross,
            _ => self.loss_terms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RmlConfig::default().validate().unwrap();
    }

    #[test]
    fn tau_out_of_range_names_field() {
        let cfg = RmlConfig {
            tau: 1.5,
            ..RmlConfig::default()
        };
        match cfg.validate().unwrap_err() {
            RmlError::Config { field, .. } => assert_eq!(field, "tau"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn poly_decay_endpoints() {
        let cfg = RmlConfig::default();
        assert_eq!(cfg.lr_at(0, 10), cfg.lr);
        assert_eq!(cfg.lr_at(10, 10), 0.0);
    }
}
