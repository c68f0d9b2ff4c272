//! Supervised baselines and the robust mutual learning loop.

mod config;
mod metrics;

pub use config::{LossTerms, RmlConfig, Variant};
pub use metrics::{evaluate_model, JsonlSink, MetricsRecord, MetricsSink, ModelScores, NullSink, StageSummary};

use std::path::Path;

use rand::{Rng, SeedableRng};

use crate::augment::{mix_images, mix_label_maps, photometric, sample_rect_mask, AugLevel, AugmentPolicy, CutMixMask};
use crate::data::{Dataset, DatasetSplit};
use crate::error::{Result, RmlError};
use crate::netcore::{cross_entropy, ema_update, sgd_step, Checkpoint, Mode, NetModel, NoiseConfig};
use crate::protobank::{init_bank, PrototypeAccumulator, PrototypeBank};
use crate::rectify::{average_predictions, harden_with_threshold, predict_clean, rectify_view, RectifiedView, StagePseudoStore};
use crate::tensor::{ImageBatch, LabelMap, Logits, OneHotMap, Tensor4};
use crate::LabRng;

/// Images per forward pass when predicting over whole datasets.
pub const EVAL_CHUNK: usize = 256;

/// A dataset with its labeled/unlabeled/eval partition. Ground truth of the
/// unlabeled ids is read only for pseudo-label accuracy.
#[derive(Clone, Debug)]
pub struct SslData {
    pub data: Dataset,
    pub split: DatasetSplit,
}

impl SslData {
    pub fn new(data: Dataset, split: DatasetSplit) -> Result<Self> {
        split.validate(data.len())?;
        Ok(SslData { data, split })
    }

    fn geometry(&self) -> (usize, usize, usize) {
        let [_, h, w, c] = self.data.images.shape();
        (c, h, w)
    }
}

/// Two students, their mean teachers and one prototype bank per learner.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelQuad {
    pub students: [NetModel; 2],
    pub teachers: [NetModel; 2],
    pub banks: [PrototypeBank; 2],
}

/// Independent random streams: one for batch and mask sampling, one per
/// learner for its augmentation and noise.
#[derive(Clone, Debug)]
pub struct RunRngs {
    pub data: LabRng,
    pub learners: [LabRng; 2],
}

impl RunRngs {
    pub fn new(seed: u64, stage: usize) -> Self {
        let stream = |k: u64| {
            let mut r = LabRng::seed_from_u64(seed);
            r.set_stream(100 * stage as u64 + k);
            r
        };
        RunRngs {
            data: stream(1),
            learners: [stream(2), stream(3)],
        }
    }
}

fn model_seed(seed: u64, learner: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(learner as u64 + 1)
}

fn check_loss(loss: f64, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(RmlError::Training {
            iteration,
            message: format!("loss became {loss}"),
        })
    }
}

fn sample_ids(pool: &[usize], n: usize, rng: &mut LabRng) -> Vec<usize> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Trains learner `learner`'s supervised model on weakly augmented labeled
/// batches without model noise.
pub fn train_baseline(ssl: &SslData, cfg: &RmlConfig, learner: usize) -> Result<NetModel> {
    cfg.validate()?;
    let ids = &ssl.split.labeled;
    if ids.is_empty() {
        return Err(RmlError::Input("baseline training needs labeled data".into()));
    }
    let (c, h, w) = ssl.geometry();
    let arch = cfg.arch(learner, c, h, w);
    let mut model = NetModel::build(
        arch,
        ssl.data.num_classes,
        cfg.feature_dim,
        NoiseConfig::off(),
        model_seed(cfg.seed, learner),
    )?;
    let mut rng = LabRng::seed_from_u64(cfg.seed);
    rng.set_stream(50 + learner as u64);
    let policy = cfg.augment();
    for t in 0..cfg.baseline_iterations {
        let batch = sample_ids(ids, cfg.batch_size, &mut rng);
        let x = photometric(&ssl.data.images.select(&batch), &policy, AugLevel::Weak, &mut rng);
        let target = OneHotMap::from_labels(&ssl.data.labels.select(&batch), ssl.data.num_classes)?;
        let pass = model.forward_train(&x, None)?;
        let (loss, dlogits) = cross_entropy(&pass.logits, &target, None)?;
        check_loss(loss, t)?;
        let grads = model.backward(&pass, &dlogits)?;
        sgd_step(&mut model, &grads, cfg.baseline_lr_at(t))?;
        if !model.all_finite() {
            return Err(RmlError::Training {
                iteration: t,
                message: "non-finite parameters".into(),
            });
        }
    }
    model.set_mode(Mode::Eval);
    Ok(model)
}

/// Baselines for both learners. Identical architectures share one model
/// unless `distinct_baselines` is set.
pub fn train_baselines(ssl: &SslData, cfg: &RmlConfig) -> Result<[NetModel; 2]> {
    let first = train_baseline(ssl, cfg, 0)?;
    let second = if cfg.arch_pair[0] == cfg.arch_pair[1] && !cfg.distinct_baselines {
        first.clone()
    } else {
        train_baseline(ssl, cfg, 1)?
    };
    Ok([first, second])
}

fn bank_for(model: &NetModel, ssl: &SslData, lambda: f64) -> Result<PrototypeBank> {
    let labeled = ssl.data.images.select(&ssl.split.labeled);
    let labels = ssl.data.labels.select(&ssl.split.labeled);
    let unlabeled = ssl.data.images.select(&ssl.split.unlabeled);
    init_bank(model, &[(&labeled, Some(&labels)), (&unlabeled, None)], lambda, EVAL_CHUNK)
}

/// Starts a stage from one model per learner: students and teachers copy
/// it, each bank is initialized from it over L ∪ U, and `p⁰` over U comes
/// from the mean of both models' clean predictions (a single model's when
/// both are equal).
pub fn init_stage(starts: &[NetModel; 2], ssl: &SslData, cfg: &RmlConfig, stage: usize) -> Result<(ModelQuad, StagePseudoStore)> {
    let unlabeled = ssl.data.images.select(&ssl.split.unlabeled);
    let p0 = if starts[0] == starts[1] {
        predict_clean(&starts[0], &unlabeled, EVAL_CHUNK)?
    } else {
        average_predictions(
            &predict_clean(&starts[0], &unlabeled, EVAL_CHUNK)?,
            &predict_clean(&starts[1], &unlabeled, EVAL_CHUNK)?,
        )?
    };
    let store = StagePseudoStore::new(stage, ssl.split.unlabeled.clone(), p0)?;
    let student = |m: &NetModel| {
        let mut s = m.clone();
        s.set_noise(cfg.student_noise());
        s.set_mode(Mode::Train);
        s
    };
    let teacher = |m: &NetModel| {
        let mut t = m.clone();
        t.set_noise(NoiseConfig::off());
        t.set_mode(Mode::Eval);
        t
    };
    let bank0 = bank_for(&starts[0], ssl, cfg.lambda)?;
    let bank1 = if starts[0] == starts[1] {
        bank0.clone()
    } else {
        bank_for(&starts[1], ssl, cfg.lambda)?
    };
    Ok((
        ModelQuad {
            students: [student(&starts[0]), student(&starts[1])],
            teachers: [teacher(&starts[0]), teacher(&starts[1])],
            banks: [bank0, bank1],
        },
        store,
    ))
}

/// One SGD step per student on the weakly augmented labeled batch.
pub fn labeled_step(
    quad: &mut ModelQuad,
    x: &ImageBatch,
    y: &LabelMap,
    cfg: &RmlConfig,
    lr: f64,
    rngs: &mut [LabRng; 2],
    iteration: usize,
) -> Result<[f64; 2]> {
    let target = OneHotMap::from_labels(y, quad.students[0].num_classes())?;
    let policy = cfg.augment();
    let mut losses = [0.0; 2];
    for i in 0..2 {
        let rng = &mut rngs[i];
        let xi = photometric(x, &policy, AugLevel::Weak, rng);
        let student = &mut quad.students[i];
        let pass = student.forward_train(&xi, Some(rng))?;
        let (loss, dlogits) = cross_entropy(&pass.logits, &target, None)?;
        check_loss(loss, iteration)?;
        let grads = student.backward(&pass, &dlogits)?;
        sgd_step(student, &grads, lr)?;
        losses[i] = loss;
    }
    Ok(losses)
}

/// Sum of per-target mean cross-entropies and the summed logit gradient.
pub fn multi_target_loss(logits: &Logits, targets: &[&OneHotMap]) -> Result<(f64, Tensor4)> {
    let mut total = 0.0;
    let mut grad = Tensor4::zeros(logits.shape());
    for t in targets {
        let (l, g) = cross_entropy(logits, t, None)?;
        total += l;
        for (a, b) in grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Pseudo labels learner `i` produces for the clean images `x` (ids in
/// the unlabeled pool), following the variant's rule.
#[allow(clippy::too_many_arguments)]
pub fn learner_labels(
    quad: &ModelQuad,
    i: usize,
    x: &ImageBatch,
    ids: &[usize],
    store: &StagePseudoStore,
    cfg: &RmlConfig,
    policy: &AugmentPolicy,
    rng: &mut LabRng,
) -> Result<RectifiedView> {
    let hardened = |model: &NetModel, rng: &mut LabRng| -> Result<RectifiedView> {
        let mut m = model.clone();
        m.set_mode(Mode::Eval);
        let view = photometric(x, policy, AugLevel::Weak, rng);
        let (features, p) = m.predict(&view, None)?;
        Ok(RectifiedView {
            labels: harden_with_threshold(&p, cfg.tau),
            features,
            fallbacks: 0,
        })
    };
    match cfg.variant {
        Variant::DirectMl => hardened(&quad.students[i], rng),
        Variant::Iml | Variant::ImlNoise | Variant::Supervised => hardened(&quad.teachers[i], rng),
        Variant::Rml => rectify_view(
            &quad.teachers[i],
            x,
            ids,
            Some(&quad.banks[i]),
            store,
            cfg.confidence_source,
            cfg.tau,
            policy,
            rng,
        ),
    }
}

fn uses_bank(cfg: &RmlConfig) -> bool {
    cfg.variant == Variant::Rml && cfg.confidence_source == crate::rectify::ConfidenceSource::Prototype
}

/// An unlabeled pair batch plus the labeled batch of the same iteration
/// (its teacher features feed the banks).
#[derive(Clone, Debug)]
pub struct UnlabeledBatch<'a> {
    pub x1: &'a ImageBatch,
    pub ids1: &'a [usize],
    pub x2: &'a ImageBatch,
    pub ids2: &'a [usize],
    pub mask: Option<&'a CutMixMask>,
    pub labeled: Option<(&'a ImageBatch, &'a LabelMap)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledOutcome {
    pub losses: [f64; 2],
    /// Pixels with a valid pseudo label, summed over each student's targets.
    pub contributing: [usize; 2],
    pub fallbacks: usize,
    /// The mixed pseudo labels of each learner.
    pub targets: [OneHotMap; 2],
}

/// Pseudo-labels the pair, trains both students on the mixed image, then
/// updates the banks from teacher features and finally the teachers by EMA.
pub fn unlabeled_step(
    quad: &mut ModelQuad,
    batch: &UnlabeledBatch<'_>,
    store: &StagePseudoStore,
    cfg: &RmlConfig,
    lr: f64,
    rngs: &mut [LabRng; 2],
    iteration: usize,
) -> Result<UnlabeledOutcome> {
    let policy = cfg.augment();
    let mut views: Vec<(RectifiedView, Option<RectifiedView>)> = Vec::with_capacity(2);
    let mut targets = Vec::with_capacity(2);
    let mut fallbacks = 0;
    for (i, rng) in rngs.iter_mut().enumerate() {
        let a = learner_labels(quad, i, batch.x1, batch.ids1, store, cfg, &policy, rng)?;
        let (y, b) = match batch.mask {
            Some(m) => {
                let b = learner_labels(quad, i, batch.x2, batch.ids2, store, cfg, &policy, rng)?;
                (mix_label_maps(&a.labels, &b.labels, m)?, Some(b))
            }
            None => (a.labels.clone(), None),
        };
        fallbacks += a.fallbacks + b.as_ref().map_or(0, |v| v.fallbacks);
        targets.push(y);
        views.push((a, b));
    }
    let xu = match batch.mask {
        Some(m) => mix_images(batch.x1, batch.x2, m)?,
        None => batch.x1.clone(),
    };
    let (input_noise, _) = cfg.effective_noise();
    let level = if input_noise { AugLevel::Strong } else { AugLevel::Weak };
    let mut losses = [0.0; 2];
    let mut contributing = [0; 2];
    for i in 0..2 {
        let rng = &mut rngs[i];
        let xi = photometric(&xu, &policy, level, rng);
        let picked: Vec<&OneHotMap> = match cfg.loss_terms_effective() {
            LossTerms::Ensemble => targets.iter().collect(),
            LossTerms::Cross => vec![&targets[1 - i]],
        };
        contributing[i] = picked.iter().map(|t| t.valid_count()).sum();
        let student = &mut quad.students[i];
        let pass = student.forward_train(&xi, Some(rng))?;
        let (loss, dlogits) = multi_target_loss(&pass.logits, &picked)?;
        check_loss(loss, iteration)?;
        let grads = student.backward(&pass, &dlogits)?;
        sgd_step(student, &grads, lr)?;
        losses[i] = loss;
    }
    if uses_bank(cfg) {
        for (i, (a, b)) in views.iter().enumerate() {
            let bank = &mut quad.banks[i];
            let mut acc = PrototypeAccumulator::new(bank.num_classes(), bank.feature_dim());
            if let Some((x, y)) = batch.labeled {
                let weak = photometric(x, &policy, AugLevel::Weak, &mut rngs[i]);
                let (z, _) = quad.teachers[i].forward(&weak, None)?;
                acc.add(&z, y, None)?;
            }
            for v in std::iter::once(a).chain(b.as_ref()) {
                acc.add(&v.features, &v.labels.as_label_map(), Some(v.labels.valid()))?;
            }
            let (eta, present) = acc.means();
            bank.update(&eta, &present)?;
        }
    }
    for i in 0..2 {
        ema_update(&mut quad.teachers[i], &quad.students[i], cfg.alpha)?;
    }
    let [t0, t1]: [OneHotMap; 2] = targets.try_into().expect("two learners");
    Ok(UnlabeledOutcome {
        losses,
        contributing,
        fallbacks,
        targets: [t0, t1],
    })
}

/// Result of [`run_rml`]: the final models, every metrics record and one
/// summary per stage, alongside the baselines' scores.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub quad: ModelQuad,
    pub baselines: [NetModel; 2],
    pub baseline_scores: [ModelScores; 2],
    /// Accuracy of `argmax p⁰` from the baselines over the unlabeled pool.
    pub baseline_pseudo_accuracy: Option<f64>,
    pub metrics: Vec<MetricsRecord>,
    pub stages: Vec<StageSummary>,
}

/// Pseudo-label accuracy of learner `i`'s labels over the whole unlabeled
/// pool, computed on clean inputs.
pub fn pool_pseudo_accuracy(quad: &ModelQuad, i: usize, ssl: &SslData, store: &StagePseudoStore, cfg: &RmlConfig) -> Result<Option<f64>> {
    let ids = &ssl.split.unlabeled;
    if ids.is_empty() {
        return Ok(None);
    }
    let clean = AugmentPolicy::identity();
    let mut rng = LabRng::seed_from_u64(0);
    let (mut hit, mut total) = (0.0, 0usize);
    for part in ids.chunks(EVAL_CHUNK) {
        let x = ssl.data.images.select(part);
        let v = learner_labels(quad, i, &x, part, store, cfg, &clean, &mut rng)?;
        let gt = ssl.data.labels.select(part);
        if let Some(acc) = crate::metrics::pseudo_accuracy(&v.labels, &gt)? {
            let n = v.labels.valid_count();
            hit += acc * n as f64;
            total += n;
        }
    }
    Ok((total > 0).then(|| hit / total as f64))
}

/// Runs the baselines (unless given) and `cfg.stages` rounds of mutual
/// learning. Records are passed to `sink` as they are produced; with an
/// output directory, checkpoints are written at each stage end.
pub fn run_rml(
    ssl: &SslData,
    cfg: &RmlConfig,
    baselines: Option<[NetModel; 2]>,
    sink: &mut dyn MetricsSink,
    out: Option<&Path>,
) -> Result<RunResult> {
    cfg.validate()?;
    let baselines = match baselines {
        Some(b) => b,
        None => train_baselines(ssl, cfg)?,
    };
    let eval_ids = &ssl.split.eval;
    let baseline_scores = [
        evaluate_model(&baselines[0], &ssl.data, eval_ids)?,
        evaluate_model(&baselines[1], &ssl.data, eval_ids)?,
    ];
    let (quad0, store0) = init_stage(&baselines, ssl, cfg, 1)?;
    let baseline_pseudo_accuracy = {
        let gt = ssl.data.labels.select(&ssl.split.unlabeled);
        let hard = harden_with_threshold(store0.predictions(), 0.0);
        if gt.is_empty() {
            None
        } else {
            crate::metrics::pseudo_accuracy(&hard, &gt)?
        }
    };
    if cfg.variant == Variant::Supervised {
        let record = MetricsRecord::evaluate(0, 0, [0.0; 2], [0.0; 2], 0, &quad0, ssl, &store0, cfg)?;
        sink.record(&record)?;
        let summary = StageSummary::from_record(&record);
        return Ok(RunResult {
            quad: quad0,
            baselines,
            baseline_scores,
            baseline_pseudo_accuracy,
            metrics: vec![record],
            stages: vec![summary],
        });
    }
    if ssl.split.unlabeled.is_empty() {
        return Err(RmlError::Input("mutual learning needs unlabeled data".into()));
    }
    let [_, h, w, _] = ssl.data.images.shape();
    let mut metrics = Vec::new();
    let mut stages = Vec::new();
    let mut quad = quad0;
    let mut store = store0;
    for stage in 1..=cfg.stages {
        if stage > 1 {
            let starts = [quad.teachers[0].clone(), quad.teachers[1].clone()];
            (quad, store) = init_stage(&starts, ssl, cfg, stage)?;
        }
        if let Some(dir) = out {
            store.save(&dir.join(format!("store_stage{stage}")))?;
        }
        let mut rngs = RunRngs::new(cfg.seed, stage);
        let mut sums = ([0.0; 2], [0.0; 2], 0usize);
        let mut last: Option<MetricsRecord> = None;
        for t in 1..=cfg.iterations {
            let global = (stage - 1) * cfg.iterations + t;
            let lr = cfg.lr_at(t - 1, cfg.iterations);
            let lids = sample_ids(&ssl.split.labeled, cfg.batch_size, &mut rngs.data);
            let lx = ssl.data.images.select(&lids);
            let ly = ssl.data.labels.select(&lids);
            let l = labeled_step(&mut quad, &lx, &ly, cfg, lr, &mut rngs.learners, global)?;
            let ids1 = sample_ids(&ssl.split.unlabeled, cfg.unlabeled_batch, &mut rngs.data);
            let ids2 = sample_ids(&ssl.split.unlabeled, cfg.unlabeled_batch, &mut rngs.data);
            let mask = if cfg.cutmix && h >= 2 && w >= 2 {
                Some(sample_rect_mask(h, w, &mut rngs.data)?)
            } else {
                None
            };
            let x1 = ssl.data.images.select(&ids1);
            let x2 = ssl.data.images.select(&ids2);
            let batch = UnlabeledBatch {
                x1: &x1,
                ids1: &ids1,
                x2: &x2,
                ids2: &ids2,
                mask: mask.as_ref(),
                labeled: Some((&lx, &ly)),
            };
            let u = unlabeled_step(&mut quad, &batch, &store, cfg, lr, &mut rngs.learners, global)?;
            for (i, li) in l.iter().enumerate() {
                sums.0[i] += li;
                sums.1[i] += u.losses[i];
            }
            sums.2 += u.fallbacks;
            if t % cfg.eval_interval == 0 {
                let n = cfg.eval_interval as f64;
                let record = MetricsRecord::evaluate(
                    global,
                    stage,
                    sums.0.map(|v| v / n),
                    sums.1.map(|v| v / n),
                    sums.2,
                    &quad,
                    ssl,
                    &store,
                    cfg,
                )?;
                sums = ([0.0; 2], [0.0; 2], 0);
                sink.record(&record)?;
                metrics.push(record.clone());
                last = Some(record);
            }
        }
        let end = (stage - 1) * cfg.iterations + cfg.iterations;
        let summary = match last.filter(|r| r.iteration == end) {
            Some(r) => StageSummary::from_record(&r),
            None => StageSummary::from_record(&MetricsRecord::evaluate(
                end, stage, [0.0; 2], [0.0; 2], 0, &quad, ssl, &store, cfg,
            )?),
        };
        if let Some(dir) = out {
            for i in 0..2 {
                let mut ck = Checkpoint::from_model(&quad.teachers[i]);
                quad.banks[i].write_into(&mut ck);
                ck.save(&dir.join(format!("stage{stage}_learner{}.ckpt", i + 1)))?;
            }
        }
        stages.push(summary);
    }
    Ok(RunResult {
        quad,
        baselines,
        baseline_scores,
        baseline_pseudo_accuracy,
        metrics,
        stages,
    })
}
