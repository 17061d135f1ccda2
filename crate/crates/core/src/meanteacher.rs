//! Mean-teacher semi-supervised training for one fold.
//!
//! The student is trained by SGD on a classification loss over labelled
//! views plus a ramped consistency loss between its softmax outputs and the
//! teacher's on independently augmented views of every input. The teacher
//! is never touched by gradient descent; it follows the student as an
//! exponential moving average and is the model used for inference.
//!
//! Randomness is keyed, not sequential: each view of each batch slot at each
//! optimizer step has its own derived stream, so the student's views do not
//! depend on whether a teacher view was drawn alongside them.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline_split, augment_view, AugConfig};
use crate::imagedata::{normalize, Class, Dataset, Image, NormStats, Sample, SoftLabel, CLASS_COUNT};
use crate::metrics::{balanced_accuracy, confusion_matrix};
use crate::nn::{
    backward, forward, images_to_batch, init_params, mse_consistency, predict_logits, sgd_update, softmax,
    softmax_backward, softmax_cross_entropy, ModelSpec, ParamSet, Tensor,
};
use crate::rng::RngStream;
use crate::{Error, Result};

// stream key tags
const TAG_INIT: u64 = 0x10;
const TAG_ORDER: u64 = 0x11;
const TAG_UNLABELED_ORDER: u64 = 0x12;
const TAG_PARTNER: u64 = 0x13;
const TAG_LABELED_VIEW: u64 = 0x14;
const TAG_MIX: u64 = 0x15;
const TAG_UNLABELED_VIEW: u64 = 0x16;

const ROLE_STUDENT: u64 = 0;
const ROLE_TEACHER: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaGranularity {
    /// Merge after every optimizer step.
    Step,
    /// Merge once at the end of each epoch.
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanTeacherConfig {
    pub ema_alpha: f64,
    pub consistency_max_weight: f64,
    pub rampup_epochs: usize,
    pub epochs: usize,
    pub batch_size_labeled: usize,
    pub batch_size_unlabeled: usize,
    pub lr: f64,
    pub momentum: f64,
    pub ema_granularity: EmaGranularity,
    /// Repeat samples of rare classes within each epoch so every present
    /// class contributes at least `ceil(N / classes)` draws.
    pub balance_classes: bool,
}

impl Default for MeanTeacherConfig {
    fn default() -> Self {
        Self {
            ema_alpha: 0.99,
            consistency_max_weight: 1.0,
            rampup_epochs: 10,
            epochs: 30,
            batch_size_labeled: 8,
            batch_size_unlabeled: 4,
            lr: 0.02,
            momentum: 0.9,
            ema_granularity: EmaGranularity::Step,
            balance_classes: true,
        }
    }
}

impl MeanTeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::config("train.ema_alpha", "must lie in [0, 1)"));
        }
        // zero is allowed: it switches the consistency term off
        if !(self.consistency_max_weight.is_finite() && self.consistency_max_weight >= 0.0) {
            return Err(Error::config("train.consistency_max_weight", "must be finite and >= 0"));
        }
        if self.rampup_epochs > self.epochs {
            return Err(Error::config(
                "train.rampup_epochs",
                format!("{} exceeds epochs = {}", self.rampup_epochs, self.epochs),
            ));
        }
        if self.batch_size_labeled == 0 {
            return Err(Error::config("train.batch_size_labeled", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("train.lr", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Everything one fold trainer owns.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: ParamSet,
    pub teacher: ParamSet,
    pub velocity: ParamSet,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    /// Root of every stream the trainer derives.
    pub seed: u64,
    /// Statistics of the fold's labelled training split.
    pub norm: NormStats,
}

impl TrainState {
    /// Fresh student from `seed`; the teacher starts as an exact copy.
    pub fn new(spec: &ModelSpec, norm: NormStats, seed: u64) -> Result<Self> {
        norm.validate()?;
        let student = init_params(spec, RngStream::derive(seed, &[TAG_INIT]).next_u64())?;
        Ok(Self {
            teacher: student.clone(),
            velocity: student.zeros_like(),
            student,
            epoch: 0,
            step: 0,
            seed,
            norm,
        })
    }
}

/// `θ' ← α·θ' + (1 − α)·θ` for every coordinate.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("ema_alpha", format!("{alpha} is outside [0, 1]")));
    }
    teacher.check_compatible(student, "ema_update")?;
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (ti, &si) in t.data_mut().iter_mut().zip(s.data()) {
            *ti = alpha * *ti + (1.0 - alpha) * si;
        }
    }
    Ok(())
}

/// Sigmoid-shaped ramp `w_max · exp(−5(1 − min(e/R, 1))²)`.
pub fn consistency_weight(epoch: usize, cfg: &MeanTeacherConfig) -> f64 {
    if epoch >= cfg.rampup_epochs {
        return cfg.consistency_max_weight;
    }
    let t = 1.0 - epoch as f64 / cfg.rampup_epochs as f64;
    cfg.consistency_max_weight * (-5.0 * t * t).exp()
}

/// A labelled sample and the partner it may be mixed with.
#[derive(Debug, Clone, Copy)]
pub struct LabeledInput<'a> {
    pub sample: &'a Sample,
    pub partner: Option<&'a Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub class_loss: f64,
    pub cons_loss: f64,
    pub cons_weight: f64,
}

fn labeled_views(
    seed: u64,
    step: usize,
    inputs: &[LabeledInput],
    aug: &AugConfig,
    role: u64,
) -> Result<Vec<Sample>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(slot, inp)| {
            let mut view_rng = RngStream::derive(seed, &[TAG_LABELED_VIEW, step as u64, slot as u64, role]);
            let mut mix_rng = RngStream::derive(seed, &[TAG_MIX, step as u64, slot as u64]);
            apply_pipeline_split(inp.sample, inp.partner, &mut view_rng, &mut mix_rng, aug)
        })
        .collect()
}

fn unlabeled_views(seed: u64, step: usize, images: &[&Image], aug: &AugConfig, role: u64) -> Result<Vec<Image>> {
    images
        .par_iter()
        .enumerate()
        .map(|(slot, &im)| {
            let mut rng = RngStream::derive(seed, &[TAG_UNLABELED_VIEW, step as u64, slot as u64, role]);
            augment_view(&Sample::unlabeled(im.clone()), &mut rng, aug).map(|s| s.image)
        })
        .collect()
}

fn normalized_batch(labeled: &[Sample], unlabeled: &[Image], norm: &NormStats) -> Result<Tensor> {
    let images: Vec<Image> = labeled
        .iter()
        .map(|s| &s.image)
        .chain(unlabeled)
        .map(|im| normalize(im, norm))
        .collect();
    images_to_batch(&images)
}

struct StudentPass {
    logits: Tensor,
    cache: crate::nn::ForwardCache,
    class_loss: f64,
    /// Classification gradient padded with zero rows for unlabelled inputs.
    dlogits: Tensor,
}

fn student_pass(params: &ParamSet, spec: &ModelSpec, labeled: &[Sample], batch: &Tensor) -> Result<StudentPass> {
    let (logits, cache) = forward(params, spec, batch)?;
    let n_lab = labeled.len();
    let targets: Vec<SoftLabel> = labeled
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Invariant("labelled view lost its label".into())))
        .collect::<Result<_>>()?;
    let lab_logits = Tensor::new(vec![n_lab, CLASS_COUNT], logits.data()[..n_lab * CLASS_COUNT].to_vec())?;
    let (class_loss, dce) = softmax_cross_entropy(&lab_logits, &targets)?;
    let mut dlogits = Tensor::zeros(logits.shape());
    dlogits.data_mut()[..n_lab * CLASS_COUNT].copy_from_slice(dce.data());
    Ok(StudentPass {
        logits,
        cache,
        class_loss,
        dlogits,
    })
}

/// One optimizer step on the student. The teacher is read, never written.
///
/// Inputs are raw images; views are augmented first and then normalized
/// with `state.norm`.
pub fn train_step(
    state: &mut TrainState,
    spec: &ModelSpec,
    labeled: &[LabeledInput],
    unlabeled: &[&Image],
    cfg: &MeanTeacherConfig,
    aug: &AugConfig,
) -> Result<StepLosses> {
    if labeled.is_empty() {
        return Err(Error::Data("train_step needs at least one labelled sample".into()));
    }
    let w = consistency_weight(state.epoch, cfg);
    let s_lab = labeled_views(state.seed, state.step, labeled, aug, ROLE_STUDENT)?;
    let s_unl = unlabeled_views(state.seed, state.step, unlabeled, aug, ROLE_STUDENT)?;
    let t_lab = labeled_views(state.seed, state.step, labeled, aug, ROLE_TEACHER)?;
    let t_unl = unlabeled_views(state.seed, state.step, unlabeled, aug, ROLE_TEACHER)?;

    let student_batch = normalized_batch(&s_lab, &s_unl, &state.norm)?;
    let teacher_batch = normalized_batch(&t_lab, &t_unl, &state.norm)?;
    let mut pass = student_pass(&state.student, spec, &s_lab, &student_batch)?;
    let teacher_probs = softmax(&predict_logits(&state.teacher, spec, &teacher_batch)?)?;
    let student_probs = softmax(&pass.logits)?;
    let (cons_loss, dprobs) = mse_consistency(&student_probs, &teacher_probs)?;
    let dcons = softmax_backward(&student_probs, &dprobs)?;
    for (d, c) in pass.dlogits.data_mut().iter_mut().zip(dcons.data()) {
        *d += w * c;
    }

    let grads = backward(&state.student, &pass.cache, &pass.dlogits)?;
    sgd_update(&mut state.student, &grads, cfg.lr, cfg.momentum, &mut state.velocity)?;
    state.step += 1;
    Ok(StepLosses {
        class_loss: pass.class_loss,
        cons_loss,
        cons_weight: w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub class_loss: f64,
    pub cons_loss: f64,
    pub cons_weight: f64,
    /// Teacher balanced accuracy on the un-augmented training split.
    pub train_bacc: f64,
}

pub const HISTORY_HEADER: &str = "epoch,class_loss,cons_loss,cons_weight,train_bacc";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.epoch, r.class_loss, r.cons_loss, r.cons_weight, r.train_bacc
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub student: ParamSet,
    /// The inference model.
    pub teacher: ParamSet,
    pub norm: NormStats,
    pub history: Vec<EpochRecord>,
}

/// Index lists for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
struct BatchPlan {
    labeled: Vec<usize>,
    partners: Vec<usize>,
    unlabeled: Vec<usize>,
}

/// Per-epoch schedule shared by the mean-teacher and supervised trainers.
struct Schedule {
    seed: u64,
    classes: Vec<Class>,
    /// For each class, the training indices of every other class.
    others: Vec<Vec<usize>>,
    /// Per-epoch draw list before shuffling.
    base_order: Vec<usize>,
    unlabeled_len: usize,
    batch_labeled: usize,
    batch_unlabeled: usize,
}

impl Schedule {
    fn new(train: &Dataset, unlabeled_len: usize, cfg: &MeanTeacherConfig, seed: u64) -> Result<Self> {
        let mut classes = Vec::with_capacity(train.len());
        for e in train.entries() {
            match e.sample.label {
                Some(l) => classes.push(l.argmax()),
                None => {
                    return Err(Error::Data(format!(
                        "training split contains unlabelled sample `{}`",
                        e.id
                    )))
                }
            }
        }
        let mut counts = [0usize; CLASS_COUNT];
        classes.iter().for_each(|c| counts[c.index()] += 1);
        let present = counts.iter().filter(|&&n| n > 0).count();
        if present < 2 {
            return Err(Error::Data(format!(
                "degenerate fold: {} labelled samples covering {present} class(es), need at least 2 classes",
                classes.len()
            )));
        }
        let others = Class::ALL
            .iter()
            .map(|&c| (0..classes.len()).filter(|&i| classes[i] != c).collect())
            .collect();
        let base_order = if cfg.balance_classes {
            let floor = classes.len().div_ceil(present);
            (0..classes.len())
                .flat_map(|i| std::iter::repeat_n(i, floor.div_ceil(counts[classes[i].index()])))
                .collect()
        } else {
            (0..classes.len()).collect()
        };
        Ok(Self {
            seed,
            classes,
            others,
            base_order,
            unlabeled_len,
            batch_labeled: cfg.batch_size_labeled,
            batch_unlabeled: if unlabeled_len == 0 { 0 } else { cfg.batch_size_unlabeled },
        })
    }

    fn epoch(&self, epoch: usize) -> Vec<BatchPlan> {
        let mut order = self.base_order.clone();
        RngStream::derive(self.seed, &[TAG_ORDER, epoch as u64]).shuffle(&mut order);
        let mut u_order: Vec<usize> = (0..self.unlabeled_len).collect();
        RngStream::derive(self.seed, &[TAG_UNLABELED_ORDER, epoch as u64]).shuffle(&mut u_order);
        order
            .chunks(self.batch_labeled)
            .enumerate()
            .map(|(b, chunk)| {
                let partners = chunk
                    .iter()
                    .enumerate()
                    .map(|(slot, &i)| {
                        let pool = &self.others[self.classes[i].index()];
                        let mut r = RngStream::derive(self.seed, &[TAG_PARTNER, epoch as u64, b as u64, slot as u64]);
                        pool[r.int_inclusive(0, pool.len() - 1)]
                    })
                    .collect();
                let unlabeled = (0..self.batch_unlabeled)
                    .map(|t| u_order[(b * self.batch_unlabeled + t) % self.unlabeled_len])
                    .collect();
                BatchPlan {
                    labeled: chunk.to_vec(),
                    partners,
                    unlabeled,
                }
            })
            .collect()
    }
}

fn check_fold_inputs(spec: &ModelSpec, cfg: &MeanTeacherConfig, aug: &AugConfig, train: &Dataset) -> Result<()> {
    spec.validate()?;
    cfg.validate()?;
    aug.validate()?;
    if aug.crop_size != spec.input_size {
        return Err(Error::config(
            "aug.crop_size",
            format!("{} differs from model input size {}", aug.crop_size, spec.input_size),
        ));
    }
    if let Some(e) = train.entries().first() {
        let im = &e.sample.image;
        if im.height() < spec.input_size || im.width() < spec.input_size {
            return Err(Error::Data(format!(
                "training images are {}x{}, smaller than model input {}",
                im.height(),
                im.width(),
                spec.input_size
            )));
        }
    }
    Ok(())
}

/// Balanced accuracy of `params` on centre crops of a labelled dataset.
pub fn dataset_balanced_accuracy(params: &ParamSet, spec: &ModelSpec, norm: &NormStats, data: &Dataset) -> Result<f64> {
    let s = spec.input_size;
    let images: Vec<Image> = data
        .images()
        .map(|im| im.center_crop(s, s).map(|c| normalize(&c, norm)))
        .collect::<Result<_>>()?;
    let probs = softmax(&predict_logits(params, spec, &images_to_batch(&images)?)?)?;
    let preds: Vec<SoftLabel> = (0..images.len())
        .map(|i| SoftLabel::new(probs.row(i).try_into().expect("seven classes")))
        .collect::<Result<_>>()?;
    balanced_accuracy(&confusion_matrix(&preds, &data.labels())?)
}

/// Trains one mean-teacher pair on a labelled split plus an unlabelled pool.
///
/// `on_step` sees the state after each optimizer step and any EMA merge that
/// follows it.
pub fn train_fold(
    train: &Dataset,
    unlabeled: &Dataset,
    spec: &ModelSpec,
    cfg: &MeanTeacherConfig,
    aug: &AugConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&TrainState),
) -> Result<FoldOutcome> {
    check_fold_inputs(spec, cfg, aug, train)?;
    let schedule = Schedule::new(train, unlabeled.len(), cfg, seed)?;
    if let (Some(a), Some(b)) = (train.entries().first(), unlabeled.entries().first()) {
        if !a.sample.image.same_dims(&b.sample.image) {
            return Err(Error::Data("unlabelled images differ in size from the training images".into()));
        }
    }
    let norm = NormStats::compute(train.images())?;
    let mut state = TrainState::new(spec, norm, seed)?;
    let samples: Vec<&Sample> = train.entries().iter().map(|e| &e.sample).collect();
    let pool: Vec<&Image> = unlabeled.images().collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let plans = schedule.epoch(epoch);
        let (mut class_sum, mut cons_sum) = (0.0, 0.0);
        let mut weight = 0.0;
        for plan in &plans {
            let inputs: Vec<LabeledInput> = plan
                .labeled
                .iter()
                .zip(&plan.partners)
                .map(|(&i, &p)| LabeledInput {
                    sample: samples[i],
                    partner: Some(samples[p]),
                })
                .collect();
            let u: Vec<&Image> = plan.unlabeled.iter().map(|&j| pool[j]).collect();
            let losses = train_step(&mut state, spec, &inputs, &u, cfg, aug)?;
            if cfg.ema_granularity == EmaGranularity::Step {
                ema_update(&mut state.teacher, &state.student, cfg.ema_alpha)?;
            }
            class_sum += losses.class_loss;
            cons_sum += losses.cons_loss;
            weight = losses.cons_weight;
            on_step(&state);
        }
        if cfg.ema_granularity == EmaGranularity::Epoch {
            ema_update(&mut state.teacher, &state.student, cfg.ema_alpha)?;
        }
        if !state.student.iter().all(|(_, t)| t.is_finite()) {
            return Err(Error::Data(format!("training diverged in epoch {epoch}; lower train.lr")));
        }
        state.epoch += 1;
        let steps = plans.len() as f64;
        let record = EpochRecord {
            epoch,
            class_loss: class_sum / steps,
            cons_loss: cons_sum / steps,
            cons_weight: weight,
            train_bacc: dataset_balanced_accuracy(&state.teacher, spec, &state.norm, train)?,
        };
        log::debug!(
            "epoch {epoch}: class {:.4} cons {:.5} w {:.4} bacc {:.4}",
            record.class_loss,
            record.cons_loss,
            record.cons_weight,
            record.train_bacc
        );
        history.push(record);
    }
    Ok(FoldOutcome {
        student: state.student,
        teacher: state.teacher,
        norm: state.norm,
        history,
    })
}

/// Plain supervised baseline on the same schedule and the same student
/// views as [`train_fold`], without teacher or consistency term.
///
/// `on_step` receives the step count and the parameters after each update.
pub fn train_supervised(
    train: &Dataset,
    spec: &ModelSpec,
    cfg: &MeanTeacherConfig,
    aug: &AugConfig,
    seed: u64,
    on_step: &mut dyn FnMut(usize, &ParamSet),
) -> Result<(ParamSet, NormStats)> {
    check_fold_inputs(spec, cfg, aug, train)?;
    let schedule = Schedule::new(train, 0, cfg, seed)?;
    let norm = NormStats::compute(train.images())?;
    let state = TrainState::new(spec, norm, seed)?;
    let (mut params, mut velocity, norm) = (state.student, state.velocity, state.norm);
    let samples: Vec<&Sample> = train.entries().iter().map(|e| &e.sample).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for plan in schedule.epoch(epoch) {
            let inputs: Vec<LabeledInput> = plan
                .labeled
                .iter()
                .zip(&plan.partners)
                .map(|(&i, &p)| LabeledInput {
                    sample: samples[i],
                    partner: Some(samples[p]),
                })
                .collect();
            let views = labeled_views(seed, step, &inputs, aug, ROLE_STUDENT)?;
            let batch = normalized_batch(&views, &[], &norm)?;
            let pass = student_pass(&params, spec, &views, &batch)?;
            let grads = backward(&params, &pass.cache, &pass.dlogits)?;
            sgd_update(&mut params, &grads, cfg.lr, cfg.momentum, &mut velocity)?;
            step += 1;
            on_step(step, &params);
        }
    }
    Ok((params, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagedata::Entry;
    use crate::nn::Tensor;

    fn constant_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::filled(&[3, 2], v));
        p.insert("b", Tensor::filled(&[4], v));
        p
    }

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            input_size: 8,
            widths: vec![4, 4],
            se_reduction: 2,
            class_count: 7,
        }
    }

    fn tiny_dataset(n: usize, seed: u64, labeled: bool) -> Dataset {
        let mut r = RngStream::new(seed, 0);
        let entries = (0..n)
            .map(|i| {
                let c = Class::ALL[i % 3];
                let base = c.index() as f64 / 6.0;
                let im = Image::from_fn(12, 12, |_, _| {
                    [base, 0.5 * r.uniform(), (base + 0.3 * r.uniform()).min(1.0)]
                });
                let sample = if labeled {
                    Sample::labeled(im, SoftLabel::one_hot(c))
                } else {
                    Sample::unlabeled(im)
                };
                Entry {
                    id: format!("{}{i}", if labeled { "l" } else { "u" }),
                    sample,
                }
            })
            .collect();
        Dataset::new(entries).unwrap()
    }

    fn small_cfg(epochs: usize) -> MeanTeacherConfig {
        MeanTeacherConfig {
            epochs,
            rampup_epochs: epochs.min(2),
            batch_size_labeled: 4,
            batch_size_unlabeled: 3,
            ..MeanTeacherConfig::default()
        }
    }

    fn small_aug() -> AugConfig {
        AugConfig {
            crop_size: 8,
            ..AugConfig::default()
        }
    }

    #[test]
    fn ema_extremes() {
        let mut t = constant_set(3.0);
        let s = constant_set(-1.0);
        ema_update(&mut t, &s, 1.0).unwrap();
        assert!(t.bit_identical(&constant_set(3.0)));
        ema_update(&mut t, &s, 0.0).unwrap();
        assert!(t.bit_identical(&s));
    }

    #[test]
    fn ema_three_halvings() {
        let mut t = constant_set(0.0);
        let s = constant_set(1.0);
        for _ in 0..3 {
            ema_update(&mut t, &s, 0.5).unwrap();
        }
        assert!(t.iter().all(|(_, x)| x.data().iter().all(|&v| v == 0.875)));
    }

    #[test]
    fn ema_rejects_mismatch_and_bad_alpha() {
        let mut t = constant_set(0.0);
        let mut other = ParamSet::new();
        other.insert("a", Tensor::zeros(&[3, 2]));
        assert!(ema_update(&mut t, &other, 0.5).is_err());
        assert!(ema_update(&mut t, &constant_set(1.0), 1.5).is_err());
    }

    #[test]
    fn ramp_shape() {
        let cfg = MeanTeacherConfig {
            consistency_max_weight: 2.0,
            rampup_epochs: 10,
            ..MeanTeacherConfig::default()
        };
        assert!((consistency_weight(0, &cfg) - 2.0 * (-5f64).exp()).abs() < 1e-15);
        assert_eq!(consistency_weight(10, &cfg), 2.0);
        assert_eq!(consistency_weight(25, &cfg), 2.0);
        let mut prev = 0.0;
        for e in 0..=12 {
            let w = consistency_weight(e, &cfg);
            assert!(w >= prev);
            prev = w;
        }
        let no_ramp = MeanTeacherConfig {
            rampup_epochs: 0,
            ..cfg
        };
        assert_eq!(consistency_weight(0, &no_ramp), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(MeanTeacherConfig::default().validate().is_ok());
        let bad = [
            MeanTeacherConfig { ema_alpha: 1.0, ..Default::default() },
            MeanTeacherConfig { lr: 0.0, ..Default::default() },
            MeanTeacherConfig { rampup_epochs: 40, ..Default::default() },
            MeanTeacherConfig { batch_size_labeled: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn identical_views_give_zero_consistency() {
        // no noise and a full-size crop: student and teacher see the same views
        let spec = ModelSpec { input_size: 12, ..tiny_spec() };
        let data = tiny_dataset(6, 1, true);
        let u = tiny_dataset(2, 2, false);
        let norm = NormStats::compute(data.images()).unwrap();
        let mut state = TrainState::new(&spec, norm, 3).unwrap();
        let inputs: Vec<LabeledInput> = data
            .entries()
            .iter()
            .map(|e| LabeledInput {
                sample: &e.sample,
                partner: None,
            })
            .collect();
        let pool: Vec<&Image> = u.images().collect();
        let aug = AugConfig::disabled(12);
        let teacher_before = state.teacher.clone();
        let l = train_step(&mut state, &spec, &inputs, &pool, &small_cfg(1), &aug).unwrap();
        assert_eq!(l.cons_loss, 0.0);
        assert!(l.class_loss > 0.0);
        assert!(state.teacher.bit_identical(&teacher_before));
        assert!(!state.student.bit_identical(&teacher_before));
        assert!(train_step(&mut state, &spec, &[], &pool, &small_cfg(1), &aug).is_err());
    }

    #[test]
    fn single_step_is_deterministic() {
        let spec = tiny_spec();
        let data = tiny_dataset(5, 4, true);
        let u = tiny_dataset(3, 5, false);
        let run = || {
            let norm = NormStats::compute(data.images()).unwrap();
            let mut s = TrainState::new(&spec, norm, 9).unwrap();
            let inputs: Vec<LabeledInput> = data
                .entries()
                .iter()
                .map(|e| LabeledInput {
                    sample: &e.sample,
                    partner: Some(&data.entries()[0].sample),
                })
                .collect();
            let pool: Vec<&Image> = u.images().collect();
            train_step(&mut s, &spec, &inputs, &pool, &small_cfg(1), &small_aug()).unwrap();
            s.student
        };
        assert!(run().bit_identical(&run()));
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let out = train_fold(
            &tiny_dataset(6, 1, true),
            &Dataset::default(),
            &tiny_spec(),
            &small_cfg(0),
            &small_aug(),
            5,
            &mut |_| {},
        )
        .unwrap();
        assert!(out.teacher.bit_identical(&out.student));
        let init = TrainState::new(&tiny_spec(), out.norm, 5).unwrap();
        assert!(out.student.bit_identical(&init.student));
        assert!(out.history.is_empty());
    }

    #[test]
    fn history_length_and_csv() {
        let out = train_fold(
            &tiny_dataset(9, 1, true),
            &tiny_dataset(4, 2, false),
            &tiny_spec(),
            &small_cfg(3),
            &small_aug(),
            5,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(out.history.len(), 3);
        let csv = history_csv(&out.history);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with(HISTORY_HEADER));
        assert!(out.history.iter().all(|r| r.cons_loss >= 0.0 && (0.0..=1.0).contains(&r.train_bacc)));
    }

    #[test]
    fn teacher_only_changes_through_ema() {
        let cfg = MeanTeacherConfig {
            ema_granularity: EmaGranularity::Epoch,
            ..small_cfg(2)
        };
        let mut snapshots = Vec::new();
        train_fold(
            &tiny_dataset(9, 1, true),
            &tiny_dataset(4, 2, false),
            &tiny_spec(),
            &cfg,
            &small_aug(),
            5,
            &mut |s| snapshots.push((s.epoch, s.teacher.clone())),
        )
        .unwrap();
        // three steps per epoch, teacher merged only at epoch end
        assert_eq!(snapshots.len(), 6);
        for w in snapshots.windows(2) {
            if w[0].0 == w[1].0 {
                assert!(w[0].1.bit_identical(&w[1].1));
            }
        }
        assert!(!snapshots[2].1.bit_identical(&snapshots[3].1));
    }

    #[test]
    fn balanced_schedule_repeats_rare_classes() {
        let entries: Vec<Entry> = (0..12)
            .map(|i| Entry {
                id: format!("s{i}"),
                sample: Sample::labeled(
                    Image::filled(8, 8, 0.5),
                    SoftLabel::one_hot(if i < 10 { Class::Nv } else { Class::Df }),
                ),
            })
            .collect();
        let d = Dataset::new(entries).unwrap();
        let cfg = small_cfg(1);
        let sched = Schedule::new(&d, 0, &cfg, 1).unwrap();
        let drawn: Vec<usize> = sched.epoch(0).into_iter().flat_map(|b| b.labeled).collect();
        // floor of 6 draws per class: DF samples appear three times each
        assert_eq!(drawn.len(), 16);
        assert_eq!(drawn.iter().filter(|&&i| i >= 10).count(), 6);
        for b in sched.epoch(0) {
            for (&i, &p) in b.labeled.iter().zip(&b.partners) {
                assert_ne!(sched.classes[i], sched.classes[p]);
            }
        }
        let plain = MeanTeacherConfig { balance_classes: false, ..cfg };
        let sched = Schedule::new(&d, 0, &plain, 1).unwrap();
        assert_eq!(sched.epoch(0).iter().map(|b| b.labeled.len()).sum::<usize>(), 12);
    }

    #[test]
    fn degenerate_folds_are_rejected() {
        let one_class: Vec<Entry> = tiny_dataset(9, 1, true)
            .entries()
            .iter()
            .filter(|e| e.sample.label.unwrap().argmax() == Class::Mel)
            .cloned()
            .collect();
        let d = Dataset::new(one_class).unwrap();
        let r = train_fold(&d, &Dataset::default(), &tiny_spec(), &small_cfg(1), &small_aug(), 0, &mut |_| {});
        assert!(r.is_err());
        let wrong_crop = AugConfig { crop_size: 9, ..small_aug() };
        let r = train_fold(&tiny_dataset(9, 1, true), &Dataset::default(), &tiny_spec(), &small_cfg(1), &wrong_crop, 0, &mut |_| {});
        assert!(r.is_err());
    }
}
