//! The incremental training loop.
//!
//! For each task `t`: grow the model, train on exemplars plus the task's
//! training samples, evaluate on the test sets of tasks `1..=t`, then add
//! exemplars for the task's classes.
//!
//! Mini-batch gradients are accumulated over fixed chunks of
//! [`GRAD_CHUNK`] samples, each on its own worker copy of the model, and the
//! chunk gradients are summed in chunk order. The result is independent of
//! how many threads run the chunks.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::fusionmodel::{FusionConfig, FusionModel, ModelError};
use crate::imgio::{LabeledSample, Split, Task, TaskSequence};
use crate::losses::{phase_objective, LossConfig, LossError};
use crate::memory::{ExemplarStore, MemoryError, SelectionPolicy};
use crate::metrics::{evaluate_counts, AccuracyWeighting, MetricsError, PhaseReport, TaskCounts};
use crate::nncore::{sgd_step, NnError, PlateauTracker, SgdConfig};
use crate::rng::{derive_seed, seeded, tag};
use crate::streams::{StreamError, StreamSpec};

/// Samples per gradient worker.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("phase {0}: empty training set")]
    EmptyTrainingSet(usize),
    #[error("phase {phase}: non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFinite { phase: usize, epoch: usize, batch: usize },
    #[error("phase {phase}: test sample {sample} reached a gradient batch")]
    TestLeak { phase: usize, sample: usize },
    #[error("phase {phase}: class {class} has no logit in the model")]
    UnknownClass { phase: usize, class: u32 },
    #[error("invalid training setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Settings for one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePlan {
    /// 1-based task index.
    pub task_index: usize,
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub loss: LossConfig,
    pub flip_augment: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseLog {
    pub phase: usize,
    pub epochs: Vec<EpochLog>,
    /// Accuracy of the trained model on the (unaugmented) phase training set.
    pub train_accuracy: f64,
}

impl PhaseLog {
    /// `phase_<t>.csv` body: `epoch,mean_loss,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,lr\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.9},{:.9}", e.epoch, e.mean_loss, e.lr);
        }
        out
    }
}

/// Hooks into a run, for logging and invariant checks.
pub trait Observer {
    fn on_batch(&mut self, _phase: usize, _epoch: usize, _batch: &[&LabeledSample]) {}
    /// Called with the per-task correct/total counts behind each report.
    fn on_evaluate(&mut self, _phase: usize, _counts: &TaskCounts) {}
    fn on_phase_end(&mut self, _outcome: &PhaseOutcome, _model: &FusionModel, _store: &ExemplarStore) {}
}

/// Observer that does nothing.
pub struct Quiet;

impl Observer for Quiet {}

fn sample_image(s: &LabeledSample, flip: bool) -> std::borrow::Cow<'_, crate::imgio::Image> {
    if flip {
        std::borrow::Cow::Owned(s.image.flip_horizontal())
    } else {
        std::borrow::Cow::Borrowed(&s.image)
    }
}

/// Trains `model` (already grown for this task) on the exemplars in `store`
/// plus `task.train`.
pub fn train_phase(
    model: &mut FusionModel,
    store: &ExemplarStore,
    task: &Task,
    spec: &StreamSpec,
    plan: &PhasePlan,
    observer: &mut dyn Observer,
) -> Result<PhaseLog, TrainError> {
    let phase = plan.task_index;
    if plan.epochs == 0 {
        return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
    }
    plan.sgd.validate()?;
    plan.loss.validate()?;
    let data = store.build_training_set(&task.train);
    if data.is_empty() {
        return Err(TrainError::EmptyTrainingSet(phase));
    }
    let labels = data
        .iter()
        .map(|s| model.position_of(s.class_id).ok_or(TrainError::UnknownClass { phase, class: s.class_id }))
        .collect::<Result<Vec<_>, _>>()?;
    let distill = model.frozen_snapshot().is_some();

    let mut lr = plan.sgd.learning_rate;
    let mut tracker = PlateauTracker::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(plan.epochs);

    for epoch in 0..plan.epochs {
        order.shuffle(&mut seeded(plan.seed, &[tag::SHUFFLE, phase as u64, epoch as u64]));
        let mut flip_rng = seeded(plan.seed, &[tag::FLIP, phase as u64, epoch as u64]);
        let mut epoch_loss = 0.0;

        for (b, batch) in order.chunks(plan.sgd.batch_size).enumerate() {
            let members: Vec<&LabeledSample> = batch.iter().map(|&i| &data[i]).collect();
            if let Some(s) = members.iter().find(|s| s.split != Split::Train) {
                return Err(TrainError::TestLeak { phase, sample: s.id });
            }
            observer.on_batch(phase, epoch, &members);
            let jobs: Vec<(usize, bool)> = batch
                .iter()
                .map(|&i| (i, plan.flip_augment && flip_rng.gen_bool(0.5)))
                .collect();
            let chunks: Vec<&[(usize, bool)]> = jobs.chunks(GRAD_CHUNK).collect();
            let frozen_model = &*model;
            let results = crate::par::map(&chunks, |chunk| -> Result<(FusionModel, f64), TrainError> {
                let mut worker = frozen_model.worker_copy();
                let mut loss_sum = 0.0;
                for &(i, flip) in chunk.iter() {
                    let streams = spec.extract(&sample_image(&data[i], flip))?;
                    let (logits, tape) = worker.forward_train(&streams)?;
                    let old = if distill { Some(worker.forward_frozen(&streams)?) } else { None };
                    let lg = phase_objective(&logits, labels[i], old.as_deref(), &plan.loss)?;
                    loss_sum += lg.value;
                    worker.backward(&streams, &tape, &lg.grad);
                }
                Ok((worker, loss_sum))
            });
            let mut batch_loss = 0.0;
            for r in results {
                let (worker, loss) = r?;
                model.add_grads_from(&worker);
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite { phase, epoch, batch: b });
            }
            epoch_loss += batch_loss;
            model.scale_grads(1.0 / batch.len() as f64);
            model.mask_frozen_grads();
            sgd_step(&mut model.layers_mut(), lr).map_err(|_| TrainError::NonFinite { phase, epoch, batch: b })?;
        }

        let mean_loss = epoch_loss / data.len() as f64;
        epochs.push(EpochLog { epoch, mean_loss, lr });
        lr = tracker.update(mean_loss, lr, &plan.sgd);
    }

    let hits = crate::par::map(&data, |s| -> Result<bool, TrainError> {
        Ok(model.predict(&spec.extract(&s.image)?)? == s.class_id)
    });
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(PhaseLog { phase, epochs, train_accuracy: correct as f64 / data.len() as f64 })
}

/// Everything needed to run a full task sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub fusion: FusionConfig,
    pub thumb_side: usize,
    pub exemplars_per_class: usize,
    pub selection_policy: SelectionPolicy,
    pub loss: LossConfig,
    pub sgd: SgdConfig,
    pub epochs: usize,
    pub flip_augment: bool,
    pub weighting: AccuracyWeighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            thumb_side: 16,
            exemplars_per_class: 10,
            selection_policy: SelectionPolicy::Random,
            loss: LossConfig::default(),
            sgd: SgdConfig::default(),
            epochs: 30,
            flip_augment: true,
            weighting: AccuracyWeighting::Sample,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn stream_spec(&self) -> StreamSpec {
        StreamSpec { streams: self.fusion.streams.clone(), thumb_side: self.thumb_side }
    }
}

/// Result of one phase of [`run_sequence`].
#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub phase: usize,
    pub log: PhaseLog,
    pub report: PhaseReport,
    pub checkpoint: Vec<u8>,
    pub exemplar_manifest: String,
    pub store_size: usize,
}

pub fn run_sequence(
    tasks: &TaskSequence,
    cfg: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<Vec<PhaseOutcome>, TrainError> {
    if cfg.thumb_side == 0 {
        return Err(TrainError::InvalidConfig("thumb_side must be >= 1".into()));
    }
    let spec = cfg.stream_spec();
    let mut model = FusionModel::new(cfg.fusion.clone(), &spec.dims(), cfg.seed)?;
    let mut store = ExemplarStore::new(cfg.exemplars_per_class, cfg.selection_policy);
    let mut reports: Vec<PhaseReport> = Vec::with_capacity(tasks.len());
    let mut outcomes = Vec::with_capacity(tasks.len());

    for (i, task) in tasks.tasks.iter().enumerate() {
        let phase = i + 1;
        model.grow_for_task(&task.classes, cfg.seed)?;
        let plan = PhasePlan {
            task_index: phase,
            epochs: cfg.epochs,
            sgd: cfg.sgd,
            loss: cfg.loss,
            flip_augment: cfg.flip_augment,
            seed: cfg.seed,
        };
        let log = train_phase(&mut model, &store, task, &spec, &plan, observer)?;
        let counts = evaluate_counts(&model, &spec, tasks, phase)?;
        observer.on_evaluate(phase, &counts);
        let report = PhaseReport::from_counts(phase, &counts, &reports, cfg.weighting)?;

        let features = match cfg.selection_policy {
            SelectionPolicy::Random => None,
            SelectionPolicy::Herding => Some(
                crate::par::map(&task.train, |s| -> Result<Vec<f64>, TrainError> {
                    Ok(model.embed(&spec.extract(&s.image)?, i)?)
                })
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        store.update(&task.train, features.as_deref(), derive_seed(cfg.seed, &[tag::EXEMPLAR, phase as u64]))?;

        let outcome = PhaseOutcome {
            phase,
            log,
            report: report.clone(),
            checkpoint: model.to_checkpoint(),
            exemplar_manifest: store.manifest_csv(),
            store_size: store.len(),
        };
        observer.on_phase_end(&outcome, &model, &store);
        reports.push(report);
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusionmodel::{FusionMode, HeadScope};
    use crate::imgio::{generate_dataset, split_tasks, GeneratorSpec, Image};
    use crate::streams::StreamId;

    fn small_tasks(classes: usize, tasks: usize, seed: u64) -> TaskSequence {
        let ds = generate_dataset(&GeneratorSpec {
            num_classes: classes,
            train_per_class: 8,
            test_per_class: 3,
            image_size: 16,
            seed,
        })
        .unwrap();
        split_tasks(&ds.samples, tasks, Some(seed)).unwrap()
    }

    fn small_cfg(mode: FusionMode) -> TrainConfig {
        let streams = if mode == FusionMode::Single { vec![StreamId::Rgb] } else { vec![StreamId::Rgb, StreamId::ColorHist] };
        TrainConfig {
            fusion: FusionConfig { mode, streams, proj_dim: 8, trunk_dims: vec![8], ..FusionConfig::default() },
            thumb_side: 4,
            exemplars_per_class: 2,
            epochs: 3,
            sgd: SgdConfig { batch_size: 8, ..SgdConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn first_phase_starts_near_chance() {
        let tasks = small_tasks(4, 1, 1);
        let cfg = small_cfg(FusionMode::Intermediate);
        let out = run_sequence(&tasks, &cfg, &mut Quiet).unwrap();
        let first = out[0].log.epochs[0].mean_loss;
        let chance = 4f64.ln();
        assert!((first - chance).abs() <= 0.2 * chance, "{first} vs {chance}");
        assert_eq!(out[0].report.forgetting, 0.0);
        assert_eq!(out[0].report.per_task_accuracy.len(), 1);
    }

    #[test]
    fn runs_are_deterministic() {
        let tasks = small_tasks(4, 2, 2);
        for mode in [FusionMode::Early, FusionMode::Intermediate] {
            let cfg = small_cfg(mode);
            let a = run_sequence(&tasks, &cfg, &mut Quiet).unwrap();
            let b = run_sequence(&tasks, &cfg, &mut Quiet).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.log, y.log);
                assert_eq!(x.checkpoint, y.checkpoint);
                assert_eq!(x.report, y.report);
            }
        }
    }

    #[test]
    fn store_and_evaluation_grow_with_tasks() {
        let tasks = small_tasks(6, 3, 3);
        let mut cfg = small_cfg(FusionMode::Intermediate);
        cfg.selection_policy = SelectionPolicy::Herding;
        let out = run_sequence(&tasks, &cfg, &mut Quiet).unwrap();
        for (t, o) in out.iter().enumerate() {
            assert_eq!(o.store_size, 2 * tasks.classes_through(t + 1));
            assert_eq!(o.report.per_task_accuracy.len(), t + 1);
            assert_eq!(o.exemplar_manifest.lines().count(), 1 + o.store_size);
        }
    }

    #[test]
    fn test_samples_are_rejected() {
        let mut tasks = small_tasks(2, 1, 4);
        let leaked = tasks.tasks[0].test[0].clone();
        tasks.tasks[0].train.push(leaked.clone());
        let cfg = small_cfg(FusionMode::Single);
        match run_sequence(&tasks, &cfg, &mut Quiet) {
            Err(TrainError::TestLeak { phase: 1, sample }) => assert_eq!(sample, leaked.id),
            other => panic!("expected leak error, got {other:?}"),
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let mut tasks = small_tasks(2, 1, 5);
        tasks.tasks[0].train.clear();
        assert!(matches!(
            run_sequence(&tasks, &small_cfg(FusionMode::Single), &mut Quiet),
            Err(TrainError::EmptyTrainingSet(1))
        ));
    }

    #[test]
    fn frozen_snapshot_is_untouched_by_training() {
        let tasks = small_tasks(4, 2, 6);
        let cfg = small_cfg(FusionMode::Intermediate);
        let spec = cfg.stream_spec();
        let mut model = FusionModel::new(cfg.fusion.clone(), &spec.dims(), 0).unwrap();
        let store = ExemplarStore::new(2, SelectionPolicy::Random);
        let plan = |t| PhasePlan {
            task_index: t,
            epochs: 2,
            sgd: cfg.sgd,
            loss: cfg.loss,
            flip_augment: true,
            seed: 0,
        };
        model.grow_for_task(&tasks.tasks[0].classes, 0).unwrap();
        train_phase(&mut model, &store, &tasks.tasks[0], &spec, &plan(1), &mut Quiet).unwrap();
        model.grow_for_task(&tasks.tasks[1].classes, 0).unwrap();
        let snap_before = model.frozen_snapshot().unwrap().to_checkpoint();
        let x = spec.extract(&tasks.tasks[0].test[0].image).unwrap();
        let old_before = model.forward_frozen(&x).unwrap();
        let live_before = model.forward(&x, HeadScope::All).unwrap();
        train_phase(&mut model, &store, &tasks.tasks[1], &spec, &plan(2), &mut Quiet).unwrap();
        assert_eq!(model.frozen_snapshot().unwrap().to_checkpoint(), snap_before);
        assert_eq!(model.forward_frozen(&x).unwrap(), old_before);
        assert_ne!(model.forward(&x, HeadScope::All).unwrap(), live_before);
    }

    #[test]
    fn separable_features_reach_full_train_accuracy() {
        // four classes with distinct solid colors and a tiny single-stream model
        let colors = [[230, 20, 20], [20, 230, 20], [20, 20, 230], [230, 230, 20]];
        let mut train = Vec::new();
        for (c, rgb) in colors.iter().enumerate() {
            for i in 0..10u8 {
                let jitter = |v: u8| v.saturating_add(i).saturating_sub(5);
                train.push(LabeledSample {
                    id: train.len(),
                    image: Image::filled(4, 4, rgb.map(jitter)),
                    class_id: c as u32,
                    split: Split::Train,
                });
            }
        }
        let task = Task { classes: vec![0, 1, 2, 3], train, test: vec![] };
        let fusion = FusionConfig {
            mode: FusionMode::Single,
            streams: vec![StreamId::Rgb],
            trunk_dims: vec![8],
            ..FusionConfig::default()
        };
        let spec = StreamSpec { streams: vec![StreamId::Rgb], thumb_side: 2 };
        let mut model = FusionModel::new(fusion, &spec.dims(), 3).unwrap();
        model.grow_for_task(&task.classes, 3).unwrap();
        let plan = PhasePlan {
            task_index: 1,
            epochs: 50,
            sgd: SgdConfig { learning_rate: 0.5, batch_size: 4, ..SgdConfig::default() },
            loss: LossConfig::default(),
            flip_augment: false,
            seed: 3,
        };
        let store = ExemplarStore::new(0, SelectionPolicy::Random);
        let log = train_phase(&mut model, &store, &task, &spec, &plan, &mut Quiet).unwrap();
        assert_eq!(log.train_accuracy, 1.0);
        let csv = log.to_csv();
        assert_eq!(csv.lines().next(), Some("epoch,mean_loss,lr"));
        assert_eq!(csv.lines().count(), 51);
    }
}
