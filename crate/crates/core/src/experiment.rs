//! Run configuration, run directories and the stream/fusion ablation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusionmodel::{FusionConfig, FusionMode, ModelError};
use crate::imgio::{load_dataset, split_tasks, DatasetError, LabeledSample, TaskError, TaskSequence};
use crate::losses::{LossConfig, LossError};
use crate::memory::SelectionPolicy;
use crate::metrics::{average_accuracy, average_forgetting, report_csv, AccuracyWeighting, MetricsError, PhaseReport};
use crate::nncore::{Activation, NnError, SgdConfig};
use crate::streams::StreamId;
use crate::trainer::{run_sequence, Observer, PhaseOutcome, Quiet, TrainConfig, TrainError};

/// Environment variable that caps the number of ablation worker threads.
pub const THREADS_ENV: &str = "CILFUSE_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) | ExperimentError::Io { .. } => 3,
            ExperimentError::Numerical(_) => 4,
        }
    }
}

impl From<TrainError> for ExperimentError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::NonFinite { .. } | TrainError::Nn(NnError::NonFiniteGradient { .. }) => {
                ExperimentError::Numerical(msg)
            }
            TrainError::InvalidConfig(_)
            | TrainError::Nn(NnError::InvalidConfig(_))
            | TrainError::Loss(LossError::InvalidConfig(_))
            | TrainError::Model(ModelError::InvalidConfig(_)) => ExperimentError::Config(msg),
            _ => ExperimentError::Data(msg),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Flat JSON run configuration. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub num_tasks: usize,
    pub fusion_mode: FusionMode,
    pub streams: Vec<StreamId>,
    pub exemplars_per_class: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub patience: usize,
    pub proj_dim: usize,
    pub trunk_dims: Vec<usize>,
    pub thumb_side: usize,
    pub selection_policy: SelectionPolicy,
    pub seed: u64,
    pub activation: Activation,
    pub flip_augment: bool,
    pub freeze_old_heads: bool,
    pub task_averaged_accuracy: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            num_tasks: 3,
            fusion_mode: train.fusion.mode,
            streams: train.fusion.streams.clone(),
            exemplars_per_class: train.exemplars_per_class,
            alpha: train.loss.alpha,
            temperature: train.loss.temperature,
            epochs: train.epochs,
            batch_size: train.sgd.batch_size,
            learning_rate: train.sgd.learning_rate,
            decay_factor: train.sgd.decay_factor,
            patience: train.sgd.patience,
            proj_dim: train.fusion.proj_dim,
            trunk_dims: train.fusion.trunk_dims.clone(),
            thumb_side: train.thumb_side,
            selection_policy: train.selection_policy,
            seed: train.seed,
            activation: train.fusion.activation,
            flip_augment: train.flip_augment,
            freeze_old_heads: train.fusion.freeze_old_heads,
            task_averaged_accuracy: false,
        }
    }
}

impl RunConfig {
    /// Full-length schedule: 200 epochs, everything else at defaults.
    pub fn long_schedule() -> Self {
        Self { epochs: 200, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks every field and converts to the trainer settings.
    pub fn train_config(&self) -> Result<TrainConfig, ExperimentError> {
        let bad = |field: &str, why: &str| Err(ExperimentError::Config(format!("{field}: {why}")));
        if self.num_tasks == 0 {
            return bad("num_tasks", "must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be finite and > 0");
        }
        if !(self.decay_factor.is_finite() && self.decay_factor >= 1.0) {
            return bad("decay_factor", "must be finite and >= 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", "must lie in [0, 1]");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature", "must be finite and > 0");
        }
        if self.thumb_side == 0 {
            return bad("thumb_side", "must be >= 1");
        }
        if self.proj_dim == 0 {
            return bad("proj_dim", "must be >= 1");
        }
        if self.trunk_dims.contains(&0) {
            return bad("trunk_dims", "every width must be >= 1");
        }
        let fusion = FusionConfig {
            mode: self.fusion_mode,
            streams: self.streams.clone(),
            proj_dim: self.proj_dim,
            trunk_dims: self.trunk_dims.clone(),
            activation: self.activation,
            freeze_old_heads: self.freeze_old_heads,
        };
        fusion.validate().map_err(|e| ExperimentError::Config(format!("streams/fusion_mode: {e}")))?;
        let sgd = SgdConfig {
            learning_rate: self.learning_rate,
            decay_factor: self.decay_factor,
            patience: self.patience,
            batch_size: self.batch_size,
        };
        sgd.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        let loss = LossConfig { alpha: self.alpha, temperature: self.temperature };
        loss.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(TrainConfig {
            fusion,
            thumb_side: self.thumb_side,
            exemplars_per_class: self.exemplars_per_class,
            selection_policy: self.selection_policy,
            loss,
            sgd,
            epochs: self.epochs,
            flip_augment: self.flip_augment,
            weighting: if self.task_averaged_accuracy { AccuracyWeighting::Task } else { AccuracyWeighting::Sample },
            seed: self.seed,
        })
    }
}

/// Loads the dataset referenced by `cfg`.
pub fn load_samples(cfg: &RunConfig) -> Result<Vec<LabeledSample>, ExperimentError> {
    load_dataset(&cfg.data_dir).map_err(|e: DatasetError| ExperimentError::Data(e.to_string()))
}

/// Splits samples into tasks with a class order fixed by the run seed.
pub fn make_tasks(samples: &[LabeledSample], cfg: &RunConfig) -> Result<TaskSequence, ExperimentError> {
    split_tasks(samples, cfg.num_tasks, Some(cfg.seed))
        .map_err(|e: TaskError| ExperimentError::Config(format!("num_tasks: {e}")))
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub reports: Vec<PhaseReport>,
    pub outcomes: Vec<PhaseOutcome>,
    pub a_bar: f64,
    pub f_bar: f64,
}

impl RunSummary {
    pub fn final_line(&self) -> String {
        format!("A_bar={:.6} F_bar={:.6}", self.a_bar, self.f_bar)
    }
}

/// Runs the full protocol on prepared tasks. Writes a run directory when
/// `out_dir` is given.
pub fn run_on_tasks(
    tasks: &TaskSequence,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    observer: &mut dyn Observer,
) -> Result<RunSummary, ExperimentError> {
    let train = cfg.train_config()?;
    let outcomes = run_sequence(tasks, &train, observer)?;
    let reports: Vec<PhaseReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let summary = RunSummary {
        a_bar: average_accuracy(&reports),
        f_bar: average_forgetting(&reports),
        reports,
        outcomes,
    };
    if let Some(dir) = out_dir {
        write_run_dir(dir, cfg, &summary)?;
    }
    Ok(summary)
}

/// Loads data, runs, and writes `cfg.out_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary, ExperimentError> {
    cfg.train_config()?;
    let samples = load_samples(cfg)?;
    let tasks = make_tasks(&samples, cfg)?;
    run_on_tasks(&tasks, cfg, Some(&cfg.out_dir), &mut Quiet)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Files: `config.json`, `checkpoint_<t>.bin`, `phase_<t>.csv`,
/// `exemplars_<t>.csv`, `report.csv`.
pub fn write_run_dir(dir: &Path, cfg: &RunConfig, summary: &RunSummary) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("config.json"), cfg.to_json().as_bytes())?;
    for o in &summary.outcomes {
        let t = o.phase;
        write_file(&dir.join(format!("checkpoint_{t}.bin")), &o.checkpoint)?;
        write_file(&dir.join(format!("phase_{t}.csv")), o.log.to_csv().as_bytes())?;
        write_file(&dir.join(format!("exemplars_{t}.csv")), o.exemplar_manifest.as_bytes())?;
    }
    write_file(&dir.join("report.csv"), report_csv(&summary.reports).as_bytes())
}

/// One row of the ablation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationVariant {
    pub streams: Vec<StreamId>,
    pub mode: FusionMode,
}

impl AblationVariant {
    pub fn streams_label(&self) -> String {
        self.streams.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.streams_label(), self.mode.name())
    }
}

/// rgb alone, then rgb plus edge, color, or both under early and
/// intermediate fusion.
pub fn ablation_variants() -> Vec<AblationVariant> {
    use StreamId::*;
    let mut out = vec![AblationVariant { streams: vec![Rgb], mode: FusionMode::Single }];
    for streams in [vec![Rgb, EdgeHist], vec![Rgb, ColorHist], vec![Rgb, EdgeHist, ColorHist]] {
        for mode in [FusionMode::Early, FusionMode::Intermediate] {
            out.push(AblationVariant { streams: streams.clone(), mode });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub a_bar: f64,
    pub f_bar: f64,
}

pub const ABLATION_HEADER: &str = "streams,fusion,A_bar,F_bar";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.variant.streams_label(),
            r.variant.mode.name(),
            r.a_bar,
            r.f_bar
        ));
    }
    out
}

/// Reads the thread cap from [`THREADS_ENV`].
pub fn thread_cap_from_env() -> Result<Option<usize>, ExperimentError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(ExperimentError::Config(format!("{THREADS_ENV}: expected a positive integer, got {v:?}"))),
        },
    }
}

/// Runs every variant on the same tasks. Variant run directories go under
/// `out_dir/<label>/` when `out_dir` is given.
pub fn ablate_tasks(
    tasks: &TaskSequence,
    base: &RunConfig,
    out_dir: Option<&Path>,
    threads: Option<usize>,
) -> Result<Vec<AblationRow>, ExperimentError> {
    let variants = ablation_variants();
    let configs: Vec<RunConfig> = variants
        .iter()
        .map(|v| RunConfig { fusion_mode: v.mode, streams: v.streams.clone(), ..base.clone() })
        .collect();
    for c in &configs {
        c.train_config()?;
    }
    let results = crate::par::with_thread_cap(threads, || {
        crate::par::map(&configs, |c| {
            let dir = out_dir.map(|d| {
                let v = AblationVariant { streams: c.streams.clone(), mode: c.fusion_mode };
                d.join(v.label())
            });
            let cfg = RunConfig { out_dir: dir.clone().unwrap_or_else(|| c.out_dir.clone()), ..c.clone() };
            run_on_tasks(tasks, &cfg, dir.as_deref(), &mut Quiet)
        })
    });
    variants
        .into_iter()
        .zip(results)
        .map(|(variant, r)| r.map(|s| AblationRow { variant, a_bar: s.a_bar, f_bar: s.f_bar }))
        .collect()
}

/// Loads data once, runs the matrix, and writes `ablation_table.csv`.
pub fn run_ablation(base: &RunConfig) -> Result<Vec<AblationRow>, ExperimentError> {
    base.train_config()?;
    let threads = thread_cap_from_env()?;
    let samples = load_samples(base)?;
    let tasks = make_tasks(&samples, base)?;
    let rows = ablate_tasks(&tasks, base, Some(&base.out_dir), threads)?;
    fs::create_dir_all(&base.out_dir).map_err(io_err(&base.out_dir))?;
    write_file(&base.out_dir.join("ablation_table.csv"), ablation_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Parses a `report.csv` back into its per-phase reports.
pub fn read_report(path: &Path) -> Result<(Vec<PhaseReport>, (f64, f64)), ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    crate::metrics::parse_report(&text).map_err(|e: MetricsError| ExperimentError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_bit_stably() {
        let cfg = RunConfig { alpha: 0.1 + 0.2, temperature: 1.0 / 3.0, seed: u64::MAX, ..RunConfig::default() };
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.alpha.to_bits(), cfg.alpha.to_bits());
        assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn long_schedule_differs_only_in_epochs() {
        let long = RunConfig::long_schedule();
        assert_eq!(long.epochs, 200);
        assert_eq!(RunConfig { epochs: RunConfig::default().epochs, ..long }, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::from_json(r#"{"num_taks": 3}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("num_taks"), "{err}");
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = RunConfig::from_json(r#"{"num_tasks": 5, "fusion_mode": "early"}"#).unwrap();
        assert_eq!(cfg.num_tasks, 5);
        assert_eq!(cfg.fusion_mode, FusionMode::Early);
        assert_eq!(cfg.epochs, RunConfig::default().epochs);
    }

    #[test]
    fn invalid_fields_are_named() {
        for (cfg, field) in [
            (RunConfig { num_tasks: 0, ..RunConfig::default() }, "num_tasks"),
            (RunConfig { alpha: 1.5, ..RunConfig::default() }, "alpha"),
            (RunConfig { temperature: 0.0, ..RunConfig::default() }, "temperature"),
            (RunConfig { batch_size: 0, ..RunConfig::default() }, "batch_size"),
            (RunConfig { streams: vec![StreamId::ColorHist], ..RunConfig::default() }, "streams"),
        ] {
            let err = cfg.train_config().unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(field), "{err}");
        }
    }

    #[test]
    fn ablation_matrix_shape() {
        let v = ablation_variants();
        assert_eq!(v.len(), 7);
        assert_eq!(v[0].mode, FusionMode::Single);
        assert_eq!(v[0].streams, vec![StreamId::Rgb]);
        assert!(v[1..].iter().all(|x| x.mode != FusionMode::Single && x.streams[0] == StreamId::Rgb));
        let labels: std::collections::HashSet<_> = v.iter().map(|x| x.label()).collect();
        assert_eq!(labels.len(), 7);
        let rows: Vec<AblationRow> = v.into_iter().map(|variant| AblationRow { variant, a_bar: 0.5, f_bar: 0.1 }).collect();
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 8);
        assert_eq!(csv.lines().next(), Some(ABLATION_HEADER));
        assert_eq!(csv.lines().nth(1), Some("rgb,single,0.500000,0.100000"));
    }

    #[test]
    fn numerical_failures_map_to_exit_four() {
        let e: ExperimentError = TrainError::NonFinite { phase: 1, epoch: 0, batch: 2 }.into();
        assert_eq!(e.exit_code(), 4);
        let e: ExperimentError = TrainError::EmptyTrainingSet(1).into();
        assert_eq!(e.exit_code(), 3);
    }
}
