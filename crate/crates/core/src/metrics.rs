//! Task-agnostic evaluation, average accuracy and average forgetting.
//!
//! Forgetting is not defined by a closed formula in the source material; the
//! usual class-incremental definition is used:
//!
//! ```text
//! F_t = 1/(t−1) · Σ_{j<t} ( max_{j≤k<t} a_{k,j} − a_{t,j} ),   F_1 = 0
//! ```
//!
//! where `a_{k,j}` is the accuracy on task `j`'s test set after phase `k`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::fusionmodel::{FusionModel, ModelError};
use crate::imgio::TaskSequence;
use crate::streams::{StreamError, StreamSpec};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("phase {0} has an empty test set")]
    EmptyTestSet(usize),
    #[error("phase {phase} is outside 1..={tasks}")]
    BadPhase { phase: usize, tasks: usize },
    #[error("phase {phase} needs {expected} earlier reports, got {got}")]
    History { phase: usize, expected: usize, got: usize },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// How the cumulative accuracy `A_t` weights tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AccuracyWeighting {
    /// Correct over total on the union of test sets.
    #[default]
    Sample,
    /// Mean of the per-task accuracies.
    Task,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub phase: usize,
    /// `a_{t,j}` for `j = 1..=t`.
    pub per_task_accuracy: Vec<f64>,
    pub cumulative_accuracy: f64,
    pub forgetting: f64,
}

/// Correct/total counts per task from one evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskCounts {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

/// `F_t` from the per-task accuracies of phases `1..=t` (`history` holds
/// phases `1..t`).
pub fn phase_forgetting(history: &[PhaseReport], current: &[f64]) -> f64 {
    let t = current.len();
    if t < 2 {
        return 0.0;
    }
    let drops: f64 = (0..t - 1)
        .map(|j| {
            let best = history[j..t - 1]
                .iter()
                .map(|r| r.per_task_accuracy[j])
                .fold(f64::NEG_INFINITY, f64::max);
            best - current[j]
        })
        .sum();
    drops / (t - 1) as f64
}

impl PhaseReport {
    pub fn from_counts(
        phase: usize,
        counts: &TaskCounts,
        history: &[PhaseReport],
        weighting: AccuracyWeighting,
    ) -> Result<Self, MetricsError> {
        if phase == 0 || counts.total.len() != phase || counts.correct.len() != phase {
            return Err(MetricsError::BadPhase { phase, tasks: counts.total.len() });
        }
        if history.len() + 1 != phase {
            return Err(MetricsError::History { phase, expected: phase - 1, got: history.len() });
        }
        let total: usize = counts.total.iter().sum();
        if total == 0 || counts.total.contains(&0) {
            return Err(MetricsError::EmptyTestSet(phase));
        }
        let per_task_accuracy: Vec<f64> =
            counts.correct.iter().zip(&counts.total).map(|(&c, &n)| c as f64 / n as f64).collect();
        let cumulative_accuracy = match weighting {
            AccuracyWeighting::Sample => counts.correct.iter().sum::<usize>() as f64 / total as f64,
            AccuracyWeighting::Task => per_task_accuracy.iter().sum::<f64>() / per_task_accuracy.len() as f64,
        };
        let forgetting = phase_forgetting(history, &per_task_accuracy);
        Ok(Self { phase, per_task_accuracy, cumulative_accuracy, forgetting })
    }
}

/// Classifies every test sample of tasks `1..=phase` with `predict`, which
/// never sees the task identity.
pub fn evaluate_counts(
    model: &FusionModel,
    spec: &StreamSpec,
    tasks: &TaskSequence,
    phase: usize,
) -> Result<TaskCounts, MetricsError> {
    if phase == 0 || phase > tasks.len() {
        return Err(MetricsError::BadPhase { phase, tasks: tasks.len() });
    }
    let mut correct = Vec::with_capacity(phase);
    let mut total = Vec::with_capacity(phase);
    for task in &tasks.tasks[..phase] {
        let hits = crate::par::map(&task.test, |s| -> Result<bool, MetricsError> {
            let streams = spec.extract(&s.image)?;
            Ok(model.predict(&streams)? == s.class_id)
        });
        let mut c = 0;
        for h in hits {
            c += h? as usize;
        }
        correct.push(c);
        total.push(task.test.len());
    }
    Ok(TaskCounts { correct, total })
}

pub fn evaluate_phase(
    model: &FusionModel,
    spec: &StreamSpec,
    tasks: &TaskSequence,
    phase: usize,
    history: &[PhaseReport],
    weighting: AccuracyWeighting,
) -> Result<PhaseReport, MetricsError> {
    let counts = evaluate_counts(model, spec, tasks, phase)?;
    PhaseReport::from_counts(phase, &counts, history, weighting)
}

/// `Ā`: mean of the cumulative accuracies.
pub fn average_accuracy(reports: &[PhaseReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().map(|r| r.cumulative_accuracy).sum::<f64>() / reports.len() as f64
}

/// `F̄`: mean of the per-phase forgetting values.
pub fn average_forgetting(reports: &[PhaseReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().map(|r| r.forgetting).sum::<f64>() / reports.len() as f64
}

pub const REPORT_HEADER: &str = "phase,cumulative_accuracy,forgetting,per_task_accuracies";

/// CSV with one row per phase and a final `summary,<Ā>,<F̄>,` row. Values
/// are fractions with six decimals; per-task accuracies are `;`-joined.
pub fn report_csv(reports: &[PhaseReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let per_task: Vec<String> = r.per_task_accuracy.iter().map(|a| format!("{a:.6}")).collect();
        let _ = writeln!(out, "{},{:.6},{:.6},{}", r.phase, r.cumulative_accuracy, r.forgetting, per_task.join(";"));
    }
    let _ = writeln!(out, "summary,{:.6},{:.6},", average_accuracy(reports), average_forgetting(reports));
    out
}

pub fn write_report(reports: &[PhaseReport], path: &Path) -> Result<(), MetricsError> {
    fs::write(path, report_csv(reports))
        .map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
}

/// Parsed `report.csv`: the phase rows and the summary `(Ā, F̄)`.
pub fn parse_report(text: &str) -> Result<(Vec<PhaseReport>, (f64, f64)), MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, REPORT_HEADER)) => {}
        _ => return Err(MetricsError::Parse { line: 1, msg: "missing header".into() }),
    }
    let mut reports = Vec::new();
    for (i, line) in lines {
        let err = |msg: &str| MetricsError::Parse { line: i + 1, msg: msg.to_string() };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(err("expected 4 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
        if fields[0] == "summary" {
            return Ok((reports, (num(fields[1])?, num(fields[2])?)));
        }
        let per_task_accuracy =
            fields[3].split(';').map(num).collect::<Result<Vec<_>, _>>()?;
        reports.push(PhaseReport {
            phase: fields[0].parse().map_err(|_| err("bad phase"))?,
            cumulative_accuracy: num(fields[1])?,
            forgetting: num(fields[2])?,
            per_task_accuracy,
        });
    }
    Err(MetricsError::Parse { line: 0, msg: "missing summary row".into() })
}
