//! Partitioning a labelled dataset into a class-incremental task sequence.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use thiserror::Error;

use super::{LabeledSample, Split};
use crate::rng::{seeded, tag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("number of tasks must be at least 1")]
    NoTasks,
    #[error("{classes} classes cannot be split uniformly into {tasks} tasks")]
    NotDivisible { classes: usize, tasks: usize },
}

/// One incremental step: its class set and the train/test samples of those
/// classes.
#[derive(Clone, Debug)]
pub struct Task {
    pub classes: Vec<u32>,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

#[derive(Clone, Debug)]
pub struct TaskSequence {
    pub tasks: Vec<Task>,
    /// `None` means classes were taken in ascending id order.
    pub class_order_seed: Option<u64>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Number of classes seen through task `t` (1-based).
    pub fn classes_through(&self, t: usize) -> usize {
        self.tasks[..t].iter().map(|task| task.classes.len()).sum()
    }

    /// Test samples of tasks `1..=t`, task by task.
    pub fn cumulative_test(&self, t: usize) -> impl Iterator<Item = &LabeledSample> {
        self.tasks[..t].iter().flat_map(|task| task.test.iter())
    }
}

/// Shuffles the distinct class ids with `class_order_seed` (or keeps them in
/// ascending order for `None`) and cuts them into `num_tasks` equal
/// contiguous chunks.
pub fn split_tasks(
    samples: &[LabeledSample],
    num_tasks: usize,
    class_order_seed: Option<u64>,
) -> Result<TaskSequence, TaskError> {
    if num_tasks == 0 {
        return Err(TaskError::NoTasks);
    }
    let mut classes: Vec<u32> = samples
        .iter()
        .map(|s| s.class_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() || !classes.len().is_multiple_of(num_tasks) {
        return Err(TaskError::NotDivisible { classes: classes.len(), tasks: num_tasks });
    }
    if let Some(seed) = class_order_seed {
        classes.shuffle(&mut seeded(seed, &[tag::CLASS_ORDER]));
    }
    let per_task = classes.len() / num_tasks;
    let tasks = classes
        .chunks(per_task)
        .map(|chunk| {
            let members: BTreeSet<u32> = chunk.iter().copied().collect();
            let pick = |split| {
                samples
                    .iter()
                    .filter(|s| s.split == split && members.contains(&s.class_id))
                    .cloned()
                    .collect()
            };
            Task { classes: chunk.to_vec(), train: pick(Split::Train), test: pick(Split::Test) }
        })
        .collect();
    Ok(TaskSequence { tasks, class_order_seed })
}
