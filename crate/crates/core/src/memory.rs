//! Representative memory: a fixed number of exemplars per old class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgio::{LabeledSample, Split};
use crate::rng::{seeded, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    Random,
    /// Closest to the class feature mean first.
    Herding,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("herding selection needs one feature vector per sample")]
    MissingFeatures,
    #[error("class {0} is already in the exemplar store")]
    DuplicateClass(u32),
    #[error("sample {0} is not a training sample")]
    NotTraining(usize),
}

/// Picks up to `budget` of `count` samples and returns their indices.
///
/// Random selection returns the sampled indices in ascending order; herding
/// returns indices by increasing Euclidean distance to the feature mean,
/// lower index first on ties. When `budget >= count` everything is kept.
pub fn select_exemplars(
    count: usize,
    features: Option<&[Vec<f64>]>,
    policy: SelectionPolicy,
    budget: usize,
    seed: u64,
) -> Result<Vec<usize>, MemoryError> {
    match policy {
        SelectionPolicy::Random => {
            if budget >= count {
                return Ok((0..count).collect());
            }
            let mut picked = index::sample(&mut seeded(seed, &[]), count, budget).into_vec();
            picked.sort_unstable();
            Ok(picked)
        }
        SelectionPolicy::Herding => {
            let features = features.filter(|f| f.len() == count).ok_or(MemoryError::MissingFeatures)?;
            if count == 0 {
                return Ok(Vec::new());
            }
            let dim = features[0].len();
            let mut mean = vec![0.0; dim];
            for f in features {
                for (m, v) in mean.iter_mut().zip(f) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut ranked: Vec<(f64, usize)> = features
                .iter()
                .enumerate()
                .map(|(i, f)| (f.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            Ok(ranked.into_iter().take(budget).map(|(_, i)| i).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarStore {
    per_class_budget: usize,
    policy: SelectionPolicy,
    entries: BTreeMap<u32, Vec<LabeledSample>>,
}

impl ExemplarStore {
    pub fn new(per_class_budget: usize, policy: SelectionPolicy) -> Self {
        Self { per_class_budget, policy, entries: BTreeMap::new() }
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy
    }

    pub fn per_class_budget(&self) -> usize {
        self.per_class_budget
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn exemplars(&self, class_id: u32) -> Option<&[LabeledSample]> {
        self.entries.get(&class_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledSample> {
        self.entries.values().flatten()
    }

    /// Adds exemplars for every class in `task_train`. `features`, when
    /// given, is aligned with `task_train`. Existing classes are untouched.
    pub fn update(
        &mut self,
        task_train: &[LabeledSample],
        features: Option<&[Vec<f64>]>,
        seed: u64,
    ) -> Result<(), MemoryError> {
        if let Some(f) = features {
            if f.len() != task_train.len() {
                return Err(MemoryError::MissingFeatures);
            }
        }
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in task_train.iter().enumerate() {
            if s.split != Split::Train {
                return Err(MemoryError::NotTraining(s.id));
            }
            by_class.entry(s.class_id).or_default().push(i);
        }
        if let Some(&c) = by_class.keys().find(|c| self.entries.contains_key(c)) {
            return Err(MemoryError::DuplicateClass(c));
        }
        let mut additions = Vec::with_capacity(by_class.len());
        for (class, members) in by_class {
            let class_features: Option<Vec<Vec<f64>>> =
                features.map(|f| members.iter().map(|&i| f[i].clone()).collect());
            let picked = select_exemplars(
                members.len(),
                class_features.as_deref(),
                self.policy,
                self.per_class_budget,
                crate::rng::derive_seed(seed, &[tag::EXEMPLAR, class as u64]),
            )?;
            additions.push((class, picked.into_iter().map(|j| task_train[members[j]].clone()).collect()));
        }
        self.entries.extend(additions);
        Ok(())
    }

    /// Exemplars (class by class) followed by the current task's samples.
    pub fn build_training_set(&self, current: &[LabeledSample]) -> Vec<LabeledSample> {
        self.iter().chain(current).cloned().collect()
    }

    /// `class_id,sample_index` rows, one per stored exemplar.
    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("class_id,sample_index\n");
        for (class, samples) in &self.entries {
            for s in samples {
                let _ = writeln!(out, "{class},{}", s.id);
            }
        }
        out
    }
}
