//! Multi-stream class-incremental learning with color-histogram guidance.
//!
//! The crate is organised bottom-up:
//!
//! - [`imgio`]: RGB rasters, binary PPM I/O, the synthetic pill generator and
//!   the task partitioning of a dataset into disjoint class sets.
//! - [`streams`]: the information streams fed to the model (raw RGB thumbnail,
//!   512-bin joint color histogram, 64-bin Sobel edge histogram).
//! - [`nncore`]: dense layers, activations, temperature softmax and SGD with a
//!   plateau learning-rate schedule.
//! - [`losses`]: cross-entropy, distillation and the combined objective.
//! - [`fusionmodel`]: the growing classifier with single, early and
//!   intermediate fusion.
//! - [`memory`]: the per-class exemplar store.
//! - [`trainer`]: the per-phase incremental training loop.
//! - [`metrics`]: task-agnostic evaluation, average accuracy and forgetting.
//! - [`experiment`]: run configuration, run directories and the ablation grid
//!   behind the `cilfuse` binary.
//!
//! Data-parallel loops (stream extraction, per-chunk gradients, evaluation,
//! ablation variants) go through [`par`], which uses rayon when the default
//! `parallel` feature is enabled and plain iterators otherwise. Both paths
//! produce bit-identical results.

pub mod experiment;
pub mod fusionmodel;
pub mod imgio;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod nncore;
pub mod par;
pub mod rng;
pub mod streams;
pub mod trainer;

pub use fusionmodel::{FusionConfig, FusionMode, FusionModel, HeadScope};
pub use imgio::{Image, LabeledSample, Split, TaskSequence};
pub use streams::{StreamId, StreamVector};
