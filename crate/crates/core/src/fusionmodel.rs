//! The growing multi-stream classifier.
//!
//! A model is a shared trunk (dense layers, each followed by the configured
//! activation) and one classification head per task. What feeds the trunk
//! depends on the fusion mode:
//!
//! - `single`: the rgb stream vector directly.
//! - `early`: every stream passes through its own projection
//!   `σ(W_i·f_i + b_i)`, the projections are concatenated, and the same
//!   projection layers serve every task.
//! - `intermediate`: each task brings a fresh projection group (one layer per
//!   stream). Head `k` sees the trunk applied to the fused vector of
//!   projection group `k`.
//!
//! Logits of all heads are concatenated in task order; position `i` of the
//! concatenation corresponds to class `classes()[i]`.
//!
//! Histogram streams enter their projections multiplied by their bin count,
//! i.e. as densities relative to a uniform histogram (mean 1 per bin), which
//! puts them on the same scale as the `[0, 1]` rgb values. See
//! [`input_gain`].

use std::collections::HashSet;
use std::io::{self, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nncore::{Activation, DenseLayer};
use crate::rng::{seeded, tag};
use crate::streams::{StreamId, StreamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Single,
    Early,
    Intermediate,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Single => "single",
            FusionMode::Early => "early",
            FusionMode::Intermediate => "intermediate",
        }
    }

    fn code(self) -> u32 {
        match self {
            FusionMode::Single => 0,
            FusionMode::Early => 1,
            FusionMode::Intermediate => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        [FusionMode::Single, FusionMode::Early, FusionMode::Intermediate]
            .into_iter()
            .find(|m| m.code() == code)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub streams: Vec<StreamId>,
    pub proj_dim: usize,
    pub trunk_dims: Vec<usize>,
    pub activation: Activation,
    /// Keeps the parameters of heads (and intermediate projection groups)
    /// from earlier tasks fixed while a new task trains.
    pub freeze_old_heads: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Intermediate,
            streams: vec![StreamId::Rgb, StreamId::ColorHist],
            proj_dim: 64,
            trunk_dims: vec![64],
            activation: Activation::Sigmoid,
            freeze_old_heads: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("a task must add at least one class")]
    NoNewClasses,
    #[error("class {0} already has a head")]
    DuplicateClass(u32),
    #[error("expected {expected} streams, got {got}")]
    StreamCount { expected: usize, got: usize },
    #[error("stream {index}: expected {expected:?} of dim {dim}, got {got:?} of dim {got_dim}")]
    StreamMismatch { index: usize, expected: StreamId, dim: usize, got: StreamId, got_dim: usize },
    #[error("scope asks for {requested} heads but the model has {available}")]
    ScopeTooWide { requested: usize, available: usize },
    #[error("model has no heads")]
    NoHeads,
    #[error("no frozen snapshot before the second task")]
    NoSnapshot,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.streams.first() != Some(&StreamId::Rgb) {
            return bad("streams must start with rgb");
        }
        if self.streams.iter().collect::<HashSet<_>>().len() != self.streams.len() {
            return bad("streams must not repeat");
        }
        if self.mode == FusionMode::Single && self.streams.len() != 1 {
            return bad("single mode takes exactly the rgb stream");
        }
        if self.proj_dim < 1 {
            return bad("proj_dim must be >= 1");
        }
        if self.trunk_dims.contains(&0) {
            return bad("trunk_dims entries must be >= 1");
        }
        Ok(())
    }
}

/// Which heads a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadScope {
    All,
    /// Heads `1..=k`.
    UpTo(usize),
}

#[derive(Clone, Debug)]
pub struct FusionModel {
    config: FusionConfig,
    stream_dims: Vec<usize>,
    early: Vec<DenseLayer>,
    task_proj: Vec<Vec<DenseLayer>>,
    trunk: Vec<DenseLayer>,
    heads: Vec<DenseLayer>,
    classes: Vec<u32>,
    frozen: Option<Arc<FusionModel>>,
}

/// Activations of one projection + trunk pass, kept for backward.
#[derive(Clone, Debug, Default)]
struct PathTrace {
    proj_pre: Vec<Vec<f64>>,
    trunk_in: Vec<Vec<f64>>,
    trunk_pre: Vec<Vec<f64>>,
    hidden: Vec<f64>,
}

/// Everything `backward` needs from a training forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    paths: Vec<PathTrace>,
    head_widths: Vec<usize>,
}

impl FusionModel {
    /// Builds the trunk (and, in early mode, the shared projections) from
    /// `seed`. Heads are added by [`grow_for_task`](Self::grow_for_task).
    pub fn new(config: FusionConfig, stream_dims: &[usize], seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if stream_dims.len() != config.streams.len() {
            return Err(ModelError::StreamCount { expected: config.streams.len(), got: stream_dims.len() });
        }
        if stream_dims.contains(&0) {
            return Err(ModelError::InvalidConfig("stream dims must be >= 1".into()));
        }
        let mut rng = seeded(seed, &[tag::INIT]);
        let early = if config.mode == FusionMode::Early {
            stream_dims.iter().map(|&d| DenseLayer::glorot(d, config.proj_dim, &mut rng)).collect()
        } else {
            Vec::new()
        };
        let fused = match config.mode {
            FusionMode::Single => stream_dims[0],
            _ => config.streams.len() * config.proj_dim,
        };
        let mut trunk = Vec::with_capacity(config.trunk_dims.len());
        let mut width = fused;
        for &d in &config.trunk_dims {
            trunk.push(DenseLayer::glorot(width, d, &mut rng));
            width = d;
        }
        Ok(Self {
            config,
            stream_dims: stream_dims.to_vec(),
            early,
            task_proj: Vec::new(),
            trunk,
            heads: Vec::new(),
            classes: Vec::new(),
            frozen: None,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn stream_dims(&self) -> &[usize] {
        &self.stream_dims
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[DenseLayer] {
        &self.heads
    }

    pub fn trunk(&self) -> &[DenseLayer] {
        &self.trunk
    }

    pub fn early_projections(&self) -> &[DenseLayer] {
        &self.early
    }

    pub fn early_projections_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.early
    }

    pub fn projection_groups(&self) -> &[Vec<DenseLayer>] {
        &self.task_proj
    }

    pub fn projection_groups_mut(&mut self) -> &mut [Vec<DenseLayer>] {
        &mut self.task_proj
    }

    /// Total number of projection layers (shared or per task).
    pub fn num_projection_layers(&self) -> usize {
        self.early.len() + self.task_proj.iter().map(Vec::len).sum::<usize>()
    }

    /// Class id of every logit position.
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn logit_width(&self) -> usize {
        self.classes.len()
    }

    pub fn position_of(&self, class_id: u32) -> Option<usize> {
        self.classes.iter().position(|&c| c == class_id)
    }

    pub fn frozen_snapshot(&self) -> Option<&FusionModel> {
        self.frozen.as_deref()
    }

    fn head_input_dim(&self) -> usize {
        match self.config.trunk_dims.last() {
            Some(&d) => d,
            None => match self.config.mode {
                FusionMode::Single => self.stream_dims[0],
                _ => self.config.streams.len() * self.config.proj_dim,
            },
        }
    }

    /// Snapshots the current model for distillation, then appends a head for
    /// `new_classes` and, in intermediate mode, a projection group.
    pub fn grow_for_task(&mut self, new_classes: &[u32], seed: u64) -> Result<(), ModelError> {
        if new_classes.is_empty() {
            return Err(ModelError::NoNewClasses);
        }
        let mut seen: HashSet<u32> = self.classes.iter().copied().collect();
        for &c in new_classes {
            if !seen.insert(c) {
                return Err(ModelError::DuplicateClass(c));
            }
        }
        self.frozen = if self.heads.is_empty() {
            None
        } else {
            let mut snap = self.clone();
            snap.frozen = None;
            snap.zero_grad();
            Some(Arc::new(snap))
        };
        let task = self.heads.len() as u64;
        let mut rng = seeded(seed, &[tag::GROW, task]);
        if self.config.mode == FusionMode::Intermediate {
            let group = self
                .stream_dims
                .iter()
                .map(|&d| DenseLayer::glorot(d, self.config.proj_dim, &mut rng))
                .collect();
            self.task_proj.push(group);
        }
        self.heads.push(DenseLayer::glorot(self.head_input_dim(), new_classes.len(), &mut rng));
        self.classes.extend_from_slice(new_classes);
        Ok(())
    }

    fn check_streams(&self, streams: &[StreamVector]) -> Result<(), ModelError> {
        if streams.len() != self.config.streams.len() {
            return Err(ModelError::StreamCount { expected: self.config.streams.len(), got: streams.len() });
        }
        for (index, (s, (&id, &dim))) in
            streams.iter().zip(self.config.streams.iter().zip(&self.stream_dims)).enumerate()
        {
            if s.id != id || s.dim() != dim {
                return Err(ModelError::StreamMismatch { index, expected: id, dim, got: s.id, got_dim: s.dim() });
            }
        }
        Ok(())
    }

    fn scoped_heads(&self, scope: HeadScope) -> Result<usize, ModelError> {
        let n = match scope {
            HeadScope::All => self.heads.len(),
            HeadScope::UpTo(k) => k,
        };
        if n > self.heads.len() {
            return Err(ModelError::ScopeTooWide { requested: n, available: self.heads.len() });
        }
        if n == 0 {
            return Err(ModelError::NoHeads);
        }
        Ok(n)
    }

    /// Projection layers feeding head `k`, `None` in single mode.
    fn projections_for(&self, k: usize) -> Option<&[DenseLayer]> {
        match self.config.mode {
            FusionMode::Single => None,
            FusionMode::Early => Some(&self.early),
            FusionMode::Intermediate => Some(&self.task_proj[k]),
        }
    }

    fn projection_input<'a>(&self, i: usize, s: &'a StreamVector) -> std::borrow::Cow<'a, [f64]> {
        let gain = input_gain(self.config.streams[i], self.stream_dims[i]);
        if gain == 1.0 {
            std::borrow::Cow::Borrowed(&s.values)
        } else {
            std::borrow::Cow::Owned(s.values.iter().map(|v| v * gain).collect())
        }
    }

    fn run_path(&self, proj: Option<&[DenseLayer]>, streams: &[StreamVector], keep: bool) -> PathTrace {
        let act = self.config.activation;
        let mut trace = PathTrace::default();
        let mut x = match proj {
            None => streams[0].values.clone(),
            Some(layers) => {
                let mut fused = Vec::with_capacity(layers.len() * self.config.proj_dim);
                for (i, (layer, s)) in layers.iter().zip(streams).enumerate() {
                    let mut pre = vec![0.0; layer.out_dim];
                    layer.forward_into(&self.projection_input(i, s), &mut pre);
                    fused.extend(pre.iter().map(|&v| act.apply(v)));
                    if keep {
                        trace.proj_pre.push(pre);
                    }
                }
                fused
            }
        };
        for layer in &self.trunk {
            let mut pre = vec![0.0; layer.out_dim];
            layer.forward_into(&x, &mut pre);
            let out = pre.iter().map(|&v| act.apply(v)).collect();
            if keep {
                trace.trunk_in.push(std::mem::replace(&mut x, out));
                trace.trunk_pre.push(pre);
            } else {
                x = out;
            }
        }
        trace.hidden = x;
        trace
    }

    fn logits_from(&self, paths: &[PathTrace], n: usize) -> Vec<f64> {
        let mut logits = Vec::with_capacity(self.classes.len());
        for k in 0..n {
            let h = &paths[if paths.len() == 1 { 0 } else { k }].hidden;
            let head = &self.heads[k];
            let start = logits.len();
            logits.resize(start + head.out_dim, 0.0);
            head.forward_into(h, &mut logits[start..]);
        }
        logits
    }

    fn paths(&self, streams: &[StreamVector], n: usize, keep: bool) -> Vec<PathTrace> {
        match self.config.mode {
            FusionMode::Intermediate => (0..n).map(|k| self.run_path(self.projections_for(k), streams, keep)).collect(),
            _ => vec![self.run_path(self.projections_for(0), streams, keep)],
        }
    }

    /// Concatenated logits of the heads in `scope`.
    pub fn forward(&self, streams: &[StreamVector], scope: HeadScope) -> Result<Vec<f64>, ModelError> {
        self.check_streams(streams)?;
        let n = self.scoped_heads(scope)?;
        let paths = self.paths(streams, n, false);
        Ok(self.logits_from(&paths, n))
    }

    /// Logits of the snapshot taken at the last grow, i.e. the previous
    /// task's model over its heads.
    pub fn forward_frozen(&self, streams: &[StreamVector]) -> Result<Vec<f64>, ModelError> {
        self.frozen.as_ref().ok_or(ModelError::NoSnapshot)?.forward(streams, HeadScope::All)
    }

    /// Task-agnostic prediction: argmax over every head's logits, first
    /// position wins ties.
    pub fn predict(&self, streams: &[StreamVector]) -> Result<u32, ModelError> {
        let logits = self.forward(streams, HeadScope::All)?;
        Ok(self.classes[argmax(&logits)])
    }

    /// Trunk output on the path of head `k` (0-based); the representation
    /// used for herding.
    pub fn embed(&self, streams: &[StreamVector], k: usize) -> Result<Vec<f64>, ModelError> {
        self.check_streams(streams)?;
        if k >= self.heads.len() {
            return Err(ModelError::ScopeTooWide { requested: k + 1, available: self.heads.len() });
        }
        let proj = match self.config.mode {
            FusionMode::Intermediate => Some(self.task_proj[k].as_slice()),
            _ => self.projections_for(0),
        };
        Ok(self.run_path(proj, streams, false).hidden)
    }

    /// Forward over all heads, keeping what backward needs.
    pub fn forward_train(&self, streams: &[StreamVector]) -> Result<(Vec<f64>, Tape), ModelError> {
        self.check_streams(streams)?;
        let n = self.scoped_heads(HeadScope::All)?;
        let paths = self.paths(streams, n, true);
        let logits = self.logits_from(&paths, n);
        let head_widths = self.heads.iter().map(|h| h.out_dim).collect();
        Ok((logits, Tape { paths, head_widths }))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(&mut self, streams: &[StreamVector], tape: &Tape, dlogits: &[f64]) {
        let act = self.config.activation;
        let intermediate = self.config.mode == FusionMode::Intermediate;
        let head_in = self.head_input_dim();
        let mut dhidden = vec![vec![0.0; head_in]; tape.paths.len()];
        let mut scratch = vec![0.0; head_in];
        let mut offset = 0;
        for (k, &w) in tape.head_widths.iter().enumerate() {
            let p = if intermediate { k } else { 0 };
            self.heads[k].backward_into(&tape.paths[p].hidden, &dlogits[offset..offset + w], Some(&mut scratch));
            for (d, s) in dhidden[p].iter_mut().zip(&scratch) {
                *d += s;
            }
            offset += w;
        }
        for (p, (trace, mut grad)) in tape.paths.iter().zip(dhidden).enumerate() {
            for j in (0..self.trunk.len()).rev() {
                let dpre: Vec<f64> = grad
                    .iter()
                    .zip(&trace.trunk_pre[j])
                    .map(|(&g, &x)| g * act.derivative(x))
                    .collect();
                let mut dx = vec![0.0; self.trunk[j].in_dim];
                self.trunk[j].backward_into(&trace.trunk_in[j], &dpre, Some(&mut dx));
                grad = dx;
            }
            if self.config.mode == FusionMode::Single {
                continue;
            }
            let d = self.config.proj_dim;
            let inputs: Vec<Vec<f64>> =
                streams.iter().enumerate().map(|(i, s)| self.projection_input(i, s).into_owned()).collect();
            let proj = match self.config.mode {
                FusionMode::Single => continue,
                FusionMode::Early => &mut self.early,
                FusionMode::Intermediate => &mut self.task_proj[p],
            };
            for (i, layer) in proj.iter_mut().enumerate() {
                let dpre: Vec<f64> = grad[i * d..(i + 1) * d]
                    .iter()
                    .zip(&trace.proj_pre[i])
                    .map(|(&g, &x)| g * act.derivative(x))
                    .collect();
                layer.backward_into(&inputs[i], &dpre, None);
            }
        }
    }

    /// Every trainable layer in checkpoint order: early projections,
    /// per-task projection groups, trunk, heads.
    pub fn layers(&self) -> Vec<&DenseLayer> {
        self.early
            .iter()
            .chain(self.task_proj.iter().flatten())
            .chain(&self.trunk)
            .chain(&self.heads)
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        self.early
            .iter_mut()
            .chain(self.task_proj.iter_mut().flatten())
            .chain(self.trunk.iter_mut())
            .chain(self.heads.iter_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().into_iter().for_each(DenseLayer::zero_grad);
    }

    pub fn add_grads_from(&mut self, other: &FusionModel) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            a.add_grads_from(b);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        self.layers_mut().into_iter().for_each(|l| l.scale_grads(factor));
    }

    /// Clears gradients of parameters that `freeze_old_heads` keeps fixed.
    pub fn mask_frozen_grads(&mut self) {
        if !self.config.freeze_old_heads || self.heads.len() < 2 {
            return;
        }
        let old = self.heads.len() - 1;
        self.heads[..old].iter_mut().for_each(DenseLayer::zero_grad);
        self.task_proj.iter_mut().take(old).flatten().for_each(DenseLayer::zero_grad);
    }

    /// A copy with zeroed gradients sharing the frozen snapshot.
    pub fn worker_copy(&self) -> Self {
        let mut w = self.clone();
        w.zero_grad();
        w
    }
}

/// Index of the largest value, lowest index on ties.
/// Factor applied to a stream vector before its projection layer: 1 for
/// rgb, the bin count for histograms.
pub fn input_gain(id: StreamId, dim: usize) -> f64 {
    match id {
        StreamId::Rgb => 1.0,
        StreamId::ColorHist | StreamId::EdgeHist => dim as f64,
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// Checkpoint layout (all integers u32 little-endian unless noted):
//
//   b"CILFCKPT"                     8-byte magic
//   version = 1
//   fusion mode (0 single, 1 early, 2 intermediate)
//   activation (0 sigmoid, 1 relu, 2 identity)
//   freeze_old_heads (0 or 1)
//   proj_dim
//   stream count, then per stream: stream code (0 rgb, 1 color_hist, 2 edge_hist), dim
//   trunk layer count, then each trunk width
//   head count, then per head: width, then `width` class ids
//   layer count, then one section per layer in `layers()` order:
//     out_dim, in_dim, u64 payload bytes, weights (row-major f64), bias (f64)
const CHECKPOINT_MAGIC: &[u8; 8] = b"CILFCKPT";
const CHECKPOINT_VERSION: u32 = 1;

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

impl FusionModel {
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put(&mut out, CHECKPOINT_VERSION);
        put(&mut out, self.config.mode.code());
        put(&mut out, self.config.activation.code());
        put(&mut out, self.config.freeze_old_heads as u32);
        put(&mut out, self.config.proj_dim as u32);
        put(&mut out, self.config.streams.len() as u32);
        for (s, &d) in self.config.streams.iter().zip(&self.stream_dims) {
            put(&mut out, s.code());
            put(&mut out, d as u32);
        }
        put(&mut out, self.config.trunk_dims.len() as u32);
        for &d in &self.config.trunk_dims {
            put(&mut out, d as u32);
        }
        put(&mut out, self.heads.len() as u32);
        let mut offset = 0;
        for h in &self.heads {
            put(&mut out, h.out_dim as u32);
            for &c in &self.classes[offset..offset + h.out_dim] {
                put(&mut out, c);
            }
            offset += h.out_dim;
        }
        let layers = self.layers();
        put(&mut out, layers.len() as u32);
        for l in layers {
            l.write_section(&mut out).expect("writing to a Vec cannot fail");
        }
        out
    }

    pub fn write_checkpoint(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.to_checkpoint())
    }

    /// Rebuilds a model from [`to_checkpoint`](Self::to_checkpoint) bytes. The
    /// frozen snapshot is not stored.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let next = |r: &mut &[u8]| -> Result<u32, ModelError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(b))
        };
        if next(&mut r)? != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        let mode = FusionMode::from_code(next(&mut r)?).ok_or_else(|| bad("unknown fusion mode"))?;
        let activation = Activation::from_code(next(&mut r)?).ok_or_else(|| bad("unknown activation"))?;
        let freeze_old_heads = next(&mut r)? != 0;
        let proj_dim = next(&mut r)? as usize;
        let n_streams = next(&mut r)? as usize;
        let mut streams = Vec::with_capacity(n_streams);
        let mut stream_dims = Vec::with_capacity(n_streams);
        for _ in 0..n_streams {
            streams.push(StreamId::from_code(next(&mut r)?).ok_or_else(|| bad("unknown stream"))?);
            stream_dims.push(next(&mut r)? as usize);
        }
        let n_trunk = next(&mut r)? as usize;
        let trunk_dims = (0..n_trunk).map(|_| next(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let config = FusionConfig { mode, streams, proj_dim, trunk_dims, activation, freeze_old_heads };
        let mut model = FusionModel::new(config, &stream_dims, 0)?;
        let n_heads = next(&mut r)? as usize;
        let mut head_classes = Vec::with_capacity(n_heads);
        for _ in 0..n_heads {
            let w = next(&mut r)? as usize;
            head_classes.push((0..w).map(|_| next(&mut r)).collect::<Result<Vec<_>, _>>()?);
        }
        for classes in &head_classes {
            model.grow_for_task(classes, 0)?;
        }
        model.frozen = None;
        let n_layers = next(&mut r)? as usize;
        let mut slots = model.layers_mut();
        if n_layers != slots.len() {
            return Err(bad("layer count does not match topology"));
        }
        for slot in slots.iter_mut() {
            let layer = DenseLayer::read_section(&mut r).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            if layer.in_dim != slot.in_dim || layer.out_dim != slot.out_dim {
                return Err(bad("layer shape does not match topology"));
            }
            **slot = layer;
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(model)
    }
}
