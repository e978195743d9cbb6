//! Dense layers, elementwise activations, temperature softmax and plain SGD
//! with a plateau learning-rate schedule. Everything is `f64`.

use std::io::{self, Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("softmax of an empty vector")]
    EmptyInput,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(&'static str),
}

fn check_len(expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::DimensionMismatch { expected, got })
    }
}

/// Affine map `W·x + b` with gradient accumulators. `weights` is row-major
/// `out_dim × in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            grad_weights: vec![0.0; in_dim * out_dim],
            grad_bias: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, NnError> {
        check_len(in_dim * out_dim, weights.len())?;
        check_len(out_dim, bias.len())?;
        let mut layer = Self::zeros(in_dim, out_dim);
        layer.weights = weights;
        layer.bias = bias;
        Ok(layer)
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..=bound);
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(self.in_dim, x.len())?;
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked forward for the hot path; panics on shape mismatch.
    #[inline]
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim)).zip(&self.bias) {
            *o = b + dot(row, x);
        }
    }

    /// Accumulates `upstream ⊗ x` into the weight gradient and `upstream`
    /// into the bias gradient; returns `Wᵀ·upstream`.
    pub fn backward(&mut self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(self.in_dim, x.len())?;
        check_len(self.out_dim, upstream.len())?;
        let mut dx = vec![0.0; self.in_dim];
        self.backward_into(x, upstream, Some(&mut dx));
        Ok(dx)
    }

    /// Unchecked backward. When `dx` is given it is overwritten with
    /// `Wᵀ·upstream`.
    pub fn backward_into(&mut self, x: &[f64], upstream: &[f64], dx: Option<&mut [f64]>) {
        let in_dim = self.in_dim;
        for (o, &g) in upstream.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.grad_bias[o] += g;
            for (gw, xi) in self.grad_weights[o * in_dim..(o + 1) * in_dim].iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (o, &g) in upstream.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (d, w) in dx.iter_mut().zip(&self.weights[o * in_dim..(o + 1) * in_dim]) {
                    *d += g * w;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    /// Adds another layer's accumulated gradients into this one.
    pub fn add_grads_from(&mut self, other: &DenseLayer) {
        for (a, b) in self.grad_weights.iter_mut().zip(&other.grad_weights) {
            *a += b;
        }
        for (a, b) in self.grad_bias.iter_mut().zip(&other.grad_bias) {
            *a += b;
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        self.grad_weights.iter_mut().chain(self.grad_bias.iter_mut()).for_each(|g| *g *= factor);
    }

    fn grads_finite(&self) -> bool {
        self.grad_weights.iter().chain(&self.grad_bias).all(|g| g.is_finite())
    }

    /// Serialized section: `u32 out, u32 in, u64 payload bytes`, then the
    /// weights row-major and the bias, all little-endian f64.
    pub fn write_section(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&(self.out_dim as u32).to_le_bytes())?;
        w.write_all(&(self.in_dim as u32).to_le_bytes())?;
        w.write_all(&((self.param_count() * 8) as u64).to_le_bytes())?;
        for v in self.weights.iter().chain(&self.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_section(r: &mut impl Read) -> io::Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let out_dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let in_dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let bytes = u64::from_le_bytes(b8) as usize;
        if bytes != (in_dim * out_dim + out_dim) * 8 {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "layer section length does not match its shape"));
        }
        let mut floats = Vec::with_capacity(bytes / 8);
        for _ in 0..bytes / 8 {
            r.read_exact(&mut b8)?;
            floats.push(f64::from_le_bytes(b8));
        }
        let bias = floats.split_off(in_dim * out_dim);
        Ok(Self::from_parts(in_dim, out_dim, floats, bias).expect("lengths checked"))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable; order is fixed
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn forward(self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(v)).collect()
    }

    /// `upstream ⊙ f'(pre)`.
    pub fn backward(self, pre: &[f64], upstream: &[f64]) -> Vec<f64> {
        pre.iter().zip(upstream).map(|(&x, &g)| g * self.derivative(x)).collect()
    }
}

/// `exp(o_k / T) / Σ_j exp(o_j / T)`, max-shifted.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<Vec<f64>, NnError> {
    if logits.is_empty() {
        return Err(NnError::EmptyInput);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&o| ((o - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// `log Σ_j exp(o_j / T)`, max-shifted.
pub fn log_sum_exp_t(logits: &[f64], temperature: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&o| ((o - max) / temperature).exp()).sum();
    max / temperature + sum.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, decay_factor: 1.5, patience: 5, batch_size: 32 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be > 0"));
        }
        if !(self.decay_factor > 1.0 && self.decay_factor.is_finite()) {
            return Err(NnError::InvalidConfig("decay_factor must be > 1"));
        }
        if self.patience < 1 {
            return Err(NnError::InvalidConfig("patience must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(NnError::InvalidConfig("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// `p ← p − lr·grad` for every layer, then zeroes the gradients. Gradients
/// are expected to be batch means already. Nothing is updated if any
/// gradient is non-finite.
pub fn sgd_step(layers: &mut [&mut DenseLayer], learning_rate: f64) -> Result<(), NnError> {
    if let Some(layer) = layers.iter().position(|l| !l.grads_finite()) {
        return Err(NnError::NonFiniteGradient { layer });
    }
    for layer in layers.iter_mut() {
        for (w, g) in layer.weights.iter_mut().zip(&layer.grad_weights) {
            *w -= learning_rate * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&layer.grad_bias) {
            *b -= learning_rate * g;
        }
        layer.zero_grad();
    }
    Ok(())
}

/// Minimum decrease that counts as an improvement.
pub const PLATEAU_EPSILON: f64 = 1e-8;

/// Divides the learning rate by `decay_factor` once the epoch loss has
/// failed to improve for `patience` consecutive epochs. The counter resets
/// on improvement and after each decay; the best-loss watermark persists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlateauTracker {
    best: Option<f64>,
    stale_epochs: usize,
}

impl PlateauTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Feeds one epoch's mean loss; returns the learning rate to use next.
    pub fn update(&mut self, epoch_loss: f64, learning_rate: f64, cfg: &SgdConfig) -> f64 {
        match self.best {
            Some(best) if epoch_loss > best - PLATEAU_EPSILON => {
                self.stale_epochs += 1;
                if self.stale_epochs >= cfg.patience {
                    self.stale_epochs = 0;
                    return learning_rate / cfg.decay_factor;
                }
            }
            _ => {
                self.best = Some(epoch_loss);
                self.stale_epochs = 0;
            }
        }
        learning_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random_layer(seed: u64, in_dim: usize, out_dim: usize) -> DenseLayer {
        let mut rng = seeded(seed, &[]);
        let mut l = DenseLayer::glorot(in_dim, out_dim, &mut rng);
        for b in &mut l.bias {
            *b = rng.gen_range(-1.0..1.0);
        }
        l
    }

    #[test]
    fn dense_forward_examples() {
        let id = DenseLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(id.forward(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        let l = DenseLayer::from_parts(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(l.forward(&[1.0, 1.0]).unwrap(), vec![4.0, 8.0]);
        assert_eq!(l.forward(&[1.0]), Err(NnError::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn dense_forward_matches_naive_oracle() {
        let l = random_layer(3, 7, 5);
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = l.forward(&x).unwrap();
        for o in 0..5 {
            let mut naive = l.bias[o];
            for i in 0..7 {
                naive += l.weights[o * 7 + i] * x[i];
            }
            assert!((y[o] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_backward_examples() {
        let mut l = random_layer(1, 3, 2);
        assert_eq!(l.backward(&[1.0, 2.0, 3.0], &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert!(l.grad_weights.iter().chain(&l.grad_bias).all(|&g| g == 0.0));

        let mut s = DenseLayer::from_parts(1, 1, vec![2.0], vec![0.0]).unwrap();
        assert_eq!(s.backward(&[3.0], &[1.0]).unwrap(), vec![2.0]);
        assert_eq!((s.grad_weights[0], s.grad_bias[0]), (3.0, 1.0));
        assert!(s.backward(&[3.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        // scalar loss = Σ c_o · y_o  with fixed random c
        for seed in 0..20 {
            let mut l = random_layer(seed, 6, 4);
            let x: Vec<f64> = (0..6).map(|i| ((seed + i) as f64 * 0.71).cos()).collect();
            let c: Vec<f64> = (0..4).map(|i| ((seed * 3 + i) as f64 * 1.3).sin()).collect();
            let loss = |l: &DenseLayer, x: &[f64]| dot(&l.forward(x).unwrap(), &c);
            let dx = l.backward(&x, &c).unwrap();
            let h = 1e-6;
            let rel = |a: f64, n: f64| (a - n).abs() / (n.abs() + 1e-8);
            for i in 0..l.weights.len() {
                let mut p = l.clone();
                p.weights[i] += h;
                let mut m = l.clone();
                m.weights[i] -= h;
                let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!(rel(l.grad_weights[i], num) < 1e-5);
            }
            for o in 0..4 {
                let mut p = l.clone();
                p.bias[o] += h;
                let mut m = l.clone();
                m.bias[o] -= h;
                let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!(rel(l.grad_bias[o], num) < 1e-5);
            }
            for i in 0..6 {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let num = (loss(&l, &xp) - loss(&l, &xm)) / (2.0 * h);
                assert!(rel(dx[i], num) < 1e-5);
            }
        }
    }

    #[test]
    fn activation_examples() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.forward(&[-2.0, 3.0]), vec![0.0, 3.0]);
        assert_eq!(Activation::Identity.backward(&[5.0], &[2.0]), vec![2.0]);
        assert_eq!(Activation::Relu.backward(&[-1.0, 1.0], &[3.0, 3.0]), vec![0.0, 3.0]);
    }

    #[test]
    fn sigmoid_gradient_matches_finite_differences() {
        let h = 1e-6;
        for i in 0..50 {
            let x = (i as f64 * 0.613).sin() * 4.0;
            let num = (Activation::Sigmoid.apply(x + h) - Activation::Sigmoid.apply(x - h)) / (2.0 * h);
            assert!((Activation::Sigmoid.derivative(x) - num).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_examples() {
        for p in softmax_t(&[4.2, 4.2, 4.2], 0.7).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_t(&[2.0, 0.0], 2.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.73106).abs() < 1e-5 && (p[1] - 0.26894).abs() < 1e-5);
        let base = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 100.0).collect();
        for (a, b) in softmax_t(&base, 1.0).unwrap().iter().zip(softmax_t(&shifted, 1.0).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(softmax_t(&[], 1.0), Err(NnError::EmptyInput));
    }

    #[test]
    fn softmax_high_temperature_is_uniform() {
        let logits: Vec<f64> = (0..9).map(|i| (i as f64 * 0.9).sin()).collect();
        let p = softmax_t(&logits, 1e6).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-3));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sgd_examples() {
        let mut l = DenseLayer::from_parts(1, 1, vec![1.0], vec![0.0]).unwrap();
        sgd_step(&mut [&mut l], 0.1).unwrap();
        assert_eq!(l.weights, vec![1.0]);
        l.grad_weights[0] = 0.5;
        sgd_step(&mut [&mut l], 0.1).unwrap();
        assert_eq!(l.weights, vec![0.95]);
        assert_eq!(l.grad_weights, vec![0.0]);
        l.grad_bias[0] = f64::NAN;
        assert_eq!(sgd_step(&mut [&mut l], 0.1), Err(NnError::NonFiniteGradient { layer: 0 }));
        assert_eq!(l.weights, vec![0.95]);
    }

    #[test]
    fn sgd_is_deterministic() {
        let run = || {
            let mut l = random_layer(9, 4, 3);
            for k in 0..5 {
                let x: Vec<f64> = (0..4).map(|i| (i + k) as f64 * 0.1).collect();
                l.backward(&x, &[1.0, -0.5, 0.25]).unwrap();
                sgd_step(&mut [&mut l], 0.1).unwrap();
            }
            l
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn glorot_is_reproducible_and_bounded() {
        let a = DenseLayer::glorot(10, 6, &mut seeded(5, &[]));
        let b = DenseLayer::glorot(10, 6, &mut seeded(5, &[]));
        assert_eq!(a, b);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.weights.iter().all(|w| w.abs() <= bound));
        assert!(a.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plateau_keeps_lr_while_improving() {
        let cfg = SgdConfig::default();
        let mut t = PlateauTracker::new();
        let mut lr = 0.1;
        for loss in [3.0, 2.9, 2.8] {
            lr = t.update(loss, lr, &cfg);
        }
        assert_eq!(lr, 0.1);
    }

    #[test]
    fn plateau_decays_after_patience() {
        let cfg = SgdConfig::default();
        let mut t = PlateauTracker::new();
        let mut lr = t.update(1.0, 0.1, &cfg);
        for _ in 0..4 {
            lr = t.update(1.0, lr, &cfg);
            assert_eq!(lr, 0.1);
        }
        lr = t.update(1.0, lr, &cfg);
        assert!((lr - 0.1 / 1.5).abs() < 1e-15);
        assert!((lr - 0.066_666_666_666).abs() < 1e-11);
    }

    #[test]
    fn plateau_trace_with_patience_two() {
        let cfg = SgdConfig { patience: 2, ..SgdConfig::default() };
        let mut t = PlateauTracker::new();
        let mut lrs = Vec::new();
        let mut lr = 0.1;
        for _ in 0..5 {
            lr = t.update(2.0, lr, &cfg);
            lrs.push(lr);
        }
        // epoch 1 sets the watermark, epoch 3 triggers the first decay,
        // the counter restarts and epoch 5 triggers the second
        assert_eq!(lrs[0], 0.1);
        assert_eq!(lrs[1], 0.1);
        assert!((lrs[2] - 0.1 / 1.5).abs() < 1e-15);
        assert_eq!(lrs[3], lrs[2]);
        assert!((lrs[4] - 0.1 / 2.25).abs() < 1e-15);
    }

    #[test]
    fn sgd_config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig { decay_factor: 1.0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn layer_section_round_trip() {
        let l = random_layer(4, 3, 2);
        let mut buf = Vec::new();
        l.write_section(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 8);
        let back = DenseLayer::read_section(&mut buf.as_slice()).unwrap();
        assert_eq!(back.weights, l.weights);
        assert_eq!(back.bias, l.bias);
    }
}
