//! Reference AttackNet training: forward propagation, error-only
//! back-propagation, input gradients and perturbation-mask updates.
//!
//! Weights are frozen for the whole run. Tensors are `h x w x c` row-major,
//! and each layer's weights form a `[kh*kw*cin, cout]` matrix whose rows
//! follow the im2col patch order.

mod quantized;

pub use quantized::{QuantizedNet, QuantizedPass};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crossbar::{max_pool4, CrossbarError};
use crate::lowering::{col2im, im2col};
use crate::netspec::{LayerSpec, NetworkSpec, PoolKind};
use crate::tensor::{Dims3, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("{what}: expected {expected} values, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("attack.iterations must be >= 1")]
    ZeroIterations,
    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Crossbar(#[from] CrossbarError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub target_label: usize,
    /// Weight of the squared perturbation norm in the loss.
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target_label: 0,
            lambda: 0.0,
            learning_rate: 0.01,
            iterations: 1,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, classes: usize) -> Result<(), String> {
        if self.target_label >= classes {
            return Err(format!(
                "target_label {} out of range for {classes} classes",
                self.target_label
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be finite and > 0, got {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Frozen per-layer weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    layers: Vec<Vec<f64>>,
}

impl WeightSet {
    pub fn new(net: &NetworkSpec, layers: Vec<Vec<f64>>) -> Result<Self, AttackError> {
        if layers.len() != net.depth() {
            return Err(AttackError::ShapeMismatch {
                what: "weight layers",
                expected: net.depth(),
                found: layers.len(),
            });
        }
        for (spec, w) in net.layers.iter().zip(&layers) {
            if w.len() != spec.weight_count() {
                return Err(AttackError::ShapeMismatch {
                    what: "layer weights",
                    expected: spec.weight_count(),
                    found: w.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Uniform He-style initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn random(net: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = net
            .layers
            .iter()
            .map(|l| {
                let bound = (6.0 / l.weight_rows() as f64).sqrt();
                (0..l.weight_count()).map(|_| rng.gen_range(-bound..bound)).collect()
            })
            .collect();
        Self { layers }
    }

    /// One tensor per layer, shaped `[kh, kw, cin, cout]`.
    pub fn from_tensors(net: &NetworkSpec, tensors: Vec<Tensor>) -> Result<Self, AttackError> {
        Self::new(net, tensors.into_iter().map(|t| t.data).collect())
    }

    pub fn to_tensors(&self, net: &NetworkSpec) -> Vec<Tensor> {
        net.layers
            .iter()
            .zip(&self.layers)
            .map(|(l, w)| Tensor::new(vec![l.kernel.0, l.kernel.1, l.input.c, l.out_channels], w.clone()))
            .collect()
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.layers[index]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// SHA-256 over the little-endian bytes of every weight.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for w in self.layers.iter().flatten() {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Perturbation image added to every clean input.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub dims: Dims3,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn zeros(dims: Dims3) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.count()],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `clean + mask`.
    pub fn apply(&self, clean: &[f64]) -> Vec<f64> {
        clean.iter().zip(&self.data).map(|(x, m)| x + m).collect()
    }
}

/// Fixed-size bit vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    len: usize,
    words: Vec<u64>,
}

impl Bitmap {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Storage footprint in bytes.
    pub fn bytes(&self) -> usize {
        self.len.div_ceil(8)
    }
}

/// What forward propagation keeps for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Layer output after ReLU and pooling.
    pub output: Vec<f64>,
    /// Bit set iff the pre-activation was positive (ReLU layers only).
    pub relu_bitmap: Option<Bitmap>,
    /// Winning window position 0..=3 per pooled output (max pooling only).
    pub pool_indices: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub input: Vec<f64>,
    pub layers: Vec<LayerTrace>,
}

impl ForwardState {
    pub fn logits(&self) -> &[f64] {
        &self.layers.last().expect("network has layers").output
    }

    pub fn predicted(&self) -> usize {
        argmax(self.logits())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), AttackError> {
    if expected == found {
        Ok(())
    } else {
        Err(AttackError::ShapeMismatch { what, expected, found })
    }
}

/// Lowered convolution: `[oh*ow, kh*kw*cin] x [kh*kw*cin, cout]`.
fn conv_matmul(layer: &LayerSpec, w: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = im2col(x, layer.input, layer.kernel.0, layer.kernel.1, layer.stride);
    let k = layer.weight_rows();
    let cout = layer.out_channels;
    let mut out = vec![0.0; cols.len() / k * cout];
    for (patch, y) in cols.chunks_exact(k).zip(out.chunks_exact_mut(cout)) {
        for (xi, wrow) in patch.iter().zip(w.chunks_exact(cout)) {
            if *xi != 0.0 {
                for (yo, wo) in y.iter_mut().zip(wrow) {
                    *yo += xi * wo;
                }
            }
        }
    }
    out
}

/// Applies ReLU and pooling to a pre-activation map, producing the trace.
pub(crate) fn activate(layer: &LayerSpec, pre: Vec<f64>) -> LayerTrace {
    let mut act = pre;
    let relu_bitmap = layer.relu.then(|| {
        let mut bits = Bitmap::new(act.len());
        for (i, v) in act.iter_mut().enumerate() {
            if *v > 0.0 {
                bits.set(i);
            } else {
                *v = 0.0;
            }
        }
        bits
    });
    let (output, pool_indices) = match layer.pool {
        None => (act, None),
        Some(kind) => {
            let full = layer.conv_output();
            let pooled = layer.output();
            let mut out = vec![0.0; pooled.count()];
            let mut idx = vec![0u8; pooled.count()];
            for py in 0..pooled.h {
                for px in 0..pooled.w {
                    for ch in 0..pooled.c {
                        let at = |dy, dx| act[full.index(2 * py + dy, 2 * px + dx, ch)];
                        let (a, b, c, d) = (at(0, 0), at(0, 1), at(1, 0), at(1, 1));
                        let o = pooled.index(py, px, ch);
                        match kind {
                            PoolKind::Max => (out[o], idx[o]) = max_pool4(a, b, c, d),
                            PoolKind::Avg => out[o] = (a + b + c + d) / 4.0,
                        }
                    }
                }
            }
            (out, (kind == PoolKind::Max).then_some(idx))
        }
    };
    LayerTrace {
        output,
        relu_bitmap,
        pool_indices,
    }
}

fn check_weights(net: &NetworkSpec, weights: &WeightSet) -> Result<(), AttackError> {
    check_len("weight layers", net.depth(), weights.depth())?;
    for (i, l) in net.layers.iter().enumerate() {
        check_len("layer weights", l.weight_count(), weights.layer(i).len())?;
    }
    Ok(())
}

pub fn forward(net: &NetworkSpec, weights: &WeightSet, input: &[f64]) -> Result<ForwardState, AttackError> {
    check_len("input", net.input.count(), input.len())?;
    check_weights(net, weights)?;
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(net.depth());
    for (i, layer) in net.layers.iter().enumerate() {
        let x = layers.last().map_or(input, |t| &t.output[..]);
        let pre = conv_matmul(layer, weights.layer(i), x);
        layers.push(activate(layer, pre));
    }
    Ok(ForwardState {
        input: input.to_vec(),
        layers,
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[target]`, computed via log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

pub fn loss(logits: &[f64], attack: &AttackConfig, mask: &Mask) -> f64 {
    cross_entropy(logits, attack.target_label) + attack.lambda * mask.norm_sq()
}

/// `softmax(logits) - onehot(target)`.
pub fn error_init(logits: &[f64], attack: &AttackConfig) -> Vec<f64> {
    let mut d = softmax(logits);
    d[attack.target_label] -= 1.0;
    d
}

/// Routes an output error back through pooling and the ReLU bitmap,
/// giving the error on the pre-activation map.
pub(crate) fn route_error(layer: &LayerSpec, delta: &[f64], trace: &LayerTrace) -> Vec<f64> {
    let full = layer.conv_output();
    let mut g = match layer.pool {
        None => delta.to_vec(),
        Some(kind) => {
            let pooled = layer.output();
            let mut g = vec![0.0; full.count()];
            for py in 0..pooled.h {
                for px in 0..pooled.w {
                    for ch in 0..pooled.c {
                        let o = pooled.index(py, px, ch);
                        match kind {
                            PoolKind::Max => {
                                let k = trace.pool_indices.as_ref().expect("max pool records indices")[o] as usize;
                                g[full.index(2 * py + k / 2, 2 * px + k % 2, ch)] += delta[o];
                            }
                            PoolKind::Avg => {
                                for k in 0..4 {
                                    g[full.index(2 * py + k / 2, 2 * px + k % 2, ch)] += delta[o] / 4.0;
                                }
                            }
                        }
                    }
                }
            }
            g
        }
    };
    if let Some(bits) = &trace.relu_bitmap {
        for (i, v) in g.iter_mut().enumerate() {
            if !bits.get(i) {
                *v = 0.0;
            }
        }
    }
    g
}

/// Transposed-weight convolution of a pre-activation error back onto the
/// layer input.
fn transpose_conv(layer: &LayerSpec, w: &[f64], g: &[f64]) -> Vec<f64> {
    let k = layer.weight_rows();
    let cout = layer.out_channels;
    let mut cols = vec![0.0; g.len() / cout * k];
    for (gp, cp) in g.chunks_exact(cout).zip(cols.chunks_exact_mut(k)) {
        for (c, wrow) in cp.iter_mut().zip(w.chunks_exact(cout)) {
            *c = gp.iter().zip(wrow).map(|(a, b)| a * b).sum();
        }
    }
    col2im(&cols, layer.input, layer.kernel.0, layer.kernel.1, layer.stride)
}

/// One EP step: `delta^l` (error on the layer output) to `delta^{l-1}`.
pub fn backprop_error(layer: &LayerSpec, w: &[f64], delta: &[f64], trace: &LayerTrace) -> Result<Vec<f64>, AttackError> {
    check_len("layer error", layer.output_count(), delta.len())?;
    check_len("layer weights", layer.weight_count(), w.len())?;
    Ok(transpose_conv(layer, w, &route_error(layer, delta, trace)))
}

/// Full EP from the output error. Returns the chain `[delta^0, ..., delta^L]`.
pub fn backprop(
    net: &NetworkSpec,
    weights: &WeightSet,
    state: &ForwardState,
    delta_out: &[f64],
) -> Result<Vec<Vec<f64>>, AttackError> {
    let mut chain = vec![delta_out.to_vec()];
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let d = backprop_error(layer, weights.layer(i), chain.last().unwrap(), &state.layers[i])?;
        chain.push(d);
    }
    chain.reverse();
    Ok(chain)
}

/// `delta^0 + 2 * lambda * mask`.
pub fn input_gradient(delta0: &[f64], attack: &AttackConfig, mask: &Mask) -> Result<Vec<f64>, AttackError> {
    check_len("input error", mask.data.len(), delta0.len())?;
    Ok(delta0
        .iter()
        .zip(&mask.data)
        .map(|(d, m)| d + 2.0 * attack.lambda * m)
        .collect())
}

/// `mask - eta * grad`.
pub fn update_mask(mask: &Mask, grad: &[f64], eta: f64) -> Result<Mask, AttackError> {
    check_len("gradient", mask.data.len(), grad.len())?;
    Ok(Mask {
        dims: mask.dims,
        data: mask.data.iter().zip(grad).map(|(m, g)| m - eta * g).collect(),
    })
}

/// Loss and mask gradient for a single clean image.
pub fn mask_gradient(
    net: &NetworkSpec,
    weights: &WeightSet,
    clean: &[f64],
    attack: &AttackConfig,
    mask: &Mask,
) -> Result<(f64, Vec<f64>), AttackError> {
    check_len("mask", net.input.count(), mask.data.len())?;
    let state = forward(net, weights, &mask.apply(clean))?;
    let chain = backprop(net, weights, &state, &error_init(state.logits(), attack))?;
    Ok((loss(state.logits(), attack, mask), input_gradient(&chain[0], attack, mask)?))
}

/// How a training run evaluates FP and EP.
pub(crate) trait Datapath {
    fn net(&self) -> &NetworkSpec;
    fn forward(&self, input: &[f64]) -> Result<ForwardState, AttackError>;
    /// Returns `delta^0`.
    fn backprop(&self, state: &ForwardState, delta_out: &[f64]) -> Result<Vec<f64>, AttackError>;
}

struct FloatPath<'a> {
    net: &'a NetworkSpec,
    weights: &'a WeightSet,
}

impl Datapath for FloatPath<'_> {
    fn net(&self) -> &NetworkSpec {
        self.net
    }

    fn forward(&self, input: &[f64]) -> Result<ForwardState, AttackError> {
        forward(self.net, self.weights, input)
    }

    fn backprop(&self, state: &ForwardState, delta_out: &[f64]) -> Result<Vec<f64>, AttackError> {
        Ok(backprop(self.net, self.weights, state, delta_out)?.swap_remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Batch-mean loss at the mask used in this iteration.
    pub loss: f64,
    /// Every image in the batch is classified as the target.
    pub misclassified: bool,
    pub misclassified_rate: f64,
    pub mask_norm: f64,
    #[serde(skip)]
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
    #[serde(skip)]
    pub final_mask: Mask,
}

impl TrainLog {
    /// First iteration (1-based) at which the whole batch hit the target.
    pub fn first_success(&self) -> Option<usize> {
        self.records.iter().find(|r| r.misclassified).map(|r| r.iteration)
    }
}

pub(crate) fn run_training(
    path: &dyn Datapath,
    clean_inputs: &[Vec<f64>],
    attack: &AttackConfig,
) -> Result<TrainLog, AttackError> {
    let net = path.net();
    if attack.iterations == 0 {
        return Err(AttackError::ZeroIterations);
    }
    attack.validate(net.classes()).map_err(AttackError::InvalidConfig)?;
    if clean_inputs.is_empty() {
        return Err(AttackError::EmptyBatch);
    }
    for x in clean_inputs {
        check_len("clean input", net.input.count(), x.len())?;
    }
    let n = clean_inputs.len() as f64;
    let mut mask = Mask::zeros(net.input);
    let mut records = Vec::with_capacity(attack.iterations);
    for iteration in 1..=attack.iterations {
        let mut ce = 0.0;
        let mut hits = 0usize;
        let mut delta0 = vec![0.0; mask.data.len()];
        for clean in clean_inputs {
            let state = path.forward(&mask.apply(clean))?;
            ce += cross_entropy(state.logits(), attack.target_label);
            hits += usize::from(state.predicted() == attack.target_label);
            let d = path.backprop(&state, &error_init(state.logits(), attack))?;
            for (acc, v) in delta0.iter_mut().zip(d) {
                *acc += v / n;
            }
        }
        let loss = ce / n + attack.lambda * mask.norm_sq();
        if !loss.is_finite() {
            return Err(AttackError::Diverged { iteration, loss });
        }
        let grad = input_gradient(&delta0, attack, &mask)?;
        let next = update_mask(&mask, &grad, attack.learning_rate)?;
        records.push(IterationRecord {
            iteration,
            loss,
            misclassified: hits == clean_inputs.len(),
            misclassified_rate: hits as f64 / n,
            mask_norm: mask.norm_sq().sqrt(),
            mask,
        });
        mask = next;
    }
    Ok(TrainLog {
        records,
        final_mask: mask,
    })
}

/// Trains a perturbation mask shared by every image in the batch. Per-image
/// input errors are averaged before the update.
pub fn train(
    net: &NetworkSpec,
    weights: &WeightSet,
    clean_inputs: &[Vec<f64>],
    attack: &AttackConfig,
) -> Result<TrainLog, AttackError> {
    check_weights(net, weights)?;
    run_training(&FloatPath { net, weights }, clean_inputs, attack)
}

/// Largest singular value of a row-major `rows x cols` matrix, by power
/// iteration on `W^T W`.
pub fn spectral_norm(w: &[f64], rows: usize, cols: usize) -> f64 {
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..500 {
        let u: Vec<f64> = (0..rows)
            .map(|r| (0..cols).map(|c| w[r * cols + c] * v[c]).sum())
            .collect();
        let mut next: Vec<f64> = (0..cols)
            .map(|c| (0..rows).map(|r| w[r * cols + c] * u[r]).sum())
            .collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let s = norm.sqrt();
        let done = (s - sigma).abs() <= 1e-14 * s;
        sigma = s;
        v = next;
        if done {
            break;
        }
    }
    sigma
}

/// Step size below which plain gradient descent on a single linear layer
/// (no ReLU, no pooling) is guaranteed to decrease the loss.
///
/// The cross-entropy Hessian with respect to the logits has spectral norm at
/// most 1/2, so the loss is `L`-smooth in the mask with
/// `L = sigma_max(W)^2 / 2 + 2 lambda`, and any step `eta < 2 / L` descends.
pub fn linear_stability_bound(layer: &LayerSpec, w: &[f64], lambda: f64) -> f64 {
    let s = spectral_norm(w, layer.weight_rows(), layer.out_channels);
    2.0 / (s * s / 2.0 + 2.0 * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{parse_network, preset};

    fn identity_net(c: usize, relu: bool) -> (NetworkSpec, WeightSet) {
        let mut layer = LayerSpec::conv(Dims3::new(2, 2, c), (1, 1), c, 1);
        layer.relu = relu;
        let net = NetworkSpec::new("id", Dims3::new(2, 2, c), 1, vec![layer], AttackConfig::default()).unwrap();
        let mut w = vec![0.0; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        let ws = WeightSet::new(&net, vec![w]).unwrap();
        (net, ws)
    }

    /// Direct nested-loop convolution with no lowering.
    fn naive_conv(layer: &LayerSpec, w: &[f64], x: &[f64]) -> Vec<f64> {
        let o = layer.conv_output();
        let i = layer.input;
        let mut y = vec![0.0; o.count()];
        for oy in 0..o.h {
            for ox in 0..o.w {
                for co in 0..o.c {
                    let mut s = 0.0;
                    for ky in 0..layer.kernel.0 {
                        for kx in 0..layer.kernel.1 {
                            for ci in 0..i.c {
                                let wi = ((ky * layer.kernel.1 + kx) * i.c + ci) * o.c + co;
                                s += w[wi] * x[i.index(oy * layer.stride + ky, ox * layer.stride + kx, ci)];
                            }
                        }
                    }
                    y[o.index(oy, ox, co)] = s;
                }
            }
        }
        y
    }

    #[test]
    fn identity_conv_passes_input() {
        let (net, w) = identity_net(3, false);
        let x: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let s = forward(&net, &w, &x).unwrap();
        assert_eq!(s.logits(), &x[..]);
        let back = backprop_error(&net.layers[0], w.layer(0), &x, &s.layers[0]).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn negative_preactivations_are_dead() {
        let (net, w) = identity_net(2, true);
        let x = vec![-1.0; 8];
        let s = forward(&net, &w, &x).unwrap();
        assert!(s.logits().iter().all(|v| *v == 0.0));
        assert_eq!(s.layers[0].relu_bitmap.as_ref().unwrap().count_ones(), 0);
        let back = backprop_error(&net.layers[0], w.layer(0), &[1.0; 8], &s.layers[0]).unwrap();
        assert!(back.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_matches_naive_convolution() {
        let net = parse_network(
            r#"{"name":"t","batch_size":1,"input":[7,6,3],"layers":[
                {"kind":"conv","kernel":[3,2],"out_channels":4,"stride":2,"relu":false},
                {"kind":"conv","kernel":[2,2],"out_channels":5,"relu":false}]}"#,
        )
        .unwrap();
        let w = WeightSet::random(&net, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..net.input.count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = forward(&net, &w, &x).unwrap();
        let h1 = naive_conv(&net.layers[0], w.layer(0), &x);
        let h2 = naive_conv(&net.layers[1], w.layer(1), &h1);
        for (a, b) in s.logits().iter().zip(&h2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let (net, w) = identity_net(2, false);
        assert!(matches!(
            forward(&net, &w, &[0.0; 3]),
            Err(AttackError::ShapeMismatch { what: "input", .. })
        ));
        assert!(WeightSet::new(&net, vec![vec![0.0; 3]]).is_err());
    }

    #[test]
    fn loss_and_error_closed_forms() {
        let attack = AttackConfig {
            target_label: 2,
            ..AttackConfig::default()
        };
        let mask = Mask::zeros(Dims3::new(1, 1, 4));
        assert!(loss(&[0.0, 0.0, 60.0, 0.0], &attack, &mask) < 1e-20);
        let d = error_init(&[0.3; 4], &attack);
        assert_eq!(d, vec![0.25, 0.25, -0.75, 0.25]);
        let m = Mask {
            dims: Dims3::new(1, 1, 2),
            data: vec![3.0, -4.0],
        };
        let a = AttackConfig {
            lambda: 0.5,
            target_label: 0,
            ..AttackConfig::default()
        };
        assert_eq!(input_gradient(&[0.0, 0.0], &a, &m).unwrap(), vec![3.0, -4.0]);
        assert!((loss(&[1.0, 2.0], &a, &m) - ((1f64.exp() + 2f64.exp()).ln() - 1.0 + 12.5)).abs() < 1e-12);
    }

    #[test]
    fn error_init_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let attack = AttackConfig {
            target_label: 1,
            ..AttackConfig::default()
        };
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let d = error_init(&z, &attack);
        for i in 0..5 {
            let (mut p, mut m) = (z.clone(), z.clone());
            p[i] += 1e-5;
            m[i] -= 1e-5;
            let fd = (cross_entropy(&p, 1) - cross_entropy(&m, 1)) / 2e-5;
            assert!((fd - d[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn max_pool_routes_to_argmax_only() {
        let net = parse_network(
            r#"{"name":"p","batch_size":1,"input":[4,4,1],"layers":[
                {"kind":"conv","kernel":[1,1],"out_channels":1,"relu":false,"pool":"max"}]}"#,
        )
        .unwrap();
        let w = WeightSet::new(&net, vec![vec![1.0]]).unwrap();
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let s = forward(&net, &w, &x).unwrap();
        let delta = [1.0, 2.0, 3.0, 4.0];
        let g = backprop_error(&net.layers[0], w.layer(0), &delta, &s.layers[0]).unwrap();
        assert_eq!(g.iter().sum::<f64>(), 10.0);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 4);
        let idx = s.layers[0].pool_indices.as_ref().unwrap();
        assert!(idx.iter().all(|i| *i < 4));
        for (o, &d) in delta.iter().enumerate() {
            let (py, px) = (o / 2, o % 2);
            let k = idx[o] as usize;
            let pos = (2 * py + k / 2) * 4 + 2 * px + k % 2;
            assert_eq!(g[pos], d);
            assert_eq!(x[pos], s.logits()[o]);
        }
    }

    #[test]
    fn mask_update_edge_cases() {
        let m = Mask {
            dims: Dims3::new(1, 1, 2),
            data: vec![1.0, 2.0],
        };
        assert_eq!(update_mask(&m, &[0.0, 0.0], 0.3).unwrap(), m);
        assert_eq!(update_mask(&m, &[5.0, 5.0], 0.0).unwrap(), m);
        assert_eq!(update_mask(&m, &[1.0, -1.0], 0.5).unwrap().data, vec![0.5, 2.5]);
    }

    #[test]
    fn zero_iterations_rejected_and_weights_frozen() {
        let net = preset("example4").unwrap();
        let w = WeightSet::random(&net, 1);
        let before = w.digest();
        let x = vec![vec![0.1; net.input.count()]];
        let zero = AttackConfig {
            iterations: 0,
            ..net.attack.clone()
        };
        assert_eq!(train(&net, &w, &x, &zero), Err(AttackError::ZeroIterations));
        let log = train(&net, &w, &x, &net.attack).unwrap();
        assert_eq!(log.records.len(), net.attack.iterations);
        assert_eq!(w.digest(), before);
    }

    #[test]
    fn divergence_is_reported() {
        let (net, _) = identity_net(2, false);
        let w = WeightSet::new(&net, vec![vec![1e300, 0.0, 0.0, 1e300]]).unwrap();
        let attack = AttackConfig {
            learning_rate: 1.0,
            iterations: 3,
            ..AttackConfig::default()
        };
        let err = train(&net, &w, &[vec![1e10; 8]], &attack).unwrap_err();
        assert!(matches!(err, AttackError::Diverged { .. }), "{err}");
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let w = [3.0, 0.0, 0.0, 0.0, -5.0, 0.0];
        assert!((spectral_norm(&w, 2, 3) - 5.0).abs() < 1e-9);
    }
}
