//! AttackNet FP and EP executed on programmed crossbars.
//!
//! Each layer's quantized weight matrix is programmed twice: as `W` for FP
//! and as `W^T` for EP. Activations and errors are quantized per layer to
//! `activation_bits` before every matrix-vector product. The crossbars use
//! an ADC wide enough never to saturate, so the only deviation from a float
//! pass with the dequantized weights is activation rounding, which is
//! tracked as an elementwise error bound.

use super::{activate, check_len, route_error, AttackConfig, AttackError, Datapath, ForwardState, TrainLog, WeightSet};
use crate::crossbar::{quantize, CrossbarGeometry, QuantizedTensor, StorageMode, TiledMatrix};
use crate::lowering::{col2im, im2col};
use crate::netspec::{LayerSpec, NetworkSpec, PoolKind};

#[derive(Debug, Clone)]
struct QuantizedLayer {
    forward: TiledMatrix,
    backward: TiledMatrix,
    abs_weights: Vec<f64>,
}

/// A network whose weights live on crossbars.
#[derive(Debug, Clone)]
pub struct QuantizedNet {
    net: NetworkSpec,
    geom: CrossbarGeometry,
    activation_bits: u32,
    layers: Vec<QuantizedLayer>,
    dequantized: WeightSet,
}

/// Result of a quantized pass together with its worst-case deviation from
/// the float reference.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPass<T> {
    pub value: T,
    /// Elementwise bound on `|quantized - reference|` for the pass output.
    pub bound: Vec<f64>,
}

impl QuantizedNet {
    /// Quantizes weights to the geometry's weight width and programs them.
    /// The ADC width is raised to the lossless width of `geom`.
    pub fn program(
        net: &NetworkSpec,
        weights: &WeightSet,
        geom: &CrossbarGeometry,
        mode: StorageMode,
        activation_bits: u32,
    ) -> Result<Self, AttackError> {
        geom.validate()?;
        let geom = geom.with_lossless_adc();
        let mut layers = Vec::with_capacity(net.depth());
        let mut dequantized = Vec::with_capacity(net.depth());
        for (i, spec) in net.layers.iter().enumerate() {
            let w = weights.layer(i);
            check_len("layer weights", spec.weight_count(), w.len())?;
            let q = quantize(w, &[spec.weight_rows(), spec.out_channels], geom.weight_bits())?;
            let deq = q.dequantize();
            layers.push(QuantizedLayer {
                forward: TiledMatrix::program(&q, &geom, mode)?,
                backward: TiledMatrix::program(&q.transposed()?, &geom, mode)?,
                abs_weights: deq.iter().map(|v| v.abs()).collect(),
            });
            dequantized.push(deq);
        }
        Ok(Self {
            net: net.clone(),
            geom,
            activation_bits,
            layers,
            dequantized: WeightSet::new(net, dequantized)?,
        })
    }

    /// The float weights the crossbars actually hold.
    pub fn dequantized_weights(&self) -> &WeightSet {
        &self.dequantized
    }

    pub fn geometry(&self) -> &CrossbarGeometry {
        &self.geom
    }

    /// Physical crossbars used by FP and EP copies of every layer.
    pub fn crossbar_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.forward.crossbar_count() + l.backward.crossbar_count())
            .sum()
    }

    /// Runs every row of `rows` (each `width` long) through `matrix`.
    fn matmul_rows(
        &self,
        matrix: &TiledMatrix,
        values: &[f64],
        width: usize,
        lowered: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, f64), AttackError> {
        let q = quantize(values, &[values.len()], self.activation_bits)?;
        let ints: Vec<f64> = q.values.iter().map(|&v| v as f64).collect();
        let rows = lowered(&ints);
        let mut out = Vec::with_capacity(rows.len() / width * matrix.cols);
        for row in rows.chunks_exact(width) {
            let x = QuantizedTensor::from_ints(
                vec![width],
                row.iter().map(|&v| v as i64).collect(),
                q.scale,
                self.activation_bits,
            )?;
            out.extend(matrix.mvm(&x)?.dequantize());
        }
        Ok((out, q.scale))
    }

    pub fn forward(&self, input: &[f64]) -> Result<QuantizedPass<ForwardState>, AttackError> {
        check_len("input", self.net.input.count(), input.len())?;
        let mut traces = Vec::with_capacity(self.net.depth());
        let mut bound = vec![0.0; input.len()];
        for (spec, layer) in self.net.layers.iter().zip(&self.layers) {
            let x = traces.last().map_or(input, |t: &super::LayerTrace| &t.output[..]);
            let lower = |v: &[f64]| im2col(v, spec.input, spec.kernel.0, spec.kernel.1, spec.stride);
            let k = spec.weight_rows();
            let (pre, scale) = self.matmul_rows(&layer.forward, x, k, lower)?;
            let in_bound: Vec<f64> = bound.iter().map(|e| e + scale / 2.0).collect();
            let pre_bound = bound_matmul(&lower(&in_bound), k, &layer.abs_weights, spec.out_channels, false);
            bound = pool_bound(spec, pre_bound);
            traces.push(activate(spec, pre));
        }
        Ok(QuantizedPass {
            value: ForwardState {
                input: input.to_vec(),
                layers: traces,
            },
            bound,
        })
    }

    /// EP through the transposed crossbars. The value is `delta^0`.
    pub fn backprop(&self, state: &ForwardState, delta_out: &[f64]) -> Result<QuantizedPass<Vec<f64>>, AttackError> {
        check_len("output error", self.net.classes(), delta_out.len())?;
        let mut delta = delta_out.to_vec();
        let mut bound = vec![0.0; delta.len()];
        for (i, spec) in self.net.layers.iter().enumerate().rev() {
            let layer = &self.layers[i];
            let trace = &state.layers[i];
            let g = route_error(spec, &delta, trace);
            let g_bound = route_error(spec, &bound, trace);
            let cout = spec.out_channels;
            let (cols, scale) = self.matmul_rows(&layer.backward, &g, cout, |v| v.to_vec())?;
            let in_bound: Vec<f64> = g_bound.iter().map(|e| e + scale / 2.0).collect();
            let cols_bound = bound_matmul(&in_bound, cout, &layer.abs_weights, spec.weight_rows(), true);
            let fold = |c: &[f64]| col2im(c, spec.input, spec.kernel.0, spec.kernel.1, spec.stride);
            delta = fold(&cols);
            bound = fold(&cols_bound);
        }
        Ok(QuantizedPass { value: delta, bound })
    }

    pub fn train(&self, clean_inputs: &[Vec<f64>], attack: &AttackConfig) -> Result<TrainLog, AttackError> {
        super::run_training(self, clean_inputs, attack)
    }
}

impl Datapath for QuantizedNet {
    fn net(&self) -> &NetworkSpec {
        &self.net
    }

    fn forward(&self, input: &[f64]) -> Result<ForwardState, AttackError> {
        QuantizedNet::forward(self, input).map(|p| p.value)
    }

    fn backprop(&self, state: &ForwardState, delta_out: &[f64]) -> Result<Vec<f64>, AttackError> {
        QuantizedNet::backprop(self, state, delta_out).map(|p| p.value)
    }
}

/// `rows x width` bounds times `|W|` (`width x out`), or times `|W|^T` when
/// `transposed` (then `|W|` is `out x width`).
fn bound_matmul(rows: &[f64], width: usize, abs_w: &[f64], out: usize, transposed: bool) -> Vec<f64> {
    let mut y = vec![0.0; rows.len() / width * out];
    for (r, yr) in rows.chunks_exact(width).zip(y.chunks_exact_mut(out)) {
        for (j, yj) in yr.iter_mut().enumerate() {
            *yj = r
                .iter()
                .enumerate()
                .map(|(k, e)| e * if transposed { abs_w[j * width + k] } else { abs_w[k * out + j] })
                .sum();
        }
    }
    y
}

/// ReLU is 1-Lipschitz; max pooling takes the window's worst bound and
/// average pooling its mean.
fn pool_bound(spec: &LayerSpec, bound: Vec<f64>) -> Vec<f64> {
    let Some(kind) = spec.pool else { return bound };
    let full = spec.conv_output();
    let pooled = spec.output();
    let mut out = vec![0.0; pooled.count()];
    for py in 0..pooled.h {
        for px in 0..pooled.w {
            for ch in 0..pooled.c {
                let w = (0..4).map(|k| bound[full.index(2 * py + k / 2, 2 * px + k % 2, ch)]);
                out[pooled.index(py, px, ch)] = match kind {
                    PoolKind::Max => w.fold(0.0, f64::max),
                    PoolKind::Avg => w.sum::<f64>() / 4.0,
                };
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{backprop, error_init, forward};
    use super::*;
    use crate::netspec::preset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantized_passes_stay_within_derived_bounds() {
        let net = preset("example4").unwrap();
        let w = WeightSet::random(&net, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..net.input.count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for mode in [StorageMode::Dual, StorageMode::Single] {
            let q = QuantizedNet::program(&net, &w, &CrossbarGeometry::default(), mode, 16).unwrap();
            let fp = q.forward(&x).unwrap();
            let reference = forward(&net, q.dequantized_weights(), &x).unwrap();
            for ((a, b), e) in fp.value.logits().iter().zip(reference.logits()).zip(&fp.bound) {
                assert!((a - b).abs() <= e + 1e-9, "{a} vs {b} bound {e}");
            }
            let delta = error_init(fp.value.logits(), &net.attack);
            let ep = q.backprop(&fp.value, &delta).unwrap();
            let chain = backprop(&net, q.dequantized_weights(), &fp.value, &delta).unwrap();
            for ((a, b), e) in ep.value.iter().zip(&chain[0]).zip(&ep.bound) {
                assert!((a - b).abs() <= e + 1e-9, "{a} vs {b} bound {e}");
            }
        }
    }
}
