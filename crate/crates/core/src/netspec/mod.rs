//! Network descriptions and their crossbar / buffer resource requirements.
//!
//! Layers are convolutions or fully connected layers (a fully connected layer
//! is a convolution whose kernel covers the whole input). Each layer may be
//! followed by ReLU and a fixed 2×2, stride-2 pooling window.

mod presets;

pub use presets::{preset, preset_names, uniform_net};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacknet::AttackConfig;
use crate::crossbar::{CrossbarGeometry, StorageMode};
use crate::lowering::conv_output;
use crate::tensor::Dims3;

/// Bytes per buffered neuron or error value (16-bit fixed point).
pub const NEURON_BYTES: u64 = 2;
/// Bits recorded per max-pooled output (index into a 2×2 window).
pub const POOL_INDEX_BITS: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetSpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("layer {layer}: unknown layer kind {kind:?} (expected \"conv\" or \"fc\")")]
    UnknownLayerKind { layer: usize, kind: String },
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    #[error("layer {layer}: declared input {declared} does not match previous output {derived}")]
    ShapeMismatch { layer: usize, declared: Dims3, derived: Dims3 },
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    FullyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: Dims3,
    /// `(kh, kw)`; the full input extent for fully connected layers.
    pub kernel: (usize, usize),
    pub out_channels: usize,
    pub stride: usize,
    pub relu: bool,
    pub pool: Option<PoolKind>,
    /// Per-layer override of the logical-matrix replication factor.
    pub replication: Option<usize>,
}

impl LayerSpec {
    pub fn fully_connected(input: Dims3, out_channels: usize, relu: bool) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            input,
            kernel: (input.h, input.w),
            out_channels,
            stride: 1,
            relu,
            pool: None,
            replication: None,
        }
    }

    pub fn conv(input: Dims3, kernel: (usize, usize), out_channels: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            input,
            kernel,
            out_channels,
            stride,
            relu: true,
            pool: None,
            replication: None,
        }
    }

    /// Output of the convolution itself, before pooling.
    pub fn conv_output(&self) -> Dims3 {
        let (oh, ow) = conv_output(self.input, self.kernel.0, self.kernel.1, self.stride).expect("validated layer");
        Dims3::new(oh, ow, self.out_channels)
    }

    /// Output after optional pooling; what the next layer consumes.
    pub fn output(&self) -> Dims3 {
        let c = self.conv_output();
        match self.pool {
            Some(_) => Dims3::new(c.h / 2, c.w / 2, c.c),
            None => c,
        }
    }

    pub fn activation_count(&self) -> usize {
        self.conv_output().count()
    }

    pub fn output_count(&self) -> usize {
        self.output().count()
    }

    /// Rows of the lowered weight matrix, `kh * kw * cin`.
    pub fn weight_rows(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.input.c
    }

    pub fn weight_count(&self) -> usize {
        self.weight_rows() * self.out_channels
    }

    /// Multiply-accumulates for one forward pass of one image.
    pub fn macs(&self) -> u64 {
        self.weight_count() as u64 * (self.conv_output().h * self.conv_output().w) as u64
    }

    fn validate(&self, layer: usize) -> Result<(), NetSpecError> {
        let shape = |message: String| NetSpecError::Shape { layer, message };
        if self.out_channels == 0 {
            return Err(shape("out_channels must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(shape("stride must be >= 1".into()));
        }
        if self.replication == Some(0) {
            return Err(shape("replication must be >= 1".into()));
        }
        let (kh, kw) = self.kernel;
        if conv_output(self.input, kh, kw, self.stride).is_none() {
            return Err(shape(format!("kernel {kh}x{kw} does not fit input {}", self.input)));
        }
        if self.pool.is_some() {
            let c = self.conv_output();
            if c.h < 2 || c.w < 2 {
                return Err(shape(format!("2x2 pooling needs at least 2x2 activations, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Dims3,
    pub batch_size: usize,
    pub layers: Vec<LayerSpec>,
    pub attack: AttackConfig,
}

impl NetworkSpec {
    /// Builds and validates a network from a layer chain.
    pub fn new(
        name: impl Into<String>,
        input: Dims3,
        batch_size: usize,
        layers: Vec<LayerSpec>,
        attack: AttackConfig,
    ) -> Result<Self, NetSpecError> {
        let net = Self {
            name: name.into(),
            input,
            batch_size,
            layers,
            attack,
        };
        net.validate()?;
        Ok(net)
    }

    /// Network depth `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(|l| l.output_count()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), NetSpecError> {
        if self.layers.is_empty() {
            return Err(NetSpecError::Invalid {
                field: "layers",
                message: "network needs at least one layer".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(NetSpecError::Invalid {
                field: "batch_size",
                message: "must be >= 1".into(),
            });
        }
        if self.input.count() == 0 {
            return Err(NetSpecError::Invalid {
                field: "input",
                message: "all input dims must be >= 1".into(),
            });
        }
        let mut prev = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.input != prev {
                return Err(NetSpecError::ShapeMismatch {
                    layer: i + 1,
                    declared: layer.input,
                    derived: prev,
                });
            }
            if layer.kind == LayerKind::FullyConnected && layer.kernel != (prev.h, prev.w) {
                return Err(NetSpecError::Shape {
                    layer: i + 1,
                    message: "fully connected kernel must cover the whole input".into(),
                });
            }
            layer.validate(i + 1)?;
            prev = layer.output();
        }
        self.attack.validate(self.classes()).map_err(|message| NetSpecError::Invalid {
            field: "attack",
            message,
        })
    }

    /// Serializes to the JSON config format accepted by [`parse_network`].
    pub fn emit(&self) -> String {
        let doc = config::NetworkDoc::from_spec(self);
        serde_json::to_string_pretty(&doc).expect("network config serializes")
    }
}

/// Parses and validates a JSON network config.
pub fn parse_network(text: &str) -> Result<NetworkSpec, NetSpecError> {
    let doc: config::NetworkDoc = serde_json::from_str(text).map_err(|e| NetSpecError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    doc.into_spec()
}

/// Crossbars needed to hold one layer's weights.
///
/// The lowered `[kh*kw*cin, cout]` matrix is bit-sliced to
/// `cout * cells_per_weight` physical columns and tiled over the geometry;
/// dual storage doubles the count.
pub fn crossbar_requirement(layer: &LayerSpec, geom: &CrossbarGeometry, replication: usize, mode: StorageMode) -> usize {
    let rows = layer.weight_rows();
    let phys_cols = layer.out_channels * geom.cells_per_weight as usize;
    rows.div_ceil(geom.rows) * phys_cols.div_ceil(geom.cols) * replication * mode.arrays_per_matrix()
}

/// Per-layer crossbar costs, honouring per-layer replication overrides.
pub fn layer_costs(net: &NetworkSpec, geom: &CrossbarGeometry, replication: usize, mode: StorageMode) -> Vec<usize> {
    net.layers
        .iter()
        .map(|l| crossbar_requirement(l, geom, l.replication.unwrap_or(replication), mode))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    CnnTraining,
    Attacknet,
}

/// How long (in pipeline stages) layer `l` (1-based) of an `L`-layer
/// network stays buffered during CNN training: `2(L-l)+1`.
pub fn cnn_durations(net: &NetworkSpec) -> Vec<usize> {
    let depth = net.depth();
    (1..=depth).map(|l| 2 * (depth - l) + 1).collect()
}

/// Split of the AttackNet buffer into its three kinds of data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackBuffer {
    /// The single live error layer.
    pub error_bytes: u64,
    /// ReLU derivative bitmaps, one bit per activation.
    pub relu_bitmap_bytes: u64,
    /// Max-pool argmax indices.
    pub pool_index_bytes: u64,
}

impl AttackBuffer {
    pub fn total(&self) -> u64 {
        self.error_bytes + self.relu_bitmap_bytes + self.pool_index_bytes
    }
}

pub fn attack_buffer(net: &NetworkSpec) -> AttackBuffer {
    let widest = net.layers.iter().map(|l| l.output_count() as u64).max().unwrap_or(0);
    let bitmap_bits: u64 = net
        .layers
        .iter()
        .filter(|l| l.relu)
        .map(|l| l.activation_count() as u64)
        .sum();
    let index_bits: u64 = net
        .layers
        .iter()
        .filter(|l| l.pool == Some(PoolKind::Max))
        .map(|l| l.output_count() as u64 * POOL_INDEX_BITS)
        .sum();
    AttackBuffer {
        error_bytes: widest * NEURON_BYTES,
        relu_bitmap_bytes: bitmap_bits.div_ceil(8),
        pool_index_bytes: index_bits.div_ceil(8),
    }
}

/// On-chip neuron storage in bytes for the given training mode.
pub fn buffer_requirement(net: &NetworkSpec, mode: BufferMode) -> u64 {
    match mode {
        BufferMode::CnnTraining => net
            .layers
            .iter()
            .zip(cnn_durations(net))
            .map(|(l, d)| l.output_count() as u64 * d as u64 * NEURON_BYTES)
            .sum(),
        BufferMode::Attacknet => attack_buffer(net).total(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub network: String,
    pub storage_mode: StorageMode,
    pub per_layer_crossbars: Vec<usize>,
    pub total_crossbars: usize,
    pub cnn_durations: Vec<usize>,
    pub buffer_bytes_cnn: u64,
    pub buffer_bytes_attack: u64,
    pub attack_breakdown: AttackBuffer,
    /// `buffer_bytes_attack / buffer_bytes_cnn`.
    pub ratio: f64,
}

pub fn analyze(net: &NetworkSpec, geom: &CrossbarGeometry, replication: usize, mode: StorageMode) -> ResourceReport {
    let per_layer_crossbars = layer_costs(net, geom, replication, mode);
    let cnn = buffer_requirement(net, BufferMode::CnnTraining);
    let breakdown = attack_buffer(net);
    ResourceReport {
        network: net.name.clone(),
        storage_mode: mode,
        total_crossbars: per_layer_crossbars.iter().sum(),
        per_layer_crossbars,
        cnn_durations: cnn_durations(net),
        buffer_bytes_cnn: cnn,
        buffer_bytes_attack: breakdown.total(),
        attack_breakdown: breakdown,
        ratio: breakdown.total() as f64 / cnn as f64,
    }
}

mod config {
    //! Serde mirror of the JSON config schema.

    use serde::{Deserialize, Serialize};

    use super::{LayerKind, LayerSpec, NetSpecError, NetworkSpec, PoolKind};
    use crate::attacknet::AttackConfig;
    use crate::tensor::Dims3;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub(super) struct NetworkDoc {
        name: String,
        batch_size: usize,
        input: [usize; 3],
        layers: Vec<LayerDoc>,
        #[serde(default)]
        attack: AttackConfig,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct LayerDoc {
        kind: String,
        /// Optional; checked against the previous layer's output when given.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input: Option<[usize; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kernel: Option<[usize; 2]>,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "yes")]
        relu: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool: Option<PoolKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        replication: Option<usize>,
    }

    fn one() -> usize {
        1
    }

    fn yes() -> bool {
        true
    }

    impl NetworkDoc {
        pub(super) fn from_spec(net: &NetworkSpec) -> Self {
            let layers = net
                .layers
                .iter()
                .map(|l| LayerDoc {
                    kind: match l.kind {
                        LayerKind::Conv => "conv".into(),
                        LayerKind::FullyConnected => "fc".into(),
                    },
                    input: Some(l.input.into()),
                    kernel: match l.kind {
                        LayerKind::Conv => Some([l.kernel.0, l.kernel.1]),
                        LayerKind::FullyConnected => None,
                    },
                    out_channels: l.out_channels,
                    stride: l.stride,
                    relu: l.relu,
                    pool: l.pool,
                    replication: l.replication,
                })
                .collect();
            Self {
                name: net.name.clone(),
                batch_size: net.batch_size,
                input: net.input.into(),
                layers,
                attack: net.attack.clone(),
            }
        }

        pub(super) fn into_spec(self) -> Result<NetworkSpec, NetSpecError> {
            let input = Dims3::from(self.input);
            let mut prev = input;
            let mut layers = Vec::with_capacity(self.layers.len());
            for (i, doc) in self.layers.into_iter().enumerate() {
                let layer = i + 1;
                if let Some(declared) = doc.input.map(Dims3::from) {
                    if declared != prev {
                        return Err(NetSpecError::ShapeMismatch {
                            layer,
                            declared,
                            derived: prev,
                        });
                    }
                }
                let kind = match doc.kind.as_str() {
                    "conv" | "convolution" => LayerKind::Conv,
                    "fc" | "fully_connected" | "dense" => LayerKind::FullyConnected,
                    other => {
                        return Err(NetSpecError::UnknownLayerKind {
                            layer,
                            kind: other.to_string(),
                        })
                    }
                };
                let kernel = match (kind, doc.kernel) {
                    (LayerKind::Conv, Some([kh, kw])) => (kh, kw),
                    (LayerKind::Conv, None) => {
                        return Err(NetSpecError::Shape {
                            layer,
                            message: "conv layer needs a kernel".into(),
                        })
                    }
                    (LayerKind::FullyConnected, None) => (prev.h, prev.w),
                    (LayerKind::FullyConnected, Some([kh, kw])) if (kh, kw) == (prev.h, prev.w) => (kh, kw),
                    (LayerKind::FullyConnected, Some(_)) => {
                        return Err(NetSpecError::Shape {
                            layer,
                            message: "fully connected kernel must cover the whole input".into(),
                        })
                    }
                };
                let spec = LayerSpec {
                    kind,
                    input: prev,
                    kernel,
                    out_channels: doc.out_channels,
                    stride: doc.stride,
                    relu: doc.relu,
                    pool: doc.pool,
                    replication: doc.replication,
                };
                spec.validate(layer)?;
                prev = spec.output();
                layers.push(spec);
            }
            NetworkSpec::new(self.name, input, self.batch_size, layers, self.attack)
        }
    }
}
