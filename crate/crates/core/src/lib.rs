//! Cycle-level simulator and analytical hardware model for memristor-crossbar
//! accelerators that train adversarial perturbations (AttackNet workloads).
//!
//! The crate is organised bottom-up:
//!
//! - [`crossbar`]: fixed-point functional model of the analog datapath
//!   (quantization, dual/single weight storage, bit-serial MVM, Shift&Add,
//!   max-pooling comparator tree).
//! - [`netspec`]: network descriptions, crossbar and buffer requirements.
//! - [`attacknet`]: reference forward / error-propagation / mask-update
//!   training loop, plus a crossbar-backed quantized datapath.
//! - [`pipeline`]: cycle-level scheduler modelling weight residency in a
//!   finite crossbar pool.
//! - [`hwmodel`]: power/area catalogs, design-point derivation, energy and
//!   efficiency metrics.
//! - [`cli`]: the `a3sim` command-line front end.

pub mod attacknet;
pub mod cli;
pub mod crossbar;
pub mod hwmodel;
pub mod lowering;
pub mod netspec;
pub mod pipeline;
pub mod report;
pub mod tensor;

pub use attacknet::{AttackConfig, ForwardState, Mask, WeightSet};
pub use crossbar::{CrossbarGeometry, ProgrammedArray, QuantizedTensor, StorageMode};
pub use hwmodel::{DesignPoint, HardwareConfig, MetricsReport};
pub use netspec::{LayerSpec, NetworkSpec, ResourceReport};
pub use pipeline::{PipelineTrace, ScheduleConfig, ScheduleEvent};
