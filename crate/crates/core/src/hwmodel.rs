//! Analytical power, area and energy model of the accelerator.
//!
//! A hardware config is a component catalog (unit power, unit area, count).
//! Design points trade buffer capacity for extra crossbar bundles (one
//! crossbar with its DAC and ADC) under a fixed power or area budget, and
//! optionally switch to single-array weight storage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{CrossbarGeometry, StorageMode};
use crate::netspec::{layer_costs, NetworkSpec};
use crate::pipeline::{schedule, PipelineError, PipelineTrace, ScheduleConfig};

/// Logical cycle time in seconds.
pub const CYCLE_TIME: f64 = 50.88e-9;
pub const BASELINE_BUNDLES: u64 = 16128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwError {
    #[error("design-point derivation failed: {0}")]
    Derivation(String),
    #[error("invalid hardware config: {0}")]
    Invalid(String),
    #[error("hardware catalog syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("trace does not match hardware config: {0}")]
    Mismatch(String),
    #[error("unknown hardware preset {0:?} (expected baseline, a3p, a3r, a3px or a3rx)")]
    UnknownPreset(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignPoint {
    Baseline,
    A3p,
    A3r,
    A3px,
    A3rx,
}

impl DesignPoint {
    pub const ALL: [DesignPoint; 5] = [
        DesignPoint::Baseline,
        DesignPoint::A3p,
        DesignPoint::A3r,
        DesignPoint::A3px,
        DesignPoint::A3rx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignPoint::Baseline => "baseline",
            DesignPoint::A3p => "a3p",
            DesignPoint::A3r => "a3r",
            DesignPoint::A3px => "a3px",
            DesignPoint::A3rx => "a3rx",
        }
    }

    pub fn storage_mode(self) -> StorageMode {
        match self {
            DesignPoint::A3px | DesignPoint::A3rx => StorageMode::Single,
            _ => StorageMode::Dual,
        }
    }
}

impl std::fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DesignPoint {
    type Err = HwError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DesignPoint::ALL
            .into_iter()
            .find(|d| d.name() == s.to_ascii_lowercase())
            .ok_or_else(|| HwError::UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Buffer,
    Crossbar,
    Dac,
    Adc,
    Other,
}

impl ComponentKind {
    fn infer(name: &str) -> Self {
        let n = name.to_ascii_lowercase();
        if n.contains("crossbar") {
            ComponentKind::Crossbar
        } else if n.contains("dac") {
            ComponentKind::Dac
        } else if n.contains("adc") {
            ComponentKind::Adc
        } else if n.contains("edram") || n.contains("buffer") || n.contains("register") {
            ComponentKind::Buffer
        } else {
            ComponentKind::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    #[serde(rename = "unit_power_w")]
    pub unit_power: f64,
    #[serde(rename = "unit_area_mm2")]
    pub unit_area: f64,
    pub count: u64,
    /// Inferred from the name when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ComponentKind>,
}

impl ComponentSpec {
    pub fn new(name: &str, unit_power: f64, unit_area: f64, count: u64) -> Self {
        Self {
            name: name.to_string(),
            unit_power,
            unit_area,
            count,
            kind: None,
        }
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind.unwrap_or_else(|| ComponentKind::infer(&self.name))
    }

    pub fn power(&self) -> f64 {
        self.unit_power * self.count as f64
    }

    pub fn area(&self) -> f64 {
        self.unit_area * self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub design_point: DesignPoint,
    pub storage_mode: StorageMode,
    #[serde(rename = "cycle_time_s", default = "default_cycle_time")]
    pub cycle_time: f64,
    pub components: Vec<ComponentSpec>,
}

fn default_cycle_time() -> f64 {
    CYCLE_TIME
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<(), HwError> {
        for c in &self.components {
            if !(c.unit_power >= 0.0 && c.unit_area >= 0.0 && c.unit_power.is_finite() && c.unit_area.is_finite()) {
                return Err(HwError::Invalid(format!("component {} has a negative or non-finite value", c.name)));
            }
        }
        if !(self.cycle_time > 0.0 && self.cycle_time.is_finite()) {
            return Err(HwError::Invalid("cycle_time_s must be > 0".into()));
        }
        let counts: Vec<u64> = [ComponentKind::Crossbar, ComponentKind::Dac, ComponentKind::Adc]
            .iter()
            .map(|k| self.count_of(*k))
            .collect();
        if counts[0] == 0 || counts.iter().any(|c| *c != counts[0]) {
            return Err(HwError::Invalid(format!(
                "crossbar, DAC and ADC counts must be equal and nonzero, got {counts:?}"
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HwError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HwError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hardware config serializes")
    }

    fn count_of(&self, kind: ComponentKind) -> u64 {
        self.components.iter().filter(|c| c.kind() == kind).map(|c| c.count).sum()
    }

    fn unit_power_of(&self, kind: ComponentKind) -> f64 {
        self.components
            .iter()
            .find(|c| c.kind() == kind)
            .map_or(0.0, |c| c.unit_power)
    }

    fn power_of(&self, kind: ComponentKind) -> f64 {
        self.components.iter().filter(|c| c.kind() == kind).map(|c| c.power()).sum()
    }

    /// Crossbar bundles (crossbar + DAC + ADC).
    pub fn bundles(&self) -> u64 {
        self.count_of(ComponentKind::Crossbar)
    }

    pub fn buffer_power(&self) -> f64 {
        self.power_of(ComponentKind::Buffer)
    }

    pub fn buffer_area(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| c.kind() == ComponentKind::Buffer)
            .map(|c| c.area())
            .sum()
    }
}

pub fn total_power(config: &HardwareConfig) -> f64 {
    config.components.iter().map(|c| c.power()).sum()
}

pub fn total_area(config: &HardwareConfig) -> f64 {
    config.components.iter().map(|c| c.area()).sum()
}

fn bundle_components(count: u64) -> Vec<ComponentSpec> {
    vec![
        ComponentSpec::new("crossbar 128x128", 0.0003, 0.000025, count),
        ComponentSpec::new("DAC 1x128", 0.0005, 0.00002125, count),
        ComponentSpec::new("ADC 8bits", 0.002, 0.0012, count),
    ]
}

/// Baseline accelerator: 32 MB eDRAM, 128 KB registers, 16128 bundles,
/// dual storage.
///
/// The register rows carry the per-component totals (0.037 W, 0.175 mm²);
/// the listed unit values (0.04 W, 0.1752 mm²) disagree slightly with them.
pub fn baseline_catalog() -> HardwareConfig {
    let mut components = vec![
        ComponentSpec::new("eDRAM buffer", 4.49, 16.364, 1),
        ComponentSpec::new("output register", 0.037, 0.175, 1),
        ComponentSpec::new("input register", 0.037, 0.175, 1),
    ];
    components.extend(bundle_components(BASELINE_BUNDLES));
    HardwareConfig {
        design_point: DesignPoint::Baseline,
        storage_mode: StorageMode::Dual,
        cycle_time: CYCLE_TIME,
        components,
    }
}

/// Buffers sized for AttackNet: 2 MB eDRAM and 16 KB registers.
///
/// Register area uses the 0.01 mm² total; the listed unit area is 0.015 mm².
pub fn reduced_buffers() -> Vec<ComponentSpec> {
    vec![
        ComponentSpec::new("eDRAM buffer", 1.36, 2.45, 1),
        ComponentSpec::new("output register", 0.01, 0.01, 1),
        ComponentSpec::new("input register", 0.01, 0.01, 1),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    SamePower,
    SameArea,
}

/// Replaces the baseline buffers with `reduced` and spends the freed power
/// (or area) on extra bundles, `floor(P / p)` or `floor(A / a)`.
pub fn derive_design_point(
    baseline: &HardwareConfig,
    reduced: &[ComponentSpec],
    budget: Budget,
    storage: StorageMode,
) -> Result<HardwareConfig, HwError> {
    baseline.validate()?;
    let bundle = |f: fn(&ComponentSpec) -> f64| -> f64 {
        [ComponentKind::Crossbar, ComponentKind::Dac, ComponentKind::Adc]
            .iter()
            .map(|k| baseline.components.iter().find(|c| c.kind() == *k).map_or(0.0, f))
            .sum()
    };
    let reduced_power: f64 = reduced.iter().map(|c| c.power()).sum();
    let reduced_area: f64 = reduced.iter().map(|c| c.area()).sum();
    let (freed, unit) = match budget {
        Budget::SamePower => (baseline.buffer_power() - reduced_power, bundle(|c| c.unit_power)),
        Budget::SameArea => (baseline.buffer_area() - reduced_area, bundle(|c| c.unit_area)),
    };
    if !(freed > 0.0) {
        return Err(HwError::Derivation(format!(
            "reduced buffers free no budget ({budget:?} difference {freed})"
        )));
    }
    if !(unit > 0.0) {
        return Err(HwError::Derivation("bundle unit cost must be > 0".into()));
    }
    // Guard against representation error pushing an exact quotient below an integer.
    let extra = (freed / unit * (1.0 + 1e-12)).floor() as u64;
    let count = baseline.bundles() + extra;
    let design_point = match (budget, storage) {
        (Budget::SamePower, StorageMode::Dual) => DesignPoint::A3p,
        (Budget::SameArea, StorageMode::Dual) => DesignPoint::A3r,
        (Budget::SamePower, StorageMode::Single) => DesignPoint::A3px,
        (Budget::SameArea, StorageMode::Single) => DesignPoint::A3rx,
    };
    let mut components = reduced.to_vec();
    components.extend(baseline.components.iter().filter_map(|c| match c.kind() {
        ComponentKind::Crossbar | ComponentKind::Dac | ComponentKind::Adc => Some(ComponentSpec { count, ..c.clone() }),
        ComponentKind::Buffer => None,
        ComponentKind::Other => Some(c.clone()),
    }));
    Ok(HardwareConfig {
        design_point,
        storage_mode: storage,
        cycle_time: baseline.cycle_time,
        components,
    })
}

/// Built-in design points with the published bundle counts.
pub fn preset(design: DesignPoint) -> HardwareConfig {
    if design == DesignPoint::Baseline {
        return baseline_catalog();
    }
    let count = match design {
        DesignPoint::A3p | DesignPoint::A3px => 17265,
        _ => 27553,
    };
    let mut components = reduced_buffers();
    components.extend(bundle_components(count));
    HardwareConfig {
        design_point: design,
        storage_mode: design.storage_mode(),
        cycle_time: CYCLE_TIME,
        components,
    }
}

/// Crossbars available for distinct weights: half the bundles under dual
/// storage.
pub fn effective_capacity(config: &HardwareConfig) -> usize {
    (config.bundles() / config.storage_mode.arrays_per_matrix() as u64) as usize
}

/// 16-bit operations for `iterations` batches of `images` images: FP per
/// image, EP once per batch, and 2 ops per input pixel for the mask update.
pub fn count_ops(net: &NetworkSpec, images: usize, iterations: usize) -> u64 {
    let layer_ops: u64 = net.layers.iter().map(|l| 2 * l.macs()).sum();
    let mask = 2 * net.input.count() as u64;
    iterations as u64 * (images as u64 * layer_ops + layer_ops + mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub adc: f64,
    pub dac: f64,
    pub buffer: f64,
    pub crossbar: f64,
    pub others: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.adc + self.dac + self.buffer + self.crossbar + self.others
    }

    /// `(adc + dac) / total`.
    pub fn converter_share(&self) -> f64 {
        (self.adc + self.dac) / self.total()
    }
}

/// Energy of a schedule on `config`.
///
/// Each crossbar compute activates the bundles holding that layer for one
/// cycle. Under dual storage both arrays of a pair draw crossbar power while
/// the differential current is converted by a single DAC/ADC path. Buffers
/// draw their full power every cycle; "others" is zero.
pub fn energy_breakdown(trace: &PipelineTrace, config: &HardwareConfig) -> Result<EnergyBreakdown, HwError> {
    let cap = effective_capacity(config);
    if trace.config.capacity > cap {
        return Err(HwError::Mismatch(format!(
            "trace capacity {} exceeds effective capacity {cap}",
            trace.config.capacity
        )));
    }
    let arrays = config.storage_mode.arrays_per_matrix() as f64;
    let ct = config.cycle_time;
    let active: u64 = trace
        .events
        .iter()
        .filter_map(|e| e.action.compute_layer())
        .map(|l| trace.layer_costs[l - 1] as u64)
        .sum();
    let active = active as f64;
    Ok(EnergyBreakdown {
        adc: active * config.unit_power_of(ComponentKind::Adc) * ct,
        dac: active * config.unit_power_of(ComponentKind::Dac) * ct,
        buffer: trace.total_cycles as f64 * config.buffer_power() * ct,
        crossbar: active * arrays * config.unit_power_of(ComponentKind::Crossbar) * ct,
        others: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub design_point: DesignPoint,
    pub storage_mode: StorageMode,
    pub bundles: u64,
    pub effective_capacity: usize,
    pub total_power: f64,
    pub total_area: f64,
    pub total_cycles: usize,
    pub runtime_s: f64,
    pub ops: u64,
    /// GOPs/W, as (operations per second) per watt.
    pub pe: f64,
    /// GOPs/(s*mm^2).
    pub ce: f64,
    pub overwrite_count: usize,
    pub stall_events: usize,
    pub energy_breakdown: EnergyBreakdown,
    pub total_energy: f64,
    pub speedup_vs_baseline: f64,
}

pub fn metrics(
    trace: &PipelineTrace,
    config: &HardwareConfig,
    net: &NetworkSpec,
    images: usize,
    iterations: usize,
    baseline_runtime_s: Option<f64>,
) -> Result<MetricsReport, HwError> {
    let energy = energy_breakdown(trace, config)?;
    let runtime = trace.total_cycles as f64 * config.cycle_time;
    let ops = count_ops(net, images, iterations);
    let power = total_power(config);
    let area = total_area(config);
    Ok(MetricsReport {
        design_point: config.design_point,
        storage_mode: config.storage_mode,
        bundles: config.bundles(),
        effective_capacity: effective_capacity(config),
        total_power: power,
        total_area: area,
        total_cycles: trace.total_cycles,
        runtime_s: runtime,
        ops,
        pe: ops as f64 / runtime / power / 1e9,
        ce: ops as f64 / runtime / area / 1e9,
        overwrite_count: trace.overwrite_count,
        stall_events: trace.stall_events,
        total_energy: energy.total(),
        energy_breakdown: energy,
        speedup_vs_baseline: baseline_runtime_s.map_or(1.0, |b| b / runtime),
    })
}

/// Options shared by every design point in an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub geometry: CrossbarGeometry,
    pub replication: usize,
    pub copies: usize,
    pub batches: usize,
    /// Overrides the effective capacity of the config.
    pub capacity: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            geometry: CrossbarGeometry::default(),
            replication: 1,
            copies: 1,
            batches: 1,
            capacity: None,
        }
    }
}

/// Schedules `net` on `config` and computes its metrics.
pub fn evaluate(
    net: &NetworkSpec,
    config: &HardwareConfig,
    opts: &EvalOptions,
    baseline_runtime_s: Option<f64>,
) -> Result<(PipelineTrace, MetricsReport), HwError> {
    config.validate()?;
    let costs = layer_costs(net, &opts.geometry, opts.replication, StorageMode::Single);
    let sched = ScheduleConfig {
        capacity: opts.capacity.unwrap_or_else(|| effective_capacity(config)),
        copies: opts.copies,
        batches: opts.batches,
    };
    let trace = schedule(net, &costs, &sched)?;
    let report = metrics(&trace, config, net, net.batch_size, opts.batches, baseline_runtime_s)?;
    Ok((trace, report))
}

/// Number of crossbar compute events in a trace.
pub fn compute_events(trace: &PipelineTrace) -> usize {
    trace
        .events
        .iter()
        .filter(|e| e.action.compute_layer().is_some())
        .count()
}
