//! Python bindings for the a3sim simulator.
//!
//! Reports are returned as plain Python dicts decoded from the crate's JSON
//! serialisation.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use a3sim::attacknet::{self, QuantizedNet};
use a3sim::crossbar::{self, CrossbarGeometry, StorageMode};
use a3sim::hwmodel::{self, Budget, DesignPoint, EvalOptions};
use a3sim::netspec;
use a3sim::pipeline;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn storage(mode: &str) -> PyResult<StorageMode> {
    match mode {
        "dual" => Ok(StorageMode::Dual),
        "single" => Ok(StorageMode::Single),
        other => Err(PyValueError::new_err(format!("storage mode must be 'dual' or 'single', got {other:?}"))),
    }
}

#[pyclass(name = "NetworkSpec", module = "a3sim_py", frozen)]
struct PyNetworkSpec {
    inner: netspec::NetworkSpec,
}

#[pymethods]
impl PyNetworkSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: netspec::parse_network(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        netspec::preset(name)
            .map(|inner| Self { inner })
            .ok_or_else(|| PyValueError::new_err(format!("unknown network preset {name:?}")))
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn to_json(&self) -> String {
        self.inner.emit()
    }

    #[pyo3(signature = (mode = "dual", replication = 1))]
    fn layer_costs(&self, mode: &str, replication: usize) -> PyResult<Vec<usize>> {
        Ok(netspec::layer_costs(&self.inner, &CrossbarGeometry::default(), replication, storage(mode)?))
    }

    #[pyo3(signature = (mode = "dual", replication = 1))]
    fn analyze<'py>(&self, py: Python<'py>, mode: &str, replication: usize) -> PyResult<Bound<'py, PyAny>> {
        let report = netspec::analyze(&self.inner, &CrossbarGeometry::default(), replication, storage(mode)?);
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("NetworkSpec(name={:?}, depth={})", self.inner.name, self.inner.depth())
    }
}

#[pyclass(name = "PipelineTrace", module = "a3sim_py", frozen)]
struct PyPipelineTrace {
    inner: pipeline::PipelineTrace,
}

#[pymethods]
impl PyPipelineTrace {
    #[getter]
    fn total_cycles(&self) -> usize {
        self.inner.total_cycles
    }

    #[getter]
    fn overwrite_count(&self) -> usize {
        self.inner.overwrite_count
    }

    #[getter]
    fn stall_events(&self) -> usize {
        self.inner.stall_events
    }

    /// `(cycle, subject, action, layer)` tuples.
    fn events(&self) -> Vec<(usize, String, String, Option<usize>)> {
        self.inner
            .events
            .iter()
            .map(|e| {
                let layer = match &e.action {
                    pipeline::Action::Stall { layer } => Some(*layer),
                    a => a.compute_layer(),
                };
                (e.cycle, e.subject.to_string(), e.action.name().to_string(), layer)
            })
            .collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn verify(&self) -> PyResult<()> {
        pipeline::verify_trace(&self.inner).map_err(err)
    }

    fn throughput(&self, cycle_time: f64) -> f64 {
        pipeline::throughput(&self.inner, cycle_time, self.inner.batch_size)
    }
}

#[pyfunction]
#[pyo3(signature = (net, capacity, copies = 1, batches = 1, replication = 1))]
fn schedule(net: &PyNetworkSpec, capacity: usize, copies: usize, batches: usize, replication: usize) -> PyResult<PyPipelineTrace> {
    let costs = netspec::layer_costs(&net.inner, &CrossbarGeometry::default(), replication, StorageMode::Single);
    let config = pipeline::ScheduleConfig {
        capacity,
        copies,
        batches,
    };
    Ok(PyPipelineTrace {
        inner: pipeline::schedule(&net.inner, &costs, &config).map_err(err)?,
    })
}

#[pyclass(name = "HardwareConfig", module = "a3sim_py", frozen)]
struct PyHardwareConfig {
    inner: hwmodel::HardwareConfig,
}

#[pymethods]
impl PyHardwareConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let design: DesignPoint = name.parse().map_err(err)?;
        Ok(Self {
            inner: hwmodel::preset(design),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: hwmodel::HardwareConfig::from_json(text).map_err(err)?,
        })
    }

    /// Derives a design point from the baseline catalog.
    #[staticmethod]
    fn derive(budget: &str, mode: &str) -> PyResult<Self> {
        let budget = match budget {
            "same_power" => Budget::SamePower,
            "same_area" => Budget::SameArea,
            other => return Err(PyValueError::new_err(format!("budget must be 'same_power' or 'same_area', got {other:?}"))),
        };
        let inner = hwmodel::derive_design_point(&hwmodel::baseline_catalog(), &hwmodel::reduced_buffers(), budget, storage(mode)?)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn design_point(&self) -> String {
        self.inner.design_point.to_string()
    }

    #[getter]
    fn bundles(&self) -> u64 {
        self.inner.bundles()
    }

    #[getter]
    fn total_power(&self) -> f64 {
        hwmodel::total_power(&self.inner)
    }

    #[getter]
    fn total_area(&self) -> f64 {
        hwmodel::total_area(&self.inner)
    }

    #[getter]
    fn effective_capacity(&self) -> usize {
        hwmodel::effective_capacity(&self.inner)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// Schedules `net` on `hw` and returns its metrics dict.
#[pyfunction]
#[pyo3(signature = (net, hw, copies = 1, batches = 1, replication = 1))]
fn evaluate<'py>(
    py: Python<'py>,
    net: &PyNetworkSpec,
    hw: &PyHardwareConfig,
    copies: usize,
    batches: usize,
    replication: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = EvalOptions {
        replication,
        copies,
        batches,
        ..EvalOptions::default()
    };
    let base = hwmodel::evaluate(&net.inner, &hwmodel::baseline_catalog(), &opts, None).map_err(err)?.1;
    let (_, m) = hwmodel::evaluate(&net.inner, &hw.inner, &opts, Some(base.runtime_s)).map_err(err)?;
    to_py(py, &m)
}

/// Symmetric quantization; returns `(ints, scale)`.
#[pyfunction]
fn quantize(values: Vec<f64>, bits: u32) -> PyResult<(Vec<i64>, f64)> {
    let n = values.len();
    let q = crossbar::quantize(&values, &[n], bits).map_err(err)?;
    Ok((q.values, q.scale))
}

#[pyclass(name = "ProgrammedArray", module = "a3sim_py", frozen)]
struct PyProgrammedArray {
    inner: crossbar::ProgrammedArray,
}

#[pymethods]
impl PyProgrammedArray {
    /// Programs an integer weight matrix (rows of equal length).
    #[new]
    #[pyo3(signature = (weights, mode = "dual", cell_bits = 4, cells_per_weight = 2, adc_bits = 8, dac_bits = 1))]
    fn new(
        weights: Vec<Vec<i64>>,
        mode: &str,
        cell_bits: u32,
        cells_per_weight: u32,
        adc_bits: u32,
        dac_bits: u32,
    ) -> PyResult<Self> {
        let rows = weights.len();
        let cols = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("weight rows must have equal length"));
        }
        let geom = CrossbarGeometry {
            cell_bits,
            cells_per_weight,
            adc_bits,
            dac_bits,
            ..CrossbarGeometry::default()
        };
        let bits = geom.weight_bits().max(2);
        let q = crossbar::QuantizedTensor::from_ints(vec![rows, cols], weights.concat(), 1.0, bits).map_err(err)?;
        Ok(Self {
            inner: crossbar::ProgrammedArray::program(&q, &geom, storage(mode)?).map_err(err)?,
        })
    }

    /// Bit-serial MVM of signed integer inputs of width `bits`.
    #[pyo3(signature = (inputs, bits = 16))]
    fn mvm(&self, inputs: Vec<i64>, bits: u32) -> PyResult<Vec<i64>> {
        let n = inputs.len();
        let x = crossbar::QuantizedTensor::from_ints(vec![n], inputs, 1.0, bits).map_err(err)?;
        Ok(crossbar::mvm(&self.inner, &x).map_err(err)?.values)
    }

    fn reconstruct(&self) -> Vec<i64> {
        self.inner.reconstruct()
    }

    fn hex_dump(&self) -> String {
        self.inner.hex_dump()
    }
}

/// Trains a mask against `net` with seeded random weights.
///
/// Returns a list of per-iteration dicts (`loss`, `misclassified`, ...).
#[pyfunction]
#[pyo3(signature = (net, inputs, seed = 0, quantized = false, iterations = None))]
fn train<'py>(
    py: Python<'py>,
    net: &PyNetworkSpec,
    inputs: Vec<Vec<f64>>,
    seed: u64,
    quantized: bool,
    iterations: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let weights = attacknet::WeightSet::random(&net.inner, seed);
    let mut attack = net.inner.attack.clone();
    if let Some(n) = iterations {
        attack.iterations = n;
    }
    let log = if quantized {
        QuantizedNet::program(&net.inner, &weights, &CrossbarGeometry::default(), StorageMode::Single, 16)
            .and_then(|q| q.train(&inputs, &attack))
    } else {
        attacknet::train(&net.inner, &weights, &inputs, &attack)
    }
    .map_err(err)?;
    to_py(py, &log.records)
}

#[pymodule]
fn a3sim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetworkSpec>()?;
    m.add_class::<PyPipelineTrace>()?;
    m.add_class::<PyHardwareConfig>()?;
    m.add_class::<PyProgrammedArray>()?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
