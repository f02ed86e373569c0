//! The `a3sim` command-line front end.
//!
//! Exit status: 0 on success, 1 when a simulation or validation step fails,
//! 2 for usage and I/O errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attacknet::{self, AttackError, QuantizedNet, TrainLog, WeightSet};
use crate::crossbar::{CrossbarGeometry, StorageMode};
use crate::hwmodel::{self, DesignPoint, EvalOptions, HardwareConfig, HwError, MetricsReport};
use crate::netspec::{self, analyze, attack_buffer, cnn_durations, LayerKind, NetSpecError, NetworkSpec};
use crate::pipeline::{throughput, PipelineTrace};
use crate::report::{digest, fmt_sig, json_report, sha256_hex, CsvTable};
use crate::tensor::{save_tensor_file, Tensor, TensorFileError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    TensorFile { path: PathBuf, source: TensorFileError },
    #[error("{0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Simulation(_) => 1,
            _ => 2,
        }
    }
}

impl From<NetSpecError> for CliError {
    fn from(e: NetSpecError) -> Self {
        match e {
            NetSpecError::Syntax { .. } => CliError::Usage(format!("network config: {e}")),
            other => CliError::Simulation(format!("network config: {other}")),
        }
    }
}

impl From<HwError> for CliError {
    fn from(e: HwError) -> Self {
        match e {
            HwError::Syntax { .. } | HwError::UnknownPreset(_) => CliError::Usage(e.to_string()),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        CliError::Simulation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "a3sim", version, about = "AttackNet accelerator simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crossbar and buffer requirements for CNN training vs AttackNet.
    Analyze(CommonArgs),
    /// Cycle-level trace and metrics on one hardware config.
    Schedule(ScheduleArgs),
    /// Side-by-side metrics for several design points, normalised to the baseline.
    Compare(CompareArgs),
    /// Functional AttackNet training run.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Network config path or preset name.
    #[arg(long)]
    pub net: String,
    /// Copies of each logical weight matrix.
    #[arg(long, default_value_t = 1)]
    pub replication: usize,
    /// Output directory; reports go to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Hardware preset (baseline, a3p, a3r, a3px, a3rx) or catalog path.
    #[arg(long, default_value = "baseline")]
    pub hw: String,
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    /// Overrides the config's effective crossbar capacity.
    #[arg(long)]
    pub capacity: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Design points (preset names or catalog paths), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "baseline,a3p,a3r,a3px,a3rx")]
    pub design: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Hardware preset or catalog; selects the storage mode for --quantized.
    #[arg(long, default_value = "baseline")]
    pub hw: String,
    /// Weight tensor file (one record per layer); random weights when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Clean input tensor file (one record per image); random inputs when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Run FP and EP through programmed crossbars.
    #[arg(long)]
    pub quantized: bool,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    net: &'a str,
    net_sha256: String,
    hw: Option<&'a str>,
    designs: Vec<String>,
    replication: usize,
    copies: usize,
    batches: usize,
    capacity: Option<usize>,
    format: Format,
    quantized: bool,
    seed: u64,
    weights_sha256: Option<String>,
    input_sha256: Option<String>,
}

impl<'a> RunManifest<'a> {
    fn new(command: &'a str, common: &'a CommonArgs, net: &NetworkSpec) -> Self {
        Self {
            command,
            net: &common.net,
            net_sha256: sha256_hex(net.emit().as_bytes()),
            hw: None,
            designs: Vec::new(),
            replication: common.replication,
            copies: 1,
            batches: 1,
            capacity: None,
            format: common.format,
            quantized: false,
            seed: common.seed,
            weights_sha256: None,
            input_sha256: None,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Schedule(a) => cmd_schedule(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Train(a) => cmd_train(&a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn looks_like_path(s: &str) -> bool {
    s.contains('/') || s.contains('\\') || s.ends_with(".json")
}

pub fn load_network(spec: &str) -> Result<NetworkSpec, CliError> {
    let path = Path::new(spec);
    if path.is_file() || looks_like_path(spec) {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| CliError::Usage(format!("{spec}: not UTF-8")))?;
        return parse_net(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{spec}: {m}")),
            CliError::Simulation(m) => CliError::Simulation(format!("{spec}: {m}")),
            other => other,
        });
    }
    netspec::preset(spec).ok_or_else(|| {
        let names: Vec<_> = netspec::preset_names().collect();
        CliError::Usage(format!(
            "{spec}: no such file or network preset (presets: {})",
            names.join(", ")
        ))
    })
}

fn parse_net(text: &str) -> Result<NetworkSpec, CliError> {
    Ok(netspec::parse_network(text)?)
}

pub fn load_hardware(spec: &str) -> Result<HardwareConfig, CliError> {
    let path = Path::new(spec);
    if path.is_file() || looks_like_path(spec) {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| CliError::Usage(format!("{spec}: not UTF-8")))?;
        return HardwareConfig::from_json(&text).map_err(|e| match CliError::from(e) {
            CliError::Usage(m) => CliError::Usage(format!("{spec}: {m}")),
            CliError::Simulation(m) => CliError::Simulation(format!("{spec}: {m}")),
            other => other,
        });
    }
    Ok(hwmodel::preset(spec.parse::<DesignPoint>()?))
}

/// Writes `content` to `dir/name`, or prints it when no directory is given.
fn emit(out: Option<&Path>, name: &str, content: &str) -> Result<(), CliError> {
    match out {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(dir) => {
            let io = |source| CliError::Io {
                path: dir.to_path_buf(),
                source,
            };
            fs::create_dir_all(dir).map_err(io)?;
            let path = dir.join(name);
            fs::write(&path, content).map_err(|source| CliError::Io { path, source })
        }
    }
}

fn check_positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        Err(CliError::Usage(format!("--{name} must be >= 1")))
    } else {
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct LayerRow {
    layer: usize,
    kind: &'static str,
    input: String,
    output: String,
    activations: usize,
    weights: usize,
    crossbars_dual: usize,
    crossbars_single: usize,
    cnn_duration: usize,
    cnn_buffer_bytes: u64,
    relu_bitmap_bits: usize,
    pool_index_bits: usize,
}

#[derive(Debug, Serialize)]
struct AnalyzeReport {
    network: String,
    depth: usize,
    replication: usize,
    layers: Vec<LayerRow>,
    crossbars_dual: usize,
    crossbars_single: usize,
    buffer_bytes_cnn: u64,
    buffer_bytes_attack: u64,
    attack_breakdown: netspec::AttackBuffer,
    attack_to_cnn_ratio: f64,
}

fn analyze_report(net: &NetworkSpec, replication: usize) -> AnalyzeReport {
    let geom = CrossbarGeometry::default();
    let dual = analyze(net, &geom, replication, StorageMode::Dual);
    let single = analyze(net, &geom, replication, StorageMode::Single);
    let durations = cnn_durations(net);
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerRow {
            layer: i + 1,
            kind: match l.kind {
                LayerKind::Conv => "conv",
                LayerKind::FullyConnected => "fc",
            },
            input: l.input.to_string(),
            output: l.output().to_string(),
            activations: l.activation_count(),
            weights: l.weight_count(),
            crossbars_dual: dual.per_layer_crossbars[i],
            crossbars_single: single.per_layer_crossbars[i],
            cnn_duration: durations[i],
            cnn_buffer_bytes: l.output_count() as u64 * durations[i] as u64 * netspec::NEURON_BYTES,
            relu_bitmap_bits: if l.relu { l.activation_count() } else { 0 },
            pool_index_bits: if l.pool == Some(netspec::PoolKind::Max) {
                l.output_count() * netspec::POOL_INDEX_BITS as usize
            } else {
                0
            },
        })
        .collect();
    AnalyzeReport {
        network: net.name.clone(),
        depth: net.depth(),
        replication,
        layers,
        crossbars_dual: dual.total_crossbars,
        crossbars_single: single.total_crossbars,
        buffer_bytes_cnn: dual.buffer_bytes_cnn,
        buffer_bytes_attack: dual.buffer_bytes_attack,
        attack_breakdown: attack_buffer(net),
        attack_to_cnn_ratio: dual.ratio,
    }
}

pub fn cmd_analyze(args: &CommonArgs) -> Result<(), CliError> {
    check_positive("replication", args.replication)?;
    let net = load_network(&args.net)?;
    let manifest = RunManifest::new("analyze", args, &net);
    let d = digest(&manifest);
    let report = analyze_report(&net, args.replication);
    let out = args.out.as_deref();
    match args.format {
        Format::Json => emit(out, "analysis.json", &json_report(&report, &d)),
        Format::Csv => {
            let mut t = CsvTable::new(&[
                "layer",
                "kind",
                "input",
                "output",
                "activations",
                "weights",
                "crossbars_dual",
                "crossbars_single",
                "cnn_duration",
                "cnn_buffer_bytes",
                "relu_bitmap_bits",
                "pool_index_bits",
            ]);
            for r in &report.layers {
                t.push(vec![
                    r.layer.to_string(),
                    r.kind.into(),
                    r.input.clone(),
                    r.output.clone(),
                    r.activations.to_string(),
                    r.weights.to_string(),
                    r.crossbars_dual.to_string(),
                    r.crossbars_single.to_string(),
                    r.cnn_duration.to_string(),
                    r.cnn_buffer_bytes.to_string(),
                    r.relu_bitmap_bits.to_string(),
                    r.pool_index_bits.to_string(),
                ]);
            }
            let mut s = t.render(&d);
            s.push_str(&format!(
                "# totals: crossbars_dual={} crossbars_single={} buffer_bytes_cnn={} buffer_bytes_attack={} attack_to_cnn_ratio={}\n",
                report.crossbars_dual,
                report.crossbars_single,
                report.buffer_bytes_cnn,
                report.buffer_bytes_attack,
                fmt_sig(report.attack_to_cnn_ratio)
            ));
            emit(out, "analysis.csv", &s)
        }
    }
}

#[derive(Debug, Serialize)]
struct ScheduleSummary<'a> {
    network: &'a str,
    capacity: usize,
    copies: usize,
    batches: usize,
    batch_size: usize,
    layer_costs: &'a [usize],
    initial_resident: &'a [usize],
    throughput_images_per_s: f64,
    metrics: &'a MetricsReport,
}

fn metrics_rows(m: &MetricsReport) -> Vec<(&'static str, String)> {
    let e = &m.energy_breakdown;
    vec![
        ("design_point", m.design_point.to_string()),
        ("storage_mode", m.storage_mode.to_string()),
        ("bundles", m.bundles.to_string()),
        ("effective_capacity", m.effective_capacity.to_string()),
        ("total_power_w", fmt_sig(m.total_power)),
        ("total_area_mm2", fmt_sig(m.total_area)),
        ("total_cycles", m.total_cycles.to_string()),
        ("runtime_s", fmt_sig(m.runtime_s)),
        ("ops", m.ops.to_string()),
        ("pe_gops_per_w", fmt_sig(m.pe)),
        ("ce_gops_per_s_mm2", fmt_sig(m.ce)),
        ("overwrite_count", m.overwrite_count.to_string()),
        ("stall_events", m.stall_events.to_string()),
        ("energy_adc_j", fmt_sig(e.adc)),
        ("energy_dac_j", fmt_sig(e.dac)),
        ("energy_buffer_j", fmt_sig(e.buffer)),
        ("energy_crossbar_j", fmt_sig(e.crossbar)),
        ("energy_others_j", fmt_sig(e.others)),
        ("energy_total_j", fmt_sig(m.total_energy)),
        ("speedup_vs_baseline", fmt_sig(m.speedup_vs_baseline)),
    ]
}

fn trace_csv(trace: &PipelineTrace, d: &str) -> String {
    format!("# manifest_sha256={d}\n{}", trace.to_csv())
}

pub fn cmd_schedule(args: &ScheduleArgs) -> Result<(), CliError> {
    let c = &args.common;
    check_positive("replication", c.replication)?;
    check_positive("copies", args.copies)?;
    check_positive("batches", args.batches)?;
    let net = load_network(&c.net)?;
    let hw = load_hardware(&args.hw)?;
    let mut manifest = RunManifest::new("schedule", c, &net);
    manifest.hw = Some(&args.hw);
    manifest.copies = args.copies;
    manifest.batches = args.batches;
    manifest.capacity = args.capacity;
    let d = digest(&manifest);
    let opts = EvalOptions {
        replication: c.replication,
        copies: args.copies,
        batches: args.batches,
        capacity: args.capacity,
        ..EvalOptions::default()
    };
    let (trace, metrics) = hwmodel::evaluate(&net, &hw, &opts, None)?;
    let out = c.out.as_deref();
    let summary = ScheduleSummary {
        network: &net.name,
        capacity: trace.config.capacity,
        copies: trace.config.copies,
        batches: trace.batches(),
        batch_size: trace.batch_size,
        layer_costs: &trace.layer_costs,
        initial_resident: &trace.initial_resident,
        throughput_images_per_s: throughput(&trace, hw.cycle_time, net.batch_size),
        metrics: &metrics,
    };
    emit(out, "trace.csv", &trace_csv(&trace, &d))?;
    if out.is_none() {
        println!();
    }
    match c.format {
        Format::Json => emit(out, "metrics.json", &json_report(&summary, &d)),
        Format::Csv => {
            let mut t = CsvTable::new(&["metric", "value"]);
            t.push(vec!["capacity".into(), summary.capacity.to_string()]);
            t.push(vec!["copies".into(), summary.copies.to_string()]);
            t.push(vec!["batches".into(), summary.batches.to_string()]);
            t.push(vec![
                "throughput_images_per_s".into(),
                fmt_sig(summary.throughput_images_per_s),
            ]);
            for (k, v) in metrics_rows(&metrics) {
                t.push(vec![k.into(), v]);
            }
            emit(out, "metrics.csv", &t.render(&d))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub design: String,
    pub metrics: MetricsReport,
    pub pe_normalized: f64,
    pub ce_normalized: f64,
    /// Overwrites relative to the baseline; 1 when both are zero.
    pub overwrite_ratio: f64,
    pub energy_normalized: f64,
    pub adc_dac_share: f64,
}

/// Evaluates each design point (in parallel) and normalises to the baseline.
pub fn compare_designs(
    net: &NetworkSpec,
    designs: &[(String, HardwareConfig)],
    opts: &EvalOptions,
) -> Result<Vec<CompareRow>, CliError> {
    let baseline = hwmodel::preset(DesignPoint::Baseline);
    let (_, base) = hwmodel::evaluate(net, &baseline, opts, None)?;
    let results: Vec<Result<(String, MetricsReport, PipelineTrace), HwError>> = designs
        .par_iter()
        .map(|(name, cfg)| {
            let (trace, m) = hwmodel::evaluate(net, cfg, opts, Some(base.runtime_s))?;
            Ok((name.clone(), m, trace))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let (design, metrics, _) = r?;
        let overwrite_ratio = match (metrics.overwrite_count, base.overwrite_count) {
            (0, 0) => 1.0,
            (o, b) => o as f64 / b as f64,
        };
        rows.push(CompareRow {
            design,
            pe_normalized: metrics.pe / base.pe,
            ce_normalized: metrics.ce / base.ce,
            overwrite_ratio,
            energy_normalized: metrics.total_energy / base.total_energy,
            adc_dac_share: metrics.energy_breakdown.converter_share(),
            metrics,
        });
    }
    Ok(rows)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let c = &args.common;
    check_positive("replication", c.replication)?;
    check_positive("copies", args.copies)?;
    check_positive("batches", args.batches)?;
    if args.design.len() < 2 {
        return Err(CliError::Usage("compare needs at least two design points".into()));
    }
    let net = load_network(&c.net)?;
    let designs = args
        .design
        .iter()
        .map(|d| Ok((d.clone(), load_hardware(d)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut manifest = RunManifest::new("compare", c, &net);
    manifest.designs = args.design.clone();
    manifest.copies = args.copies;
    manifest.batches = args.batches;
    let d = digest(&manifest);
    let opts = EvalOptions {
        replication: c.replication,
        copies: args.copies,
        batches: args.batches,
        ..EvalOptions::default()
    };
    let rows = compare_designs(&net, &designs, &opts)?;
    let out = c.out.as_deref();
    match c.format {
        Format::Json => emit(out, "compare.json", &json_report(&serde_json::json!({ "network": net.name, "rows": rows }), &d)),
        Format::Csv => {
            let mut t = CsvTable::new(&[
                "design",
                "storage_mode",
                "bundles",
                "effective_capacity",
                "total_cycles",
                "speedup",
                "pe_gops_per_w",
                "ce_gops_per_s_mm2",
                "pe_normalized",
                "ce_normalized",
                "overwrite_count",
                "overwrite_ratio",
                "energy_adc_j",
                "energy_dac_j",
                "energy_buffer_j",
                "energy_crossbar_j",
                "energy_others_j",
                "energy_total_j",
                "energy_normalized",
                "adc_dac_share",
            ]);
            for r in &rows {
                let m = &r.metrics;
                let e = &m.energy_breakdown;
                t.push(vec![
                    r.design.clone(),
                    m.storage_mode.to_string(),
                    m.bundles.to_string(),
                    m.effective_capacity.to_string(),
                    m.total_cycles.to_string(),
                    fmt_sig(m.speedup_vs_baseline),
                    fmt_sig(m.pe),
                    fmt_sig(m.ce),
                    fmt_sig(r.pe_normalized),
                    fmt_sig(r.ce_normalized),
                    m.overwrite_count.to_string(),
                    fmt_sig(r.overwrite_ratio),
                    fmt_sig(e.adc),
                    fmt_sig(e.dac),
                    fmt_sig(e.buffer),
                    fmt_sig(e.crossbar),
                    fmt_sig(e.others),
                    fmt_sig(m.total_energy),
                    fmt_sig(r.energy_normalized),
                    fmt_sig(r.adc_dac_share),
                ]);
            }
            emit(out, "compare.csv", &t.render(&d))
        }
    }
}

fn load_tensors(path: &Path) -> Result<(Vec<Tensor>, String), CliError> {
    let bytes = read(path)?;
    let tensors = crate::tensor::read_tensors(&bytes[..]).map_err(|source| CliError::TensorFile {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((tensors, sha256_hex(&bytes)))
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    network: &'a str,
    datapath: &'static str,
    images: usize,
    weights_sha256: String,
    first_success: Option<usize>,
    final_mask_norm: f64,
    log: &'a TrainLog,
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let c = &args.common;
    let net = load_network(&c.net)?;
    let mut manifest = RunManifest::new("train", c, &net);
    manifest.hw = Some(&args.hw);
    manifest.quantized = args.quantized;

    let weights = match &args.weights {
        Some(p) => {
            let (t, h) = load_tensors(p)?;
            manifest.weights_sha256 = Some(h);
            WeightSet::from_tensors(&net, t).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => WeightSet::random(&net, c.seed),
    };
    let inputs: Vec<Vec<f64>> = match &args.input {
        Some(p) => {
            let (t, h) = load_tensors(p)?;
            manifest.input_sha256 = Some(h);
            let n = net.input.count();
            if let Some(bad) = t.iter().find(|t| t.len() != n) {
                return Err(CliError::Usage(format!(
                    "{}: image has {} values, network input {} needs {n}",
                    p.display(),
                    bad.len(),
                    net.input
                )));
            }
            t.into_iter().map(|t| t.data).collect()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(1));
            (0..net.batch_size)
                .map(|_| (0..net.input.count()).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect()
        }
    };
    let d = digest(&manifest);

    let before = weights.digest();
    let log = if args.quantized {
        let hw = load_hardware(&args.hw)?;
        let q = QuantizedNet::program(&net, &weights, &CrossbarGeometry::default(), hw.storage_mode, 16)?;
        q.train(&inputs, &net.attack)?
    } else {
        attacknet::train(&net, &weights, &inputs, &net.attack)?
    };
    if weights.digest() != before {
        return Err(CliError::Simulation("weights changed during training".into()));
    }

    let out = c.out.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mask = Tensor::new(
            vec![net.input.h, net.input.w, net.input.c],
            log.final_mask.data.clone(),
        );
        let path = dir.join("mask.bin");
        save_tensor_file(&path, &[mask]).map_err(|source| CliError::Io { path, source })?;
    }
    let report = TrainReport {
        network: &net.name,
        datapath: if args.quantized { "crossbar" } else { "float" },
        images: inputs.len(),
        weights_sha256: before,
        first_success: log.first_success(),
        final_mask_norm: log.final_mask.norm_sq().sqrt(),
        log: &log,
    };
    match c.format {
        Format::Json => emit(out, "train_log.json", &json_report(&report, &d)),
        Format::Csv => {
            let mut t = CsvTable::new(&["iteration", "loss", "misclassified", "misclassified_rate", "mask_norm"]);
            for r in &log.records {
                t.push(vec![
                    r.iteration.to_string(),
                    fmt_sig(r.loss),
                    r.misclassified.to_string(),
                    fmt_sig(r.misclassified_rate),
                    fmt_sig(r.mask_norm),
                ]);
            }
            emit(out, "train_log.csv", &t.render(&d))
        }
    }
}
