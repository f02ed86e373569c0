//! Cycle-level AttackNet pipeline scheduler.
//!
//! A batch runs FP for every image (one layer per cycle, images one cycle
//! apart within a weight copy), initialises each image's output error, then
//! runs EP once on the accumulated batch error and finishes with the input
//! error and the mask update. Weights live in a finite crossbar pool; when
//! no image can make progress because its layer is not resident, one cycle
//! is spent programming the longest run of upcoming layers that fits.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::NetworkSpec;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("layer {layer} needs {cost} crossbars but each weight copy has only {capacity}")]
    Unschedulable { layer: usize, cost: usize, capacity: usize },
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
    #[error("trace check failed at cycle {cycle}: {message}")]
    InvalidTrace { cycle: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Crossbars available for weights (logical arrays).
    pub capacity: usize,
    /// Weight copies; the capacity is split evenly between them.
    pub copies: usize,
    pub batches: usize,
}

impl ScheduleConfig {
    pub fn per_copy_capacity(&self) -> usize {
        self.capacity / self.copies.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subject {
    System,
    Image { batch: usize, image: usize },
    Batch { batch: usize },
}

impl std::fmt::Display for Subject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Subject::System => f.write_str("system"),
            Subject::Image { batch, image } => write!(f, "batch{batch}/image{image}"),
            Subject::Batch { batch } => write!(f, "batch{batch}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    FpCompute { layer: usize },
    EpCompute { layer: usize },
    ErrorInit,
    Accumulate,
    /// `programmed` lists newly written layers; `resident` the full set
    /// afterwards.
    Program { programmed: Vec<usize>, resident: Vec<usize> },
    Stall { layer: usize },
    /// EP through layer 1, producing the input error.
    InputError { layer: usize },
    MaskUpdate,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::FpCompute { .. } => "fp_compute",
            Action::EpCompute { .. } => "ep_compute",
            Action::ErrorInit => "error_init",
            Action::Accumulate => "accumulate",
            Action::Program { .. } => "program",
            Action::Stall { .. } => "stall",
            Action::InputError { .. } => "input_error",
            Action::MaskUpdate => "mask_update",
        }
    }

    /// Layer whose weights the action reads, if it is a crossbar compute.
    pub fn compute_layer(&self) -> Option<usize> {
        match self {
            Action::FpCompute { layer } | Action::EpCompute { layer } | Action::InputError { layer } => Some(*layer),
            _ => None,
        }
    }

    fn layer(&self) -> Option<usize> {
        match self {
            Action::Stall { layer } => Some(*layer),
            other => other.compute_layer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub cycle: usize,
    pub subject: Subject,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub events: Vec<ScheduleEvent>,
    pub total_cycles: usize,
    pub overwrite_count: usize,
    pub stall_events: usize,
    /// First and last cycle of every batch, inclusive.
    pub batch_bounds: Vec<(usize, usize)>,
    /// Layers loaded before cycle 1 (not counted as an overwrite).
    pub initial_resident: Vec<usize>,
    pub layer_costs: Vec<usize>,
    pub config: ScheduleConfig,
    pub batch_size: usize,
}

impl PipelineTrace {
    pub fn batches(&self) -> usize {
        self.batch_bounds.len()
    }

    /// CSV with header `cycle,subject,action,layer,weights_programmed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,subject,action,layer,weights_programmed\n");
        for e in &self.events {
            let layer = e.action.layer().map(|l| l.to_string()).unwrap_or_default();
            let programmed = match &e.action {
                Action::Program { programmed, .. } => programmed
                    .iter()
                    .map(|l| format!("W{l}"))
                    .collect::<Vec<_>>()
                    .join(";"),
                _ => String::new(),
            };
            writeln!(out, "{},{},{},{},{}", e.cycle, e.subject, e.action.name(), layer, programmed).unwrap();
        }
        out
    }

    pub fn events_at(&self, cycle: usize) -> impl Iterator<Item = &ScheduleEvent> {
        self.events.iter().filter(move |e| e.cycle == cycle)
    }
}

/// Program events after the initial load.
pub fn overwrite_count(trace: &PipelineTrace) -> usize {
    trace
        .events
        .iter()
        .filter(|e| matches!(e.action, Action::Program { .. }))
        .count()
}

/// Images per second: `images * batches / (total_cycles * cycle_time)`.
pub fn throughput(trace: &PipelineTrace, cycle_time: f64, images: usize) -> f64 {
    (images * trace.batches()) as f64 / (trace.total_cycles as f64 * cycle_time)
}

/// Layer used at position `pos` of one batch's need sequence
/// `F1..FL, EL..E1`.
fn layer_at(depth: usize, pos: usize) -> usize {
    if pos < depth {
        pos + 1
    } else {
        2 * depth - pos
    }
}

struct Image {
    group: usize,
    /// Next FP layer index (0-based); `depth` once FP is done.
    next: usize,
    fp_done_at: Option<usize>,
    error_done: bool,
}

struct Scheduler<'a> {
    costs: &'a [usize],
    depth: usize,
    capacity: usize,
    batches: usize,
    resident: BTreeSet<usize>,
    events: Vec<ScheduleEvent>,
    cycle: usize,
    overwrites: usize,
    stalls: usize,
}

impl Scheduler<'_> {
    /// Longest run of upcoming needs, from `pos` in `batch`, whose distinct
    /// layers fit one weight copy.
    fn window(&self, batch: usize, pos: usize) -> BTreeSet<usize> {
        let mut set = BTreeSet::new();
        let mut used = 0;
        for b in batch..self.batches {
            let from = if b == batch { pos } else { 0 };
            for p in from..2 * self.depth {
                let layer = layer_at(self.depth, p);
                if set.contains(&layer) {
                    continue;
                }
                let cost = self.costs[layer - 1];
                if used + cost > self.capacity {
                    return set;
                }
                used += cost;
                set.insert(layer);
            }
        }
        set
    }

    fn emit(&mut self, subject: Subject, action: Action) {
        self.events.push(ScheduleEvent {
            cycle: self.cycle,
            subject,
            action,
        });
    }

    fn program(&mut self, batch: usize, pos: usize) {
        let next = self.window(batch, pos);
        let programmed = next.difference(&self.resident).copied().collect();
        let resident = next.iter().copied().collect();
        self.emit(Subject::System, Action::Program { programmed, resident });
        self.resident = next;
        self.overwrites += 1;
    }

    fn run_batch(&mut self, b: usize, batch_size: usize, copies: usize) {
        let depth = self.depth;
        let label = b + 1;
        let mut images: Vec<Image> = (0..batch_size)
            .map(|i| Image {
                group: i % copies,
                next: 0,
                fp_done_at: None,
                error_done: false,
            })
            .collect();

        while images.iter().any(|im| !im.error_done) {
            self.cycle += 1;
            let mut busy = BTreeSet::new();
            let mut computes = Vec::new();
            let mut missing = false;
            for (i, im) in images.iter().enumerate() {
                if im.next == depth {
                    continue;
                }
                let layer = im.next + 1;
                if !self.resident.contains(&layer) {
                    missing = true;
                } else if busy.insert((im.group, layer)) {
                    computes.push(i);
                }
            }
            if computes.is_empty() && missing {
                let pos = images.iter().map(|im| im.next).min().unwrap_or(0);
                self.program(b, pos);
            } else {
                for i in 0..images.len() {
                    let im = &images[i];
                    if im.next == depth {
                        continue;
                    }
                    let subject = Subject::Image {
                        batch: label,
                        image: i + 1,
                    };
                    let layer = im.next + 1;
                    if computes.contains(&i) {
                        self.emit(subject, Action::FpCompute { layer });
                        let im = &mut images[i];
                        im.next += 1;
                        if im.next == depth {
                            im.fp_done_at = Some(self.cycle);
                        }
                    } else if im.next > 0 {
                        self.emit(subject, Action::Stall { layer });
                        self.stalls += 1;
                    }
                }
            }
            let mut groups_done = BTreeSet::new();
            for i in 0..images.len() {
                let im = &images[i];
                let ready = im.fp_done_at.is_some_and(|c| c < self.cycle);
                if ready && !im.error_done && groups_done.insert(im.group) {
                    images[i].error_done = true;
                    self.emit(
                        Subject::Image {
                            batch: label,
                            image: i + 1,
                        },
                        Action::ErrorInit,
                    );
                }
            }
            if !groups_done.is_empty() && images.iter().all(|im| im.error_done) {
                self.emit(Subject::Batch { batch: label }, Action::Accumulate);
            }
        }

        for pos in depth..2 * depth {
            let layer = layer_at(depth, pos);
            loop {
                self.cycle += 1;
                if self.resident.contains(&layer) {
                    let action = if layer == 1 {
                        Action::InputError { layer }
                    } else {
                        Action::EpCompute { layer }
                    };
                    self.emit(Subject::Batch { batch: label }, action);
                    break;
                }
                self.program(b, pos);
            }
        }
        self.cycle += 1;
        self.emit(Subject::Batch { batch: label }, Action::MaskUpdate);
    }
}

/// Schedules `config.batches` batches of `net.batch_size` images.
///
/// `costs[l]` is the crossbar cost of layer `l + 1`, in the same units as
/// `config.capacity`.
pub fn schedule(net: &NetworkSpec, costs: &[usize], config: &ScheduleConfig) -> Result<PipelineTrace, PipelineError> {
    schedule_layers(costs, net.batch_size, config)
}

/// [`schedule`] on bare layer costs.
pub fn schedule_layers(costs: &[usize], batch_size: usize, config: &ScheduleConfig) -> Result<PipelineTrace, PipelineError> {
    if costs.is_empty() {
        return Err(PipelineError::InvalidConfig("network has no layers".into()));
    }
    if config.copies == 0 || config.batches == 0 || batch_size == 0 {
        return Err(PipelineError::InvalidConfig(
            "copies, batches and batch size must be >= 1".into(),
        ));
    }
    let capacity = config.per_copy_capacity();
    for (i, &cost) in costs.iter().enumerate() {
        if cost > capacity {
            return Err(PipelineError::Unschedulable {
                layer: i + 1,
                cost,
                capacity,
            });
        }
    }
    let mut s = Scheduler {
        costs,
        depth: costs.len(),
        capacity,
        batches: config.batches,
        resident: BTreeSet::new(),
        events: Vec::new(),
        cycle: 0,
        overwrites: 0,
        stalls: 0,
    };
    s.resident = s.window(0, 0);
    let initial_resident = s.resident.iter().copied().collect();
    let mut batch_bounds = Vec::with_capacity(config.batches);
    for b in 0..config.batches {
        let start = s.cycle + 1;
        s.run_batch(b, batch_size, config.copies);
        batch_bounds.push((start, s.cycle));
    }
    Ok(PipelineTrace {
        total_cycles: s.cycle,
        overwrite_count: s.overwrites,
        stall_events: s.stalls,
        events: s.events,
        batch_bounds,
        initial_resident,
        layer_costs: costs.to_vec(),
        config: *config,
        batch_size,
    })
}

/// Replays a trace and checks residency, capacity, program exclusivity,
/// overwrite legality and per-image layer order.
pub fn verify_trace(trace: &PipelineTrace) -> Result<(), PipelineError> {
    let fail = |cycle: usize, message: String| Err(PipelineError::InvalidTrace { cycle, message });
    let depth = trace.layer_costs.len();
    let capacity = trace.config.per_copy_capacity();
    let copies = trace.config.copies.max(1);
    let cost = |set: &BTreeSet<usize>| set.iter().map(|l| trace.layer_costs[l - 1]).sum::<usize>();

    let mut resident: BTreeSet<usize> = trace.initial_resident.iter().copied().collect();
    if cost(&resident) > capacity {
        return fail(0, "initial load exceeds capacity".into());
    }
    // Per resident layer: FP users in the current batch and batch-level EP use,
    // both since the layer was last programmed.
    let mut fp_users: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); depth + 1];
    let mut ep_used = vec![false; depth + 1];
    let mut next_layer = vec![1usize; trace.batch_size + 1];
    let mut current_batch = 0;
    let mut last_cycle = 0;
    let mut i = 0;
    while i < trace.events.len() {
        let cycle = trace.events[i].cycle;
        if cycle < 1 || cycle < last_cycle {
            return fail(cycle, "events out of order".into());
        }
        let mut j = i;
        while j < trace.events.len() && trace.events[j].cycle == cycle {
            j += 1;
        }
        let group = &trace.events[i..j];
        let programs = group.iter().filter(|e| matches!(e.action, Action::Program { .. })).count();
        let computes = group.iter().filter(|e| e.action.compute_layer().is_some()).count();
        if programs > 1 {
            return fail(cycle, "more than one program event".into());
        }
        if programs == 1 && computes > 0 {
            return fail(cycle, "crossbar compute during a program cycle".into());
        }
        let mut busy = BTreeSet::new();
        for e in group {
            let batch = match e.subject {
                Subject::Image { batch, .. } | Subject::Batch { batch } => batch,
                Subject::System => current_batch,
            };
            if batch != current_batch {
                if batch != current_batch + 1 {
                    return fail(cycle, format!("batch {batch} starts out of order"));
                }
                current_batch = batch;
                fp_users.iter_mut().for_each(BTreeSet::clear);
                ep_used.iter_mut().for_each(|u| *u = false);
                next_layer.iter_mut().for_each(|n| *n = 1);
            }
            if let Some(layer) = e.action.compute_layer() {
                if !resident.contains(&layer) {
                    return fail(cycle, format!("{} uses non-resident W{layer}", e.subject));
                }
            }
            match (&e.action, e.subject) {
                (Action::FpCompute { layer }, Subject::Image { image, .. }) => {
                    if next_layer[image] != *layer {
                        return fail(cycle, format!("{} skipped to layer {layer}", e.subject));
                    }
                    if !busy.insert(((image - 1) % copies, *layer)) {
                        return fail(cycle, format!("two images share W{layer} of one copy"));
                    }
                    next_layer[image] += 1;
                    fp_users[*layer].insert(image);
                }
                (Action::EpCompute { layer } | Action::InputError { layer }, _) => ep_used[*layer] = true,
                (Action::Program { resident: next, .. }, _) => {
                    let next: BTreeSet<usize> = next.iter().copied().collect();
                    if cost(&next) > capacity {
                        return fail(cycle, "programmed set exceeds capacity".into());
                    }
                    for &evicted in resident.difference(&next) {
                        if fp_users[evicted].len() < trace.batch_size && !ep_used[evicted] {
                            return fail(cycle, format!("W{evicted} evicted before the last image used it"));
                        }
                    }
                    for &l in next.difference(&resident) {
                        fp_users[l].clear();
                        ep_used[l] = false;
                    }
                    resident = next;
                }
                _ => {}
            }
        }
        last_cycle = cycle;
        i = j;
    }
    if last_cycle != trace.total_cycles {
        return fail(last_cycle, format!("total_cycles {} disagrees with events", trace.total_cycles));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(costs: &[usize], batch: usize, capacity: usize, copies: usize, batches: usize) -> PipelineTrace {
        let t = schedule_layers(
            costs,
            batch,
            &ScheduleConfig {
                capacity,
                copies,
                batches,
            },
        )
        .unwrap();
        verify_trace(&t).unwrap();
        t
    }

    fn has(t: &PipelineTrace, cycle: usize, subject: &str, action: &str) -> bool {
        t.events_at(cycle)
            .any(|e| e.subject.to_string() == subject && e.action.name() == action)
    }

    #[test]
    fn example_schedule_checkpoints() {
        let t = run(&[2, 2, 2, 1], 3, 4, 1, 1);
        assert_eq!(t.total_cycles, 16);
        assert_eq!(t.initial_resident, vec![1, 2]);
        assert!(has(&t, 5, "system", "program"));
        assert!(has(&t, 8, "batch1/image1", "error_init"));
        assert!(has(&t, 9, "batch1/image2", "error_init"));
        assert!(has(&t, 10, "batch1/image3", "error_init"));
        assert!(has(&t, 10, "batch1", "accumulate"));
        assert!(has(&t, 11, "batch1", "ep_compute"));
        assert!(has(&t, 12, "batch1", "ep_compute"));
        assert!(has(&t, 13, "system", "program"));
        assert!(has(&t, 14, "batch1", "ep_compute"));
        assert!(has(&t, 15, "batch1", "input_error"));
        assert!(has(&t, 16, "batch1", "mask_update"));
        assert_eq!(overwrite_count(&t), 2);
        assert!(has(&t, 3, "batch1/image1", "stall"));
        assert!(has(&t, 4, "batch1/image1", "stall"));
        assert!(has(&t, 4, "batch1/image2", "stall"));
    }

    #[test]
    fn full_capacity_and_copies() {
        let full = run(&[2, 2, 2, 1], 3, 7, 1, 1);
        assert_eq!(full.total_cycles, 12);
        assert_eq!(full.overwrite_count, 0);
        assert_eq!(full.stall_events, 0);
        let three = run(&[2, 2, 2, 1], 3, 21, 3, 1);
        assert_eq!(three.total_cycles, 10);
        assert!(throughput(&three, 50.88e-9, 3) > throughput(&full, 50.88e-9, 3));
    }

    #[test]
    fn minimal_schedule() {
        let t = run(&[1], 1, 1, 1, 1);
        assert_eq!(t.total_cycles, 4);
        let actions: Vec<_> = t.events.iter().map(|e| e.action.name()).collect();
        assert_eq!(
            actions,
            ["fp_compute", "error_init", "accumulate", "input_error", "mask_update"]
        );
    }

    #[test]
    fn batches_compose() {
        let one = run(&[2, 2, 2, 1], 3, 4, 1, 1);
        for k in 2..5 {
            let t = run(&[2, 2, 2, 1], 3, 4, 1, k);
            assert_eq!(t.total_cycles, k * one.total_cycles);
            assert_eq!(t.overwrite_count, k * one.overwrite_count);
        }
    }

    #[test]
    fn undersized_pool_is_rejected() {
        let err = schedule_layers(&[2, 5, 1], 2, &ScheduleConfig { capacity: 4, copies: 1, batches: 1 }).unwrap_err();
        assert_eq!(
            err,
            PipelineError::Unschedulable {
                layer: 2,
                cost: 5,
                capacity: 4
            }
        );
    }

    #[test]
    fn throughput_arithmetic() {
        let t = run(&[2, 2, 2, 1], 3, 4, 1, 1);
        let tp = throughput(&t, 50.88e-9, 3);
        assert!((tp - 3.0 / (16.0 * 50.88e-9)).abs() < 1e-6 * tp);
        assert!((throughput(&t, 2.0 * 50.88e-9, 3) - tp / 2.0).abs() < 1e-6 * tp);
    }

    #[test]
    fn replay_catches_tampering() {
        let mut t = run(&[2, 2, 2, 1], 3, 4, 1, 1);
        t.events.retain(|e| !(e.cycle == 5 && e.action.name() == "program"));
        assert!(verify_trace(&t).is_err());
    }
}
