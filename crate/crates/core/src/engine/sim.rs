//! The deterministic cycle loop.
//!
//! One global cycle advances every PE lane, the mesh fabric, and the
//! schedulers in fixed id order; flits produced in a cycle become visible
//! the next cycle. Timing (who is busy when) follows batch arrival order,
//! while functional state updates are applied at row finalization in a
//! canonical batch order, so every pipeline mode, product dataflow, AER
//! encoding, and routing engine computes bit-identical results and only the
//! cycle accounting differs.
//!
//! Time-steps advance per row: a row finalizes step t once every
//! receptive-field source has delivered its step-t ending marker and the
//! queued PE work has drained. Ending markers ride the flit type field; the
//! simulator carries the step tag out-of-band because multi-path routing
//! can reorder bundles that in-order hardware FIFOs would not.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::mapping::Mapping;
use crate::model::{
    class_scores, encode_input, linear_flattens, ConvGeom, LayerKind, LayerShape, NetworkInfo,
    NetworkSpec, QuantParams,
};
use crate::noc::units::im2col_broadcast;
use crate::noc::{
    assign_data_paths, route, slots_per_flit, AerMode, Coord, MeshConfig, MeshFabric,
    RoutingEngine, RoutingTable, TransitFlit, AER_PACKET_BITS,
};
use crate::pe::{AccessCounters, BatchSpike, PeBuffers, PeConfig, SpikeBatch};
use crate::schedule::{spine_traversal_order, PipelineMode, RowTracker};

use super::exec::{
    batch_spikes_from_positions, mm_sc_dense, residual_sums, split_singletons, unit_target,
    AttentionExec, LayerExec, NeuronBank, PeLane, UnitKind, WorkItem,
};
use super::trace::{SimTrace, StepRecord, TraceEventKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductMode {
    Inner,
    Outer,
    Gustavson,
}

impl ProductMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProductMode::Inner => "inner",
            ProductMode::Outer => "outer",
            ProductMode::Gustavson => "gustavson",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub pipeline: PipelineMode,
    pub product: ProductMode,
    pub aer: AerMode,
    pub routing: RoutingEngine,
    pub mesh: MeshConfig,
    pub pe: PeConfig,
    pub seed: u64,
    /// Total flits injected per real flit (1 = no padding); congestion knob.
    pub injection_multiplier: u32,
    /// Input bundles injected per cycle.
    pub input_rate: u32,
    /// Capture bit-exact wire records of mesh-bound bundled flits.
    pub record_wire: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            pipeline: PipelineMode::SpineTokenWise,
            product: ProductMode::Gustavson,
            aer: AerMode::Baer,
            routing: RoutingEngine::Xy,
            mesh: MeshConfig::default(),
            pe: PeConfig::default(),
            seed: 0,
            injection_multiplier: 1,
            input_rate: 4,
            record_wire: false,
        }
    }
}

/// Confidence-based early termination, evaluated at every completed
/// time-step of the final layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElasticConfig {
    pub theta: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub terminated_at: u32,
    pub prediction: usize,
    pub confidence: f64,
    pub trace: SimTrace,
}

/// Canonical ordering for batch application at finalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct BatchKey {
    pred_slot: u8,
    src_shard: u16,
    src_row: u32,
    seq: u32,
}

#[derive(Debug, Clone)]
struct ArrivedBatch {
    key: BatchKey,
    spikes: Vec<BatchSpike>,
}

#[derive(Debug, Default)]
struct RowAsm {
    batches: Vec<ArrivedBatch>,
    released: bool,
    finalized: bool,
    work_pending: u32,
}

struct StepAsm {
    tracker: RowTracker,
    rows: Vec<RowAsm>,
    ending_counts: BTreeMap<(u8, u32), u16>,
    finalized_rows: usize,
    /// Bundles held for layer-granular flushing.
    held: Vec<(u32, Vec<(u32, i8)>)>,
    flushed: bool,
}

struct ShardRt {
    coord: Coord,
    col_range: std::ops::Range<usize>,
    lanes: Vec<PeLane>,
    /// Layer slot index on this core (data-path lane assignment).
    local_slot: usize,
    /// Neuron circuits granted to this layer on each PE.
    circuits: u32,
}

struct LayerRt {
    kind: LayerKind,
    quant: QuantParams,
    shape: LayerShape,
    preds: Vec<usize>,
    succs: Vec<usize>,
    conv_geom: Option<ConvGeom>,
    flatten_src_cols: Option<usize>,
    shards: Vec<ShardRt>,
    exec: LayerExec,
    steps: BTreeMap<u32, StepAsm>,
    row_step: Vec<u32>,
    completed_step: u32,
    counters: AccessCounters,
    pred_shards: Vec<u16>,
    pred_rows: Vec<usize>,
    topo_pos: usize,
    weight_rows: usize,
}

impl LayerRt {
    fn make_tracker(&self) -> RowTracker {
        match self.kind {
            LayerKind::Conv => RowTracker::conv(self.conv_geom.unwrap()),
            LayerKind::Residual => RowTracker::identity(self.shape.rows, 2),
            LayerKind::Attention => {
                RowTracker::all_rows(self.shape.rows, self.pred_rows.iter().sum())
            }
            LayerKind::Linear if self.flatten_src_cols.is_some() => {
                RowTracker::all_rows(1, self.pred_rows.iter().sum())
            }
            _ => RowTracker::identity(self.shape.rows, 1),
        }
    }

    fn step_asm(&mut self, step: u32) -> &mut StepAsm {
        if !self.steps.contains_key(&step) {
            let tracker = self.make_tracker();
            let rows = (0..self.shape.rows).map(|_| RowAsm::default()).collect();
            self.steps.insert(
                step,
                StepAsm {
                    tracker,
                    rows,
                    ending_counts: BTreeMap::new(),
                    finalized_rows: 0,
                    held: Vec::new(),
                    flushed: false,
                },
            );
        }
        self.steps.get_mut(&step).unwrap()
    }

    /// Maps one delivered source bundle onto per-output-row batches.
    fn map_spikes(&self, src_row: u32, spikes: &[(u32, i8)]) -> Vec<(u32, Vec<BatchSpike>)> {
        if spikes.is_empty() {
            return Vec::new();
        }
        match self.kind {
            LayerKind::Conv => {
                let geom = self.conv_geom.unwrap();
                let mut by_row: BTreeMap<u32, Vec<BatchSpike>> = BTreeMap::new();
                for &(channel, sign) in spikes {
                    for (out_row, unrolled) in im2col_broadcast(&geom, src_row, channel) {
                        by_row.entry(out_row).or_default().push(BatchSpike {
                            weight_row: unrolled,
                            negative: sign < 0,
                        });
                    }
                }
                by_row.into_iter().collect()
            }
            LayerKind::Linear => match self.flatten_src_cols {
                Some(src_cols) => vec![(
                    0,
                    spikes
                        .iter()
                        .map(|&(pos, sign)| BatchSpike {
                            weight_row: src_row * src_cols as u32 + pos,
                            negative: sign < 0,
                        })
                        .collect(),
                )],
                None => vec![(src_row, batch_spikes_from_positions(spikes))],
            },
            // Row-aligned units keep source positions.
            _ => vec![(src_row, batch_spikes_from_positions(spikes))],
        }
    }
}

#[derive(Debug, Clone)]
struct FlitPayload {
    dst_layer: u32,
    pred_slot: u8,
    src_shard: u16,
    src_row: u32,
    step: u32,
    seq: u32,
    spikes: Vec<(u32, i8)>,
    is_ending: bool,
    padding: bool,
}

struct CoreRt {
    outbox: VecDeque<TransitFlit<FlitPayload>>,
}

struct Injector {
    /// (step, src_row, spikes) in injection order within each step.
    content: VecDeque<(u32, u32, Vec<(u32, i8)>)>,
    rows_order: Vec<u32>,
    /// Next empty time-step to emit once content is exhausted.
    next_marker: u32,
    marker_step_current: u32,
    marker_queue: VecDeque<u32>,
}

struct Sim<'a> {
    info: &'a NetworkInfo,
    cfg: &'a SimConfig,
    layers: Vec<LayerRt>,
    cores: BTreeMap<Coord, CoreRt>,
    fabric: MeshFabric<FlitPayload>,
    table: RoutingTable,
    rng: ChaCha8Rng,
    cycle: u64,
    trace: SimTrace,
    injector: Injector,
    /// Global (time-step, topo position) stage pointer for the unpipelined
    /// mode.
    stage: (u32, usize),
    spikes_in_flight: i64,
    pending_spike_batches: i64,
    /// Spikes finalized but parked in layer-granular flush buffers.
    held_spikes: i64,
    local_pending: VecDeque<(u64, FlitPayload)>,
    elastic: Option<ElasticConfig>,
    terminated_at: Option<u32>,
    t_max: u32,
    finished: bool,
}

/// Runs a full inference. When the run converged, the trace's final
/// cumulative tracers equal the stable-state reference outputs.
pub fn run_inference(
    net: &NetworkSpec,
    info: &NetworkInfo,
    mapping: &Mapping,
    input: &[i64],
    cfg: &SimConfig,
) -> Result<SimTrace> {
    let mut sim = Sim::new(net, info, mapping, input, cfg, None)?;
    sim.run()?;
    Ok(sim.trace)
}

/// Runs with confidence-based early termination.
pub fn elastic_run(
    net: &NetworkSpec,
    info: &NetworkInfo,
    mapping: &Mapping,
    input: &[i64],
    cfg: &SimConfig,
    elastic: ElasticConfig,
) -> Result<RunOutcome> {
    let mut sim = Sim::new(net, info, mapping, input, cfg, Some(elastic))?;
    sim.run()?;
    let trace = sim.trace;
    let last = trace.steps.last().ok_or(SimError::EmptyTrace)?;
    Ok(RunOutcome {
        terminated_at: last.step,
        prediction: last.prediction,
        confidence: last.confidence,
        trace,
    })
}

/// Maximum class probability of the pooled scores (softmax over integers,
/// computed in floating point by the harness, not on the datapath).
fn confidence_of(scores: &[i64]) -> f64 {
    if scores.is_empty() {
        return 1.0;
    }
    let m = *scores.iter().max().unwrap();
    let total: f64 = scores.iter().map(|&s| ((s - m) as f64).exp()).sum();
    1.0 / total
}

impl<'a> Sim<'a> {
    fn new(
        net: &'a NetworkSpec,
        info: &'a NetworkInfo,
        mapping: &'a Mapping,
        input: &[i64],
        cfg: &'a SimConfig,
        elastic: Option<ElasticConfig>,
    ) -> Result<Self> {
        mapping
            .validate(net, info)
            .map_err(|e| SimError::MappingIncomplete(e.to_string()))?;
        if slots_per_flit(cfg.mesh.flit_bits) == 0 {
            return Err(SimError::Parse(format!(
                "flit size {} leaves no payload slots",
                cfg.mesh.flit_bits
            )));
        }

        // Layer slots per core decide circuit shares and data-path lanes.
        let mut core_layers: BTreeMap<Coord, Vec<usize>> = BTreeMap::new();
        for l in 0..net.layers.len() {
            for (coord, _) in mapping.layer_shards(l) {
                let slot = core_layers.entry(coord).or_default();
                if !slot.contains(&l) {
                    slot.push(l);
                }
            }
        }

        let n_pes = 4usize;
        let mut layers = Vec::with_capacity(net.layers.len());
        for (l, spec) in net.layers.iter().enumerate() {
            let shape = info.shapes[l];
            let in_shape = info.input_shapes[l];
            let preds = info.preds[l].clone();
            let flatten_src_cols = if spec.kind == LayerKind::Linear && !preds.is_empty() {
                let ps = info.shapes[preds[0]];
                linear_flattens(spec, ps).then_some(ps.cols)
            } else {
                None
            };
            let shards_map = mapping.layer_shards(l);
            let mut shards = Vec::with_capacity(shards_map.len());
            let mut tiles_per_shard = Vec::new();
            for (coord, col_range) in &shards_map {
                let slots = &core_layers[coord];
                let local_slot = slots.iter().position(|&x| x == l).unwrap();
                let groups = slots.len() as u32;
                let circuits = cfg.pe.group_circuits(groups, local_slot as u32);
                if matches!(spec.kind, LayerKind::Conv | LayerKind::Linear) {
                    let tiles: Vec<PeBuffers> = crate::pe::tile_columns(col_range.len(), n_pes)
                        .iter()
                        .map(|t| {
                            let global = col_range.start + t.start..col_range.start + t.end;
                            PeBuffers::new(&spec.weights, shape.rows, global, spec.quant)
                        })
                        .collect();
                    tiles_per_shard.push(tiles);
                }
                shards.push(ShardRt {
                    coord: *coord,
                    col_range: col_range.clone(),
                    lanes: (0..n_pes).map(|_| PeLane::default()).collect(),
                    local_slot,
                    circuits,
                });
            }
            let exec = match spec.kind {
                LayerKind::Conv | LayerKind::Linear => LayerExec::MmSc {
                    tiles: tiles_per_shard,
                },
                LayerKind::Residual => LayerExec::Residual {
                    bank: NeuronBank::new(shape.rows, shape.cols, spec.quant),
                },
                LayerKind::Ssoftmax => LayerExec::RowUnit {
                    kind: UnitKind::Ssoftmax,
                    input_levels: vec![0; in_shape.rows * in_shape.cols],
                    prev_target: vec![0; shape.rows * shape.cols],
                    bank: NeuronBank::new(shape.rows, shape.cols, spec.quant),
                    cols_in: in_shape.cols,
                },
                LayerKind::Slayernorm => LayerExec::RowUnit {
                    kind: UnitKind::Slayernorm,
                    input_levels: vec![0; in_shape.rows * in_shape.cols],
                    prev_target: vec![0; shape.rows * shape.cols],
                    bank: NeuronBank::new(shape.rows, shape.cols, spec.quant),
                    cols_in: in_shape.cols,
                },
                LayerKind::Attention => LayerExec::Attention(Box::new(AttentionExec::new(
                    spec.weights.clone(),
                    shape.rows,
                    in_shape.cols,
                    spec.quant,
                ))),
            };
            let pred_shards: Vec<u16> = if preds.is_empty() {
                vec![1]
            } else {
                preds
                    .iter()
                    .map(|&p| mapping.layer_shards(p).len() as u16)
                    .collect()
            };
            let pred_rows: Vec<usize> = if preds.is_empty() {
                vec![in_shape.rows]
            } else {
                preds.iter().map(|&p| info.shapes[p].rows).collect()
            };
            layers.push(LayerRt {
                kind: spec.kind,
                quant: spec.quant,
                shape,
                preds,
                succs: info.succs[l].clone(),
                conv_geom: spec.conv_geom,
                flatten_src_cols,
                shards,
                exec,
                steps: BTreeMap::new(),
                row_step: vec![1; shape.rows],
                completed_step: 0,
                counters: AccessCounters::default(),
                pred_shards,
                pred_rows,
                topo_pos: info.topo_order.iter().position(|&x| x == l).unwrap(),
                weight_rows: spec.weights.len(),
            });
        }

        // Input events grouped into per-(step, row) bundles in the spine
        // traversal order.
        let in_shape = info.input_shapes[info.input_layer];
        let expect = in_shape.rows * in_shape.cols;
        if input.len() != expect {
            return Err(SimError::Validation {
                layer: info.input_layer,
                field: "input",
                msg: format!("expected {expect} values, got {}", input.len()),
            });
        }
        let events = encode_input(input, net.time_steps)?;
        let rows_order: Vec<u32> = match net.layers[info.input_layer].kind {
            LayerKind::Conv => {
                let geom = net.layers[info.input_layer].conv_geom.unwrap();
                spine_traversal_order(&geom)
                    .into_iter()
                    .map(|(i, j)| i * geom.input_w + j)
                    .collect()
            }
            _ => (0..in_shape.rows as u32).collect(),
        };
        let mut per_step_row: BTreeMap<(u32, u32), Vec<(u32, i8)>> = BTreeMap::new();
        let mut content_steps = 1;
        for ev in events {
            let row = ev.position / in_shape.cols as u32;
            let pos = ev.position % in_shape.cols as u32;
            per_step_row
                .entry((ev.t, row))
                .or_default()
                .push((pos, ev.sign));
            content_steps = content_steps.max(ev.t);
        }
        let mut content = VecDeque::new();
        for t in 1..=content_steps {
            for &row in &rows_order {
                let spikes = per_step_row.remove(&(t, row)).unwrap_or_default();
                content.push_back((t, row, spikes));
            }
        }

        let fabric = MeshFabric::new(
            cfg.mesh.rows,
            cfg.mesh.cols,
            cfg.mesh.link_bandwidth,
            cfg.mesh.fifo_bytes,
            cfg.mesh.flit_bits,
        );
        let mut cores = BTreeMap::new();
        for coord in core_layers.keys() {
            cores.insert(*coord, CoreRt { outbox: VecDeque::new() });
        }

        let mut trace = SimTrace::default();
        trace.output_rows = info.shapes[info.output_layer].rows;
        trace.output_cols = info.shapes[info.output_layer].cols;

        Ok(Sim {
            info,
            cfg,
            layers,
            cores,
            fabric,
            table: mapping.routing_table(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cycle: 0,
            trace,
            injector: Injector {
                content,
                rows_order,
                next_marker: content_steps + 1,
                marker_step_current: 0,
                marker_queue: VecDeque::new(),
            },
            stage: (1, 0),
            spikes_in_flight: 0,
            pending_spike_batches: 0,
            held_spikes: 0,
            local_pending: VecDeque::new(),
            elastic,
            terminated_at: None,
            t_max: net.time_steps,
            finished: false,
        })
    }

    fn all_states_quiescent(&self) -> bool {
        self.layers.iter().all(|l| l.exec.quiescent())
    }

    fn aggregate_counters(&self) -> AccessCounters {
        let mut total = AccessCounters::default();
        for l in &self.layers {
            total.add(&l.counters);
        }
        total
    }

    fn run(&mut self) -> Result<()> {
        const CYCLE_CAP: u64 = 100_000_000;
        loop {
            let mut progress = false;
            progress |= self.tick_lanes();
            progress |= self.tick_fabric()?;
            progress |= self.tick_local()?;
            progress |= self.drain_outboxes();
            progress |= self.tick_injector()?;
            progress |= self.finalize_pass()?;
            if self.finished {
                self.trace.converged =
                    self.terminated_at.is_none() && self.all_states_quiescent();
                break;
            }
            // Quiescence stop: no state can change anymore.
            if self.injector.content.is_empty()
                && self.injector.marker_queue.is_empty()
                && self.pending_spike_batches == 0
                && self.spikes_in_flight == 0
                && self.held_spikes == 0
                && self.all_states_quiescent()
                && !self.trace.steps.is_empty()
            {
                self.trace.converged = true;
                break;
            }
            if !progress {
                let outstanding = !self.fabric.is_idle()
                    || self.cores.values().any(|c| !c.outbox.is_empty())
                    || !self.local_pending.is_empty()
                    || self.pending_spike_batches > 0
                    || self.held_spikes > 0
                    || self
                        .layers
                        .iter()
                        .any(|l| l.shards.iter().any(|s| s.lanes.iter().any(|ln| !ln.idle())));
                if outstanding {
                    return Err(SimError::DeadlockDetected {
                        cycle: self.cycle,
                        detail: format!(
                            "in-flight spikes {}, pending batches {}",
                            self.spikes_in_flight, self.pending_spike_batches
                        ),
                    });
                }
                // Nothing pending and nothing to do: the time-step budget
                // ran out before quiescence.
                self.trace.converged = self.all_states_quiescent();
                break;
            }
            self.cycle += 1;
            if self.cycle > CYCLE_CAP {
                return Err(SimError::DeadlockDetected {
                    cycle: self.cycle,
                    detail: "cycle cap exceeded".into(),
                });
            }
        }
        self.trace.cycles = self.cycle;
        self.trace.counters = self.aggregate_counters();
        self.trace.fifo_accesses = self.fabric.counters.fifo_accesses;
        self.trace.flit_hops = self.fabric.counters.total_hops;
        self.trace.wire_bits = self.fabric.counters.total_wire_bits;
        for (link, count) in &self.fabric.counters.link_flits {
            self.trace.link_flits.insert(
                format!(
                    "{},{}->{},{}",
                    link.0.row, link.0.col, link.1.row, link.1.col
                ),
                *count,
            );
        }
        let out = self.info.output_layer;
        self.trace.final_tracers = self.layers[out].exec.tracer_levels(self.info.shapes[out]);
        self.trace.first_response_cycle = self
            .trace
            .completions
            .iter()
            .filter(|(_, l, _, _)| *l == out)
            .map(|(c, _, _, _)| *c)
            .min();
        Ok(())
    }

    fn tick_lanes(&mut self) -> bool {
        let mut progress = false;
        let mut completed: Vec<(usize, WorkItem)> = Vec::new();
        let stage = self.stage;
        let none_mode = self.cfg.pipeline == PipelineMode::None;
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for shard in layer.shards.iter_mut() {
                for lane in shard.lanes.iter_mut() {
                    if let Some(head) = lane.queue.front() {
                        if none_mode && !(stage.0 == head.step && stage.1 == layer.topo_pos) {
                            continue;
                        }
                        progress = true;
                        if let Some(item) = lane.tick() {
                            completed.push((li, item));
                        }
                    }
                }
            }
        }
        for (li, item) in completed {
            if let Some(asm) = self.layers[li].steps.get_mut(&item.step) {
                let row = &mut asm.rows[item.row as usize];
                debug_assert!(row.work_pending > 0);
                row.work_pending -= 1;
            }
        }
        progress
    }

    fn tick_fabric(&mut self) -> Result<bool> {
        let (delivered, moved) = self.fabric.tick();
        let mut progress = moved;
        for (_, payload) in delivered {
            progress = true;
            if payload.padding {
                self.trace.padding_flits += 1;
                continue;
            }
            self.spikes_in_flight -= payload.spikes.len() as i64;
            self.deliver(payload)?;
        }
        Ok(progress)
    }

    fn tick_local(&mut self) -> Result<bool> {
        let mut progress = false;
        while let Some(&(due, _)) = self.local_pending.front() {
            if due > self.cycle {
                break;
            }
            let (_, payload) = self.local_pending.pop_front().unwrap();
            self.fabric.counters.fifo_accesses += 1;
            self.spikes_in_flight -= payload.spikes.len() as i64;
            self.deliver(payload)?;
            progress = true;
        }
        Ok(progress)
    }

    fn drain_outboxes(&mut self) -> bool {
        let mut progress = false;
        for (coord, core) in self.cores.iter_mut() {
            // Two local ingress lanes per router.
            let budget = self.fabric.local_free_slots(*coord).min(2);
            for _ in 0..budget {
                let Some(flit) = core.outbox.pop_front() else { break };
                let accepted = self.fabric.inject_local(*coord, flit);
                debug_assert!(accepted, "free slots were checked");
                progress = true;
            }
        }
        progress
    }

    fn tick_injector(&mut self) -> Result<bool> {
        let mut injected = 0;
        let input_layer = self.info.input_layer;
        let input_topo = self.layers[input_layer].topo_pos;
        let none_mode = self.cfg.pipeline == PipelineMode::None;
        while injected < self.cfg.input_rate {
            let next: Option<(u32, u32, Vec<(u32, i8)>)> =
                if let Some(&(step, _, _)) = self.injector.content.front() {
                    if none_mode && !(self.stage.0 == step && self.stage.1 == input_topo) {
                        None
                    } else {
                        self.injector.content.pop_front()
                    }
                } else {
                    if self.injector.marker_queue.is_empty() {
                        // Open the next empty time-step only while something
                        // still needs the time base to advance, and never
                        // more than a small window ahead of the slowest
                        // layer (input-side flow control).
                        let needs_time = !self.all_states_quiescent()
                            || self.pending_spike_batches > 0
                            || self.spikes_in_flight > 0
                            || self.held_spikes > 0;
                        let slowest = self
                            .layers
                            .iter()
                            .map(|l| l.completed_step)
                            .min()
                            .unwrap_or(0);
                        let paced = self.injector.next_marker <= slowest + 4;
                        if needs_time && paced && self.injector.next_marker <= self.t_max {
                            self.injector.marker_step_current = self.injector.next_marker;
                            self.injector.next_marker += 1;
                            let rows = self.injector.rows_order.clone();
                            self.injector.marker_queue.extend(rows);
                        }
                    }
                    let step = self.injector.marker_step_current;
                    if none_mode && !(self.stage.0 == step && self.stage.1 == input_topo) {
                        None
                    } else {
                        self.injector
                            .marker_queue
                            .pop_front()
                            .map(|row| (step, row, Vec::new()))
                    }
                };
            let Some((step, row, spikes)) = next else { break };
            let chunk = slots_per_flit(self.cfg.mesh.flit_bits).min(self.cfg.pe.n_ways as usize);
            let n_chunks = spikes.len().div_ceil(chunk.max(1)).max(1);
            for (seq, piece) in chunks_with_empty(&spikes, chunk).enumerate() {
                self.deliver(FlitPayload {
                    dst_layer: input_layer as u32,
                    pred_slot: 0,
                    src_shard: 0,
                    src_row: row,
                    step,
                    seq: seq as u32,
                    spikes: piece.to_vec(),
                    is_ending: seq + 1 == n_chunks,
                    padding: false,
                })?;
            }
            injected += 1;
        }
        Ok(injected > 0)
    }

    /// Routes a delivered payload into the destination layer's assembly:
    /// im2col mapping, batch queuing, PE work accounting, and dependency
    /// tracking on ending markers.
    fn deliver(&mut self, payload: FlitPayload) -> Result<()> {
        let li = payload.dst_layer as usize;
        let product = self.cfg.product;
        let pe_cfg = self.cfg.pe;
        let mut pending_delta = 0i64;
        {
            let layer = &mut self.layers[li];
            let mapped = layer.map_spikes(payload.src_row, &payload.spikes);
            let is_mmsc = matches!(layer.kind, LayerKind::Conv | LayerKind::Linear);
            let shard_meta: Vec<(usize, u32)> = layer
                .shards
                .iter()
                .map(|s| (s.col_range.len(), s.circuits))
                .collect();
            let n_pes = layer.shards.first().map_or(1, |s| s.lanes.len());
            let mut new_work: Vec<(usize, usize, WorkItem)> = Vec::new();
            {
                let asm = layer.step_asm(payload.step);
                for (row, batch) in mapped {
                    if batch.is_empty() {
                        continue;
                    }
                    let k = batch.len();
                    asm.rows[row as usize].batches.push(ArrivedBatch {
                        key: BatchKey {
                            pred_slot: payload.pred_slot,
                            src_shard: payload.src_shard,
                            src_row: payload.src_row,
                            seq: payload.seq,
                        },
                        spikes: batch,
                    });
                    pending_delta += 1;
                    if is_mmsc && product != ProductMode::Inner {
                        for (si, &(cols, circuits)) in shard_meta.iter().enumerate() {
                            for (pi, tile) in
                                crate::pe::tile_columns(cols, n_pes).iter().enumerate()
                            {
                                let cycles = match product {
                                    ProductMode::Gustavson => {
                                        pe_cfg.batch_cycles(k, tile.len(), circuits)
                                    }
                                    _ => k as u64 * pe_cfg.batch_cycles(1, tile.len(), circuits),
                                };
                                new_work.push((si, pi, WorkItem { step: payload.step, row, cycles }));
                                asm.rows[row as usize].work_pending += 1;
                            }
                        }
                    }
                }
            }
            for (si, pi, item) in new_work {
                layer.shards[si].lanes[pi].push(item);
            }
        }
        self.pending_spike_batches += pending_delta;

        if payload.is_ending {
            let layer = &mut self.layers[li];
            let weight_rows = layer.weight_rows;
            let kind = layer.kind;
            let shape = layer.shape;
            let shard_meta: Vec<(usize, u32)> = layer
                .shards
                .iter()
                .map(|s| (s.col_range.len(), s.circuits))
                .collect();
            let n_pes = layer.shards.first().map_or(1, |s| s.lanes.len());
            let mut release_work: Vec<(usize, usize, WorkItem)> = Vec::new();
            {
                let expected = layer.pred_shards[payload.pred_slot as usize];
                let asm = layer.steps.get_mut(&payload.step).unwrap();
                let entry = asm
                    .ending_counts
                    .entry((payload.pred_slot, payload.src_row))
                    .or_insert(0);
                *entry += 1;
                if *entry == expected {
                    let released = asm
                        .tracker
                        .on_arrival(payload.pred_slot as usize, payload.src_row)?;
                    for r in released {
                        asm.rows[r as usize].released = true;
                        match kind {
                            LayerKind::Conv | LayerKind::Linear => {
                                if product == ProductMode::Inner {
                                    let nnz: usize = asm.rows[r as usize]
                                        .batches
                                        .iter()
                                        .map(|b| b.spikes.len())
                                        .sum();
                                    if nnz > 0 {
                                        for (si, &(cols, circuits)) in
                                            shard_meta.iter().enumerate()
                                        {
                                            for (pi, tile) in crate::pe::tile_columns(cols, n_pes)
                                                .iter()
                                                .enumerate()
                                            {
                                                release_work.push((
                                                    si,
                                                    pi,
                                                    WorkItem {
                                                        step: payload.step,
                                                        row: r,
                                                        cycles: pe_cfg.batch_cycles(
                                                            weight_rows.max(nnz),
                                                            tile.len(),
                                                            circuits,
                                                        ),
                                                    },
                                                ));
                                                asm.rows[r as usize].work_pending += 1;
                                            }
                                        }
                                    }
                                }
                            }
                            LayerKind::Attention => {
                                if r == 0 {
                                    let n = shape.rows as u64;
                                    let h = shape.cols as u64;
                                    let adds = n * 3 * h + 2 * n * n * h + n * n;
                                    let circuits = shard_meta[0].1;
                                    let group_adds = (circuits as u64
                                        * (pe_cfg.adder_inputs as u64 / 2))
                                        .max(1);
                                    release_work.push((
                                        0,
                                        0,
                                        WorkItem {
                                            step: payload.step,
                                            row: 0,
                                            cycles: adds.div_ceil(group_adds).max(1),
                                        },
                                    ));
                                    asm.rows[0].work_pending += 1;
                                }
                            }
                            _ => {
                                let cols = shape.cols as u64;
                                release_work.push((
                                    0,
                                    (r as usize) % n_pes,
                                    WorkItem {
                                        step: payload.step,
                                        row: r,
                                        cycles: 1 + cols / 64,
                                    },
                                ));
                                asm.rows[r as usize].work_pending += 1;
                            }
                        }
                    }
                }
            }
            for (si, pi, item) in release_work {
                layer.shards[si].lanes[pi].push(item);
            }
        }
        Ok(())
    }

    fn finalize_pass(&mut self) -> Result<bool> {
        let mut progress = false;
        let mut flushes: Vec<(usize, u32, u32, Vec<(u32, i8)>)> = Vec::new();
        let topo = self.info.topo_order.clone();
        for &li in &topo {
            let (completed_steps, bundles) = self.finalize_layer(li)?;
            if !bundles.is_empty() {
                progress = true;
                for (step, row, spikes) in bundles {
                    flushes.push((li, step, row, spikes));
                }
            }
            for step in completed_steps {
                progress = true;
                self.on_layer_step_complete(li, step)?;
                if self.finished {
                    return Ok(true);
                }
            }
        }
        for (li, step, row, spikes) in flushes {
            self.flush_bundle(li, step, row, spikes)?;
        }
        Ok(progress)
    }

    /// Finalizes eligible rows of one layer. Returns the steps the layer
    /// completed this cycle and the bundles ready to flush.
    #[allow(clippy::type_complexity)]
    fn finalize_layer(
        &mut self,
        li: usize,
    ) -> Result<(Vec<u32>, Vec<(u32, u32, Vec<(u32, i8)>)>)> {
        let product = self.cfg.product;
        let n_ways = self.cfg.pe.n_ways;
        let pipeline = self.cfg.pipeline;
        let cycle = self.cycle;
        let shape = self.layers[li].shape;
        let kind = self.layers[li].kind;
        let topo_pos = self.layers[li].topo_pos;
        let mut out_bundles: Vec<(u32, u32, Vec<(u32, i8)>)> = Vec::new();
        let mut completed: Vec<u32> = Vec::new();
        let mut completions: Vec<(u64, u32, u32)> = Vec::new();

        let steps: Vec<u32> = self.layers[li].steps.keys().copied().collect();
        for step in steps {
            if pipeline == PipelineMode::None
                && !(self.stage.0 == step && self.stage.1 == topo_pos)
            {
                continue;
            }
            if kind == LayerKind::Attention {
                let ready = {
                    let layer = &self.layers[li];
                    let asm = &layer.steps[&step];
                    !asm.flushed
                        && asm.finalized_rows == 0
                        && asm.rows.iter().all(|r| r.released && r.work_pending == 0)
                        && layer.row_step.iter().all(|&s| s == step)
                };
                if ready {
                    let (row_spikes, batch_count) = {
                        let asm = self.layers[li].steps.get_mut(&step).unwrap();
                        let mut row_spikes: Vec<Vec<(u32, i8)>> = vec![Vec::new(); shape.rows];
                        let mut batch_count = 0i64;
                        for (r, row_asm) in asm.rows.iter_mut().enumerate() {
                            row_asm.batches.sort_by_key(|b| b.key);
                            for b in &row_asm.batches {
                                batch_count += 1;
                                for sp in &b.spikes {
                                    row_spikes[r]
                                        .push((sp.weight_row, if sp.negative { -1 } else { 1 }));
                                }
                            }
                            row_asm.batches.clear();
                            row_asm.finalized = true;
                        }
                        asm.finalized_rows = shape.rows;
                        (row_spikes, batch_count)
                    };
                    let layer = &mut self.layers[li];
                    let outputs = match &mut layer.exec {
                        LayerExec::Attention(att) => {
                            att.process_step(&row_spikes, &mut layer.counters)
                        }
                        _ => unreachable!(),
                    };
                    self.pending_spike_batches -= batch_count;
                    for (r, spikes) in outputs.into_iter().enumerate() {
                        self.layers[li].row_step[r] = step + 1;
                        completions.push((cycle, r as u32, step));
                        if pipeline == PipelineMode::SpineTokenWise {
                            out_bundles.push((step, r as u32, spikes));
                        } else {
                            self.held_spikes += spikes.len() as i64;
                            self.layers[li]
                                .steps
                                .get_mut(&step)
                                .unwrap()
                                .held
                                .push((r as u32, spikes));
                        }
                    }
                }
            } else {
                for r in 0..shape.rows {
                    let eligible = {
                        let layer = &self.layers[li];
                        let asm = &layer.steps[&step];
                        let row_asm = &asm.rows[r];
                        row_asm.released
                            && !row_asm.finalized
                            && row_asm.work_pending == 0
                            && layer.row_step[r] == step
                    };
                    if !eligible {
                        continue;
                    }
                    let (batches, spike_batches) = {
                        let asm = self.layers[li].steps.get_mut(&step).unwrap();
                        let row_asm = &mut asm.rows[r];
                        row_asm.finalized = true;
                        asm.finalized_rows += 1;
                        let mut batches = std::mem::take(&mut row_asm.batches);
                        batches.sort_by_key(|b| b.key);
                        let nonempty =
                            batches.iter().filter(|b| !b.spikes.is_empty()).count() as i64;
                        (batches, nonempty)
                    };
                    let spikes = finalize_row_function(
                        &mut self.layers[li],
                        r as u32,
                        &batches,
                        product,
                        n_ways,
                    )?;
                    self.pending_spike_batches -= spike_batches;
                    self.layers[li].row_step[r] = step + 1;
                    completions.push((cycle, r as u32, step));
                    if pipeline == PipelineMode::SpineTokenWise {
                        out_bundles.push((step, r as u32, spikes));
                    } else {
                        self.held_spikes += spikes.len() as i64;
                        self.layers[li]
                            .steps
                            .get_mut(&step)
                            .unwrap()
                            .held
                            .push((r as u32, spikes));
                    }
                }
            }
            // Layer-step completion and (for coarse modes) the bulk flush.
            let layer = &mut self.layers[li];
            if let Some(asm) = layer.steps.get_mut(&step) {
                if asm.finalized_rows == shape.rows && !asm.flushed {
                    asm.flushed = true;
                    if pipeline != PipelineMode::SpineTokenWise {
                        let mut held = std::mem::take(&mut asm.held);
                        held.sort_by_key(|(r, _)| *r);
                        for (r, spikes) in held {
                            self.held_spikes -= spikes.len() as i64;
                            out_bundles.push((step, r, spikes));
                        }
                    }
                    completed.push(step);
                    layer.steps.remove(&step);
                }
            }
        }
        for (c, row, step) in completions {
            if self.trace.completions.len() < 200_000 {
                self.trace.completions.push((c, li, row, step));
            }
            if self.trace.events.len() < 200_000 {
                self.trace.push_event(
                    c,
                    TraceEventKind::RowCompleted {
                        layer: li,
                        row,
                        step,
                    },
                );
            }
        }
        Ok((completed, out_bundles))
    }

    fn on_layer_step_complete(&mut self, li: usize, step: u32) -> Result<()> {
        self.layers[li].completed_step = step;
        if self.cfg.pipeline == PipelineMode::None {
            let pos = self.layers[li].topo_pos;
            debug_assert_eq!(self.stage, (step, pos));
            if pos + 1 < self.layers.len() {
                self.stage = (step, pos + 1);
            } else {
                self.stage = (step + 1, 0);
            }
        }
        if li == self.info.output_layer {
            let levels = self.layers[li].exec.tracer_levels(self.layers[li].shape);
            let scores = class_scores(&levels, self.layers[li].shape);
            let prediction = crate::model::argmax(&scores);
            let confidence = confidence_of(&scores);
            let counters = self.aggregate_counters();
            self.trace.steps.push(StepRecord {
                step,
                end_cycle: self.cycle,
                scores,
                prediction,
                confidence,
                counters,
                fifo_accesses: self.fabric.counters.fifo_accesses,
                flit_hops: self.fabric.counters.total_hops,
                wire_bits: self.fabric.counters.total_wire_bits,
            });
            self.trace.executed_steps = step;
            if self.trace.events.len() < 200_000 {
                self.trace
                    .push_event(self.cycle, TraceEventKind::StepCompleted { step });
            }
            if let Some(el) = self.elastic {
                if confidence >= el.theta {
                    self.terminated_at = Some(step);
                    self.trace
                        .push_event(self.cycle, TraceEventKind::Terminated { step });
                    self.finished = true;
                    return Ok(());
                }
            }
            if step >= self.t_max {
                self.finished = true;
            }
        }
        Ok(())
    }

    /// Sends one finalized row bundle to every consumer shard: local one-
    /// cycle delivery on the same core, flits across the mesh otherwise.
    fn flush_bundle(
        &mut self,
        li: usize,
        step: u32,
        row: u32,
        spikes: Vec<(u32, i8)>,
    ) -> Result<()> {
        let succs = self.layers[li].succs.clone();
        if succs.is_empty() {
            return Ok(());
        }
        let shard_ranges: Vec<std::ops::Range<usize>> = self.layers[li]
            .shards
            .iter()
            .map(|s| s.col_range.clone())
            .collect();
        let shard_coords: Vec<Coord> = self.layers[li].shards.iter().map(|s| s.coord).collect();
        let mut per_shard: Vec<Vec<(u32, i8)>> = vec![Vec::new(); shard_ranges.len()];
        for &(pos, sign) in &spikes {
            let si = shard_ranges
                .iter()
                .position(|rg| rg.contains(&(pos as usize)))
                .unwrap_or(0);
            per_shard[si].push((pos, sign));
        }
        let chunk = slots_per_flit(self.cfg.mesh.flit_bits).min(self.cfg.pe.n_ways as usize);
        for m in succs {
            let pred_slot =
                self.layers[m].preds.iter().position(|&p| p == li).unwrap() as u8;
            let dst_shards: Vec<(Coord, usize)> = self.layers[m]
                .shards
                .iter()
                .map(|s| (s.coord, s.local_slot))
                .collect();
            for (src_si, src_coord) in shard_coords.iter().enumerate() {
                let bundle = &per_shard[src_si];
                for &(dst_coord, dst_slot) in &dst_shards {
                    if *src_coord == dst_coord {
                        let n_chunks = bundle.len().div_ceil(chunk.max(1)).max(1);
                        for (seq, piece) in chunks_with_empty(bundle, chunk).enumerate() {
                            let payload = FlitPayload {
                                dst_layer: m as u32,
                                pred_slot,
                                src_shard: src_si as u16,
                                src_row: row,
                                step,
                                seq: seq as u32,
                                spikes: piece.to_vec(),
                                is_ending: seq + 1 == n_chunks,
                                padding: false,
                            };
                            self.spikes_in_flight += payload.spikes.len() as i64;
                            self.local_pending.push_back((self.cycle + 1, payload));
                        }
                        continue;
                    }
                    let dm = src_coord.row.abs_diff(dst_coord.row);
                    let dn = src_coord.col.abs_diff(dst_coord.col);
                    if dm > 7 || dn > 7 {
                        return Err(SimError::HopOverflow { m: dm, n: dn });
                    }
                    // One sampled path per bundle keeps its flits in order.
                    let path = route(
                        *src_coord,
                        dst_coord,
                        self.cfg.routing,
                        Some(&self.table),
                        (self.cfg.mesh.rows, self.cfg.mesh.cols),
                        &mut self.rng,
                    )?;
                    let lane = assign_data_paths(dst_slot).remote_lane;
                    if self.cfg.record_wire && self.cfg.aer == AerMode::Baer {
                        if let Ok(flits) = crate::noc::encode_baer(
                            row % (1 << 12),
                            bundle,
                            (dm, dn),
                            self.cfg.mesh.flit_bits,
                        ) {
                            if flits.is_empty() {
                                // Completion marker flit for a silent row.
                                let marker = crate::noc::BaerFlit {
                                    hop_m: dm,
                                    hop_n: dn,
                                    flit_type: crate::noc::FlitType::Ending,
                                    st_id: row % (1 << 12),
                                    spikes: vec![],
                                };
                                self.trace
                                    .wire_records
                                    .push(marker.pack(self.cfg.mesh.flit_bits));
                            }
                            for f in &flits {
                                self.trace.wire_records.push(f.pack(self.cfg.mesh.flit_bits));
                            }
                        }
                    }
                    let (flit_bits, pieces): (u32, Vec<Vec<(u32, i8)>>) = match self.cfg.aer {
                        AerMode::Baer => (
                            self.cfg.mesh.flit_bits,
                            chunks_with_empty(bundle, chunk).map(|c| c.to_vec()).collect(),
                        ),
                        AerMode::Legacy => {
                            // One spike per packet; the last packet doubles
                            // as the completion marker, a silent row sends
                            // one bare marker packet.
                            let mut pieces: Vec<Vec<(u32, i8)>> =
                                bundle.iter().map(|&s| vec![s]).collect();
                            if pieces.is_empty() {
                                pieces.push(Vec::new());
                            }
                            (AER_PACKET_BITS as u32, pieces)
                        }
                    };
                    let n_pieces = pieces.len();
                    for (seq, piece) in pieces.into_iter().enumerate() {
                        let payload = FlitPayload {
                            dst_layer: m as u32,
                            pred_slot,
                            src_shard: src_si as u16,
                            src_row: row,
                            step,
                            seq: seq as u32,
                            spikes: piece,
                            is_ending: seq + 1 == n_pieces,
                            padding: false,
                        };
                        self.spikes_in_flight += payload.spikes.len() as i64;
                        self.trace.total_flits += 1;
                        *self
                            .trace
                            .flow_flits
                            .entry(format!("{li}->{m}"))
                            .or_insert(0) += 1;
                        let core = self.cores.get_mut(src_coord).unwrap();
                        core.outbox.push_back(TransitFlit {
                            path: path.iter().copied().collect(),
                            lane,
                            wire_bits: flit_bits,
                            payload,
                        });
                        // Congestion padding: extra flits along the same
                        // path, dropped at delivery.
                        for _ in 1..self.cfg.injection_multiplier {
                            self.trace.total_flits += 1;
                            let core = self.cores.get_mut(src_coord).unwrap();
                            core.outbox.push_back(TransitFlit {
                                path: path.iter().copied().collect(),
                                lane,
                                wire_bits: flit_bits,
                                payload: FlitPayload {
                                    dst_layer: m as u32,
                                    pred_slot,
                                    src_shard: src_si as u16,
                                    src_row: row,
                                    step,
                                    seq: 0,
                                    spikes: Vec::new(),
                                    is_ending: false,
                                    padding: true,
                                },
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn chunks_with_empty<'b>(
    bundle: &'b [(u32, i8)],
    chunk: usize,
) -> Box<dyn Iterator<Item = &'b [(u32, i8)]> + 'b> {
    if bundle.is_empty() {
        Box::new(std::iter::once([].as_slice()))
    } else {
        Box::new(bundle.chunks(chunk.max(1)))
    }
}

/// Applies a row's batches in canonical order under the selected dataflow
/// and returns the emitted spikes (including the per-step drain).
fn finalize_row_function(
    layer: &mut LayerRt,
    row: u32,
    batches: &[ArrivedBatch],
    product: ProductMode,
    n_ways: u32,
) -> Result<Vec<(u32, i8)>> {
    let mut spikes_out: Vec<(u32, i8)> = Vec::new();
    let quant = layer.quant;
    let shape = layer.shape;
    match &mut layer.exec {
        LayerExec::MmSc { tiles } => {
            for shard_tiles in tiles.iter_mut() {
                for pe in shard_tiles.iter_mut() {
                    match product {
                        ProductMode::Gustavson => {
                            for b in batches {
                                if b.spikes.is_empty() {
                                    continue;
                                }
                                let emitted = pe.mm_sc_minibatch(
                                    &SpikeBatch {
                                        row,
                                        spikes: b.spikes.clone(),
                                    },
                                    n_ways,
                                    &mut layer.counters,
                                )?;
                                spikes_out.extend(emitted.iter().map(|e| (e.position, e.sign)));
                            }
                        }
                        ProductMode::Outer => {
                            for b in batches {
                                for single in split_singletons(&SpikeBatch {
                                    row,
                                    spikes: b.spikes.clone(),
                                }) {
                                    let emitted =
                                        pe.mm_sc_minibatch(&single, n_ways, &mut layer.counters)?;
                                    spikes_out
                                        .extend(emitted.iter().map(|e| (e.position, e.sign)));
                                }
                            }
                        }
                        ProductMode::Inner => {
                            let all: Vec<BatchSpike> = batches
                                .iter()
                                .flat_map(|b| b.spikes.iter().copied())
                                .collect();
                            if !all.is_empty() {
                                let emitted = mm_sc_dense(
                                    pe,
                                    &SpikeBatch { row, spikes: all },
                                    &mut layer.counters,
                                )?;
                                spikes_out.extend(emitted.iter().map(|e| (e.position, e.sign)));
                            }
                        }
                    }
                    // Per-time-step advance: drain leftover potential.
                    if !pe.row_quiescent(row) {
                        let emitted = pe.drain_row(row, &mut layer.counters)?;
                        spikes_out.extend(emitted.iter().map(|e| (e.position, e.sign)));
                    }
                }
            }
        }
        LayerExec::Residual { bank } => {
            let mut sums = vec![0i64; shape.cols];
            for b in batches {
                let as_events: Vec<(u32, i8)> = b
                    .spikes
                    .iter()
                    .map(|sp| (sp.weight_row, if sp.negative { -1 } else { 1 }))
                    .collect();
                for (i, v) in residual_sums(shape.cols, quant.v_thr, &as_events)
                    .into_iter()
                    .enumerate()
                {
                    sums[i] += v;
                }
            }
            let any = sums.iter().any(|&s| s != 0);
            if any || !bank.row_quiescent(row as usize) {
                spikes_out = bank.feed_row(row as usize, &sums, &mut layer.counters);
            }
        }
        LayerExec::RowUnit {
            kind,
            input_levels,
            prev_target,
            bank,
            cols_in,
        } => {
            let cols_in = *cols_in;
            for b in batches {
                for sp in &b.spikes {
                    let idx = row as usize * cols_in + sp.weight_row as usize;
                    input_levels[idx] += if sp.negative { -1 } else { 1 };
                }
            }
            let levels_row =
                &input_levels[row as usize * cols_in..(row as usize + 1) * cols_in];
            let target = unit_target(*kind, levels_row, &quant);
            let cols_out = shape.cols;
            let sums: Vec<i64> = (0..cols_out)
                .map(|c| {
                    let idx = row as usize * cols_out + c;
                    let d = target[c] - prev_target[idx];
                    prev_target[idx] = target[c];
                    d
                })
                .collect();
            let any = sums.iter().any(|&s| s != 0);
            if any || !bank.row_quiescent(row as usize) {
                spikes_out = bank.feed_row(row as usize, &sums, &mut layer.counters);
            }
        }
        LayerExec::Attention(_) => unreachable!("attention finalizes per step"),
    }
    Ok(spikes_out)
}
