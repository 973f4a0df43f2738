//! Three-stage mapping toolchain: greedy partition, Hilbert-curve placement
//! with force-potential refinement, and GA-tuned multi-path transmission
//! probabilities.

pub mod ga;
pub mod partition;
pub mod place;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{NetworkInfo, NetworkSpec};
use crate::noc::{candidate_paths, slots_per_flit, Coord, MeshConfig, Path, RoutingTable};
use crate::pe::{tile_columns, PeConfig};

pub use ga::{ga_optimize_paths, required_peak_bandwidth, xy_probabilities, Flow, GaParams};
pub use partition::{greedy_partition, PartitionInput};
pub use place::{hilbert_cells, hilbert_place, placement_potential, refine_placement};

/// Core capacity limits used by the partitioner.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreCapacity {
    pub mem_bytes: u64,
    pub neuron_circuits: u64,
}

impl Default for CoreCapacity {
    fn default() -> Self {
        // Four PEs per core: weight + membrane + tracer buffers, 128
        // circuits each.
        let pe = PeConfig::default();
        CoreCapacity {
            mem_bytes: 4 * (pe.weight_buf_bytes + pe.membrane_buf_bytes + pe.tracer_buf_bytes),
            neuron_circuits: 4 * pe.neuron_circuits as u64,
        }
    }
}

/// One mappable item: a layer or a column shard of a layer too large for a
/// single core.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapItem {
    pub layer: usize,
    pub shard: usize,
    pub col_start: usize,
    pub col_end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTable {
    pub src: Coord,
    pub dst: Coord,
    pub rate: f64,
    pub paths: Vec<(Path, f64)>,
}

/// Complete mapping artifact: partition sets over items, placements, and
/// the multi-path routing tables.
/// FNV-1a over the canonical network serialization; ties a mapping file to
/// the network it was built for.
pub fn network_digest(net: &NetworkSpec) -> u64 {
    let bytes = serde_json::to_vec(net).unwrap_or_default();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mapping {
    pub mesh_rows: u32,
    pub mesh_cols: u32,
    #[serde(default)]
    pub net_digest: u64,
    pub items: Vec<MapItem>,
    pub partitions: Vec<Vec<usize>>,
    /// partition id -> mesh coordinate.
    pub placement: Vec<(usize, Coord)>,
    pub flows: Vec<FlowTable>,
    pub seed: u64,
    pub density: f64,
}

impl Mapping {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SimError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn routing_table(&self) -> RoutingTable {
        let mut table = RoutingTable::default();
        for f in &self.flows {
            table.flows.insert((f.src, f.dst), f.paths.clone());
        }
        table
    }

    pub fn core_of_item(&self, item: usize) -> Option<Coord> {
        let part = self.partitions.iter().position(|p| p.contains(&item))?;
        self.placement
            .iter()
            .find(|(pid, _)| *pid == part)
            .map(|(_, c)| *c)
    }

    /// Shards of one layer as (core, column range), ordered by shard id.
    pub fn layer_shards(&self, layer: usize) -> Vec<(Coord, std::ops::Range<usize>)> {
        let mut shards: Vec<(usize, Coord, std::ops::Range<usize>)> = self
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.layer == layer)
            .map(|(idx, it)| {
                let core = self.core_of_item(idx).expect("validated mapping");
                (it.shard, core, it.col_start..it.col_end)
            })
            .collect();
        shards.sort_by_key(|(s, _, _)| *s);
        shards.into_iter().map(|(_, c, r)| (c, r)).collect()
    }

    /// Checks the structural invariants: every layer fully covered by
    /// shards, placements injective, probabilities normalized.
    pub fn validate(&self, net: &NetworkSpec, info: &NetworkInfo) -> Result<()> {
        if self.net_digest != 0 && self.net_digest != network_digest(net) {
            return Err(SimError::MappingIncomplete(
                "mapping was built for a different network".into(),
            ));
        }
        for (l, shape) in info.shapes.iter().enumerate() {
            let shards = self.layer_shards(l);
            if shards.is_empty() {
                return Err(SimError::MappingIncomplete(format!("layer {l} unmapped")));
            }
            let mut covered = 0;
            for (_, range) in &shards {
                covered += range.len();
            }
            if covered != shape.cols {
                return Err(SimError::MappingIncomplete(format!(
                    "layer {l} covers {covered} of {} columns",
                    shape.cols
                )));
            }
        }
        let mut seen = BTreeMap::new();
        for (pid, coord) in &self.placement {
            if coord.row >= self.mesh_rows || coord.col >= self.mesh_cols {
                return Err(SimError::MappingIncomplete(format!(
                    "partition {pid} placed off-mesh at {coord:?}"
                )));
            }
            if let Some(prev) = seen.insert(*coord, *pid) {
                return Err(SimError::MappingIncomplete(format!(
                    "partitions {prev} and {pid} share cell {coord:?}"
                )));
            }
        }
        self.routing_table().validate()?;
        let _ = net;
        Ok(())
    }
}

/// Relative flit rate for a layer's output bundles at the assumed density.
fn bundle_rate(rows: usize, cols: usize, density: f64) -> f64 {
    let slots = slots_per_flit(256).max(1);
    let spikes = (cols as f64 * density).max(1.0);
    rows as f64 * (spikes / slots as f64).ceil()
}

/// Splits layers into column shards so each item fits the core capacity,
/// then derives per-item demands and the analytic traffic matrix.
pub fn build_items(
    net: &NetworkSpec,
    info: &NetworkInfo,
    caps: &CoreCapacity,
    density: f64,
) -> Result<(Vec<MapItem>, PartitionInput)> {
    let mut items = Vec::new();
    let mut mem = Vec::new();
    let mut circ = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let shape = info.shapes[l];
        let wrows = layer.weight_rows().max(1) as u64;
        let mem_per_col = wrows * layer.quant.weight_bits as u64 / 8
            + (shape.rows as u64 * 12).div_ceil(8)
            + shape.rows as u64;
        let worst_col_mem = mem_per_col.max(1);
        if worst_col_mem > caps.mem_bytes {
            return Err(SimError::LayerTooLarge {
                layer: l,
                demand: worst_col_mem,
                capacity: caps.mem_bytes,
                resource: "memory per column",
            });
        }
        let cols = shape.cols as u64;
        let mem_total = worst_col_mem * cols;
        let by_circ = cols.div_ceil(caps.neuron_circuits);
        let by_mem = mem_total.div_ceil(caps.mem_bytes);
        // Only matrix layers split by column tiling; the row-wise units
        // (residual, ssoftmax, slayernorm, attention) need whole rows.
        let shardable = matches!(
            net.layers[l].kind,
            crate::model::LayerKind::Conv | crate::model::LayerKind::Linear
        );
        let shards = if shardable {
            by_circ.max(by_mem).max(1) as usize
        } else {
            if cols > caps.neuron_circuits || mem_total > caps.mem_bytes {
                return Err(SimError::LayerTooLarge {
                    layer: l,
                    demand: cols.max(mem_total),
                    capacity: caps.neuron_circuits.min(caps.mem_bytes),
                    resource: "row-wise unit capacity",
                });
            }
            1
        };
        for (s, range) in tile_columns(shape.cols, shards).into_iter().enumerate() {
            items.push(MapItem {
                layer: l,
                shard: s,
                col_start: range.start,
                col_end: range.end,
            });
            mem.push(worst_col_mem * range.len() as u64);
            circ.push(range.len() as u64);
        }
    }
    // Traffic: each source shard's bundles are broadcast to every shard of
    // the consumer.
    let mut traffic = Vec::new();
    for &(a, b) in &net.edges {
        let shape_a = info.shapes[a];
        for (ia, it_a) in items.iter().enumerate() {
            if it_a.layer != a {
                continue;
            }
            let rate = bundle_rate(shape_a.rows, it_a.col_end - it_a.col_start, density);
            for (ib, it_b) in items.iter().enumerate() {
                if it_b.layer == b {
                    traffic.push((ia, ib, rate));
                }
            }
        }
    }
    let input = PartitionInput {
        mem_demand: mem,
        circuit_demand: circ,
        mem_capacity: caps.mem_bytes,
        circuit_capacity: caps.neuron_circuits,
        traffic,
    };
    Ok((items, input))
}

/// Runs the full three-stage pipeline and returns a validated mapping.
pub fn build_mapping(
    net: &NetworkSpec,
    info: &NetworkInfo,
    mesh: &MeshConfig,
    caps: &CoreCapacity,
    density: f64,
    seed: u64,
) -> Result<Mapping> {
    let (items, pinput) = build_items(net, info, caps, density)?;
    build_mapping_from_items(net, info, mesh, items, pinput, density, seed)
}

/// Same pipeline but with a caller-provided traffic matrix (used by the
/// measured-traffic re-mapping option).
pub fn build_mapping_from_items(
    net: &NetworkSpec,
    info: &NetworkInfo,
    mesh: &MeshConfig,
    items: Vec<MapItem>,
    pinput: PartitionInput,
    density: f64,
    seed: u64,
) -> Result<Mapping> {
    let partitions = greedy_partition(&pinput)?;

    // Partition-level traffic graph.
    let part_of: Vec<usize> = {
        let mut v = vec![0; items.len()];
        for (pid, members) in partitions.iter().enumerate() {
            for &m in members {
                v[m] = pid;
            }
        }
        v
    };
    let mut part_traffic: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(a, b, c) in &pinput.traffic {
        let (pa, pb) = (part_of[a], part_of[b]);
        if pa != pb {
            *part_traffic.entry((pa, pb)).or_insert(0.0) += c;
        }
    }
    let traffic_vec: Vec<(usize, usize, f64)> =
        part_traffic.iter().map(|(&(a, b), &c)| (a, b, c)).collect();

    let input_item = items
        .iter()
        .position(|it| it.layer == info.input_layer)
        .expect("input layer has items");
    let start_partition = part_of[input_item];
    let initial = hilbert_place(
        partitions.len(),
        &traffic_vec,
        (mesh.rows, mesh.cols),
        start_partition,
    )?;
    let placement = refine_placement(&initial, &traffic_vec, (mesh.rows, mesh.cols));

    // Cross-core flows aggregated by (src core, dst core).
    let mut flow_rates: BTreeMap<(Coord, Coord), f64> = BTreeMap::new();
    for &(a, b, c) in &pinput.traffic {
        let ca = placement[&part_of[a]];
        let cb = placement[&part_of[b]];
        if ca != cb {
            *flow_rates.entry((ca, cb)).or_insert(0.0) += c;
        }
    }
    let flows: Vec<Flow> = flow_rates
        .iter()
        .map(|(&(src, dst), &rate)| Flow {
            src,
            dst,
            rate,
            candidates: candidate_paths(src, dst, mesh.cols, None),
        })
        .collect();
    let probs = ga_optimize_paths(&flows, &GaParams::default(), seed);

    let mapping = Mapping {
        mesh_rows: mesh.rows,
        mesh_cols: mesh.cols,
        net_digest: network_digest(net),
        items,
        partitions,
        placement: placement.iter().map(|(&p, &c)| (p, c)).collect(),
        flows: flows
            .iter()
            .zip(probs.iter())
            .map(|(f, p)| FlowTable {
                src: f.src,
                dst: f.dst,
                rate: f.rate,
                paths: f
                    .candidates
                    .iter()
                    .cloned()
                    .zip(p.iter().copied())
                    .collect(),
            })
            .collect(),
        seed,
        density,
    };
    mapping.validate(net, info)?;
    Ok(mapping)
}
