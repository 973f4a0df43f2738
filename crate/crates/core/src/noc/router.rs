//! Store-and-forward mesh fabric: per-port input FIFOs, per-link bandwidth,
//! hop-count delivery, and backpressure stalls. Flits are never dropped.
//!
//! Each router exposes five data paths: two local lanes that accept flits
//! generated by the core's own PEs and three remote lanes that decode
//! arriving flits. Layers mapped to a core are statically assigned one lane
//! of each kind, which keeps the lanes contention-free between layers.

use std::collections::{BTreeMap, VecDeque};

use super::routing::{Coord, Link};

/// A flit in transit. `path` holds the remaining nodes to visit; an empty
/// path means the flit is at its destination and ready for the decoder.
#[derive(Debug, Clone)]
pub struct TransitFlit<P> {
    pub path: VecDeque<Coord>,
    /// Remote decode lane at the destination (0..3).
    pub lane: u8,
    pub wire_bits: u32,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Port {
    Local = 0,
    North = 1,
    East = 2,
    South = 3,
    West = 4,
}

const PORT_ORDER: [Port; 5] = [Port::Local, Port::North, Port::East, Port::South, Port::West];

#[derive(Debug)]
pub struct RouterState<P> {
    pub coord: Coord,
    /// Input FIFOs indexed by `Port`.
    fifos: [VecDeque<TransitFlit<P>>; 5],
}

impl<P> RouterState<P> {
    fn new(coord: Coord) -> Self {
        RouterState {
            coord,
            fifos: Default::default(),
        }
    }

    pub fn queued(&self) -> usize {
        self.fifos.iter().map(|f| f.len()).sum()
    }
}

/// Static five-path assignment for the layers mapped onto one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataPathAssignment {
    pub local_lane: u8,
    pub remote_lane: u8,
}

pub fn assign_data_paths(layer_slot: usize) -> DataPathAssignment {
    DataPathAssignment {
        local_lane: (layer_slot % 2) as u8,
        remote_lane: (layer_slot % 3) as u8,
    }
}

#[derive(Debug, Clone, Default)]
pub struct FabricCounters {
    pub link_flits: BTreeMap<Link, u64>,
    pub total_hops: u64,
    pub total_wire_bits: u64,
    pub fifo_accesses: u64,
    pub stall_cycles: u64,
}

pub struct MeshFabric<P> {
    pub rows: u32,
    pub cols: u32,
    pub link_bandwidth: u32,
    pub fifo_capacity: usize,
    routers: Vec<RouterState<P>>,
    pub counters: FabricCounters,
}

impl<P> MeshFabric<P> {
    pub fn new(rows: u32, cols: u32, link_bandwidth: u32, fifo_bytes: u32, flit_bits: u32) -> Self {
        let routers = (0..rows * cols)
            .map(|i| RouterState::new(Coord::new(i / cols, i % cols)))
            .collect();
        MeshFabric {
            rows,
            cols,
            link_bandwidth,
            fifo_capacity: ((fifo_bytes * 8 / flit_bits).max(1)) as usize,
            routers,
            counters: FabricCounters::default(),
        }
    }

    fn index(&self, c: Coord) -> usize {
        (c.row * self.cols + c.col) as usize
    }

    /// Accepts a locally generated flit into the router's local ingress.
    /// Returns false (backpressure) when the local FIFO is full.
    pub fn inject_local(&mut self, at: Coord, flit: TransitFlit<P>) -> bool {
        let idx = self.index(at);
        if self.routers[idx].fifos[Port::Local as usize].len() >= self.fifo_capacity {
            return false;
        }
        self.counters.fifo_accesses += 1;
        self.routers[idx].fifos[Port::Local as usize].push_back(flit);
        true
    }

    /// Free local-ingress slots at a router.
    pub fn local_free_slots(&self, at: Coord) -> usize {
        let idx = (at.row * self.cols + at.col) as usize;
        self.fifo_capacity
            .saturating_sub(self.routers[idx].fifos[Port::Local as usize].len())
    }

    pub fn is_idle(&self) -> bool {
        self.routers.iter().all(|r| r.queued() == 0)
    }

    /// One fabric cycle. Every router considers the head flit of each input
    /// port in fixed order; a flit advances when its outgoing link still has
    /// bandwidth and the downstream FIFO has space, and is delivered to its
    /// remote lane when its path is exhausted (at most one delivery per lane
    /// per router per cycle). Returns delivered flits and whether anything
    /// moved.
    pub fn tick(&mut self) -> (Vec<(Coord, P)>, bool) {
        let mut delivered: Vec<(Coord, P)> = Vec::new();
        let mut moves: Vec<(usize, Port, TransitFlit<P>)> = Vec::new();
        let mut link_used: BTreeMap<Link, u32> = BTreeMap::new();
        // Staged occupancy so a FIFO cannot be overfilled within one cycle.
        let mut staged_len: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut progress = false;

        for r_idx in 0..self.routers.len() {
            let here = self.routers[r_idx].coord;
            let mut lane_used = [false; 3];
            for port in PORT_ORDER {
                let Some(head) = self.routers[r_idx].fifos[port as usize].front() else {
                    continue;
                };
                if head.path.is_empty() {
                    let lane = (head.lane as usize).min(2);
                    if lane_used[lane] {
                        self.counters.stall_cycles += 1;
                        continue;
                    }
                    lane_used[lane] = true;
                    let flit = self.routers[r_idx].fifos[port as usize].pop_front().unwrap();
                    self.counters.fifo_accesses += 1;
                    delivered.push((here, flit.payload));
                    progress = true;
                    continue;
                }
                let next = *head.path.front().unwrap();
                let link: Link = (here, next);
                let used = link_used.entry(link).or_insert(0);
                if *used >= self.link_bandwidth {
                    self.counters.stall_cycles += 1;
                    continue;
                }
                let dst_idx = self.index(next);
                let in_port = incoming_port(here, next);
                let dst_len = self.routers[dst_idx].fifos[in_port as usize].len()
                    + staged_len.get(&(dst_idx, in_port as usize)).copied().unwrap_or(0);
                if dst_len >= self.fifo_capacity {
                    self.counters.stall_cycles += 1;
                    continue;
                }
                *used += 1;
                *staged_len.entry((dst_idx, in_port as usize)).or_insert(0) += 1;
                let mut flit = self.routers[r_idx].fifos[port as usize].pop_front().unwrap();
                flit.path.pop_front();
                self.counters.total_hops += 1;
                self.counters.total_wire_bits += flit.wire_bits as u64;
                *self.counters.link_flits.entry(link).or_insert(0) += 1;
                self.counters.fifo_accesses += 2;
                moves.push((dst_idx, in_port, flit));
                progress = true;
            }
        }
        for (dst_idx, port, flit) in moves {
            self.routers[dst_idx].fifos[port as usize].push_back(flit);
        }
        (delivered, progress)
    }
}

/// Input port at the receiver for a flit travelling `from -> to`.
fn incoming_port(from: Coord, to: Coord) -> Port {
    if from.row < to.row {
        Port::North // arrived moving south, enters from the north side
    } else if from.row > to.row {
        Port::South
    } else if from.col < to.col {
        Port::West
    } else {
        Port::East
    }
}
