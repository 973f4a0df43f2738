//! Processing element model: weight/membrane/tracer buffers, batch-at-a-time
//! spike integration through the adder trees, and the analytic access-count
//! models for the inner-, outer-, and Gustavson-product dataflows.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::QuantParams;
use crate::neuron::{self, StBifState};

/// Static PE parameters. The defaults reproduce the reference design point:
/// 128 neuron circuits with 16-input adder trees give 1024 additions/cycle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PeConfig {
    pub neuron_circuits: u32,
    pub adder_inputs: u32,
    /// Weight-buffer ways: spikes accepted per batch.
    pub n_ways: u32,
    pub weight_buf_bytes: u64,
    pub membrane_buf_bytes: u64,
    pub tracer_buf_bytes: u64,
    /// Partition groups when several layers share one core; each group gets
    /// an equal slice of circuits and buffers, leftovers go to the last.
    pub partition_groups: u32,
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig {
            neuron_circuits: 128,
            adder_inputs: 16,
            n_ways: 17,
            weight_buf_bytes: 102_400,
            membrane_buf_bytes: 307_200,
            tracer_buf_bytes: 102_400,
            partition_groups: 1,
        }
    }
}

impl PeConfig {
    pub fn adds_per_cycle(&self) -> u64 {
        self.neuron_circuits as u64 * (self.adder_inputs as u64 / 2)
    }

    /// Neuron circuits available to one of `groups` co-resident layers.
    pub fn group_circuits(&self, groups: u32, group: u32) -> u32 {
        let base = self.neuron_circuits / groups;
        if group + 1 == groups {
            self.neuron_circuits - base * (groups - 1)
        } else {
            base
        }
    }

    /// Cycles to accumulate a `k`-spike batch into `cols` membrane columns
    /// with `circuits` neuron circuits (the share granted to this layer),
    /// bounded so the additions scheduled in any single cycle never exceed
    /// the group's adder capacity.
    pub fn batch_cycles(&self, k: usize, cols: usize, circuits: u32) -> u64 {
        if k == 0 || cols == 0 {
            return 1;
        }
        let group_adds = (circuits.max(1) as u64) * (self.adder_inputs as u64 / 2).max(1);
        let row_passes = (k as u64).div_ceil(self.adder_inputs as u64);
        let col_passes = (cols as u64).div_ceil(circuits.max(1) as u64);
        let capacity = (k as u64 * cols as u64).div_ceil(group_adds);
        row_passes.max(col_passes).max(capacity).max(1)
    }
}

/// Per-component access counters; the energy model prices these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounters {
    pub weight_row_reads: u64,
    pub membrane_row_reads: u64,
    pub membrane_row_writes: u64,
    pub tracer_row_reads: u64,
    pub tracer_row_writes: u64,
    pub adder_ops: u64,
    pub fire_evals: u64,
}

impl AccessCounters {
    pub fn add(&mut self, other: &AccessCounters) {
        self.weight_row_reads += other.weight_row_reads;
        self.membrane_row_reads += other.membrane_row_reads;
        self.membrane_row_writes += other.membrane_row_writes;
        self.tracer_row_reads += other.tracer_row_reads;
        self.tracer_row_writes += other.tracer_row_writes;
        self.adder_ops += other.adder_ops;
        self.fire_evals += other.fire_evals;
    }

    pub fn membrane_row_accesses(&self) -> u64 {
        self.membrane_row_reads + self.membrane_row_writes
    }
}

/// One spike within a row-aligned batch: weight-row index plus polarity
/// (`negative = true` selects the negated weight row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpike {
    pub weight_row: u32,
    pub negative: bool,
}

/// A row-aligned mini-batch as delivered by one bundled-AER flit.
#[derive(Debug, Clone)]
pub struct SpikeBatch {
    pub row: u32,
    pub spikes: Vec<BatchSpike>,
}

/// Weight, membrane, and tracer storage for one layer tile. Columns span
/// `col_range` of the layer's output; rows index spines/tokens.
#[derive(Debug, Clone)]
pub struct PeBuffers {
    pub weights: Vec<Vec<i32>>,
    pub membrane: Vec<i64>,
    pub tracer: Vec<i32>,
    pub rows: usize,
    pub cols: usize,
    pub col_offset: usize,
    pub quant: QuantParams,
}

/// Spike emitted by a fire evaluation, in tile-local terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmittedSpike {
    pub row: u32,
    /// Global output column (tile offset already applied).
    pub position: u32,
    pub sign: i8,
}

impl PeBuffers {
    pub fn new(
        weights: &[Vec<i32>],
        rows: usize,
        col_range: std::ops::Range<usize>,
        quant: QuantParams,
    ) -> Self {
        let cols = col_range.len();
        let tile: Vec<Vec<i32>> = weights
            .iter()
            .map(|r| r[col_range.clone()].to_vec())
            .collect();
        PeBuffers {
            weights: tile,
            membrane: vec![0; rows * cols],
            tracer: vec![0; rows * cols],
            rows,
            cols,
            col_offset: col_range.start,
            quant,
        }
    }

    fn state(&self, row: usize, col: usize) -> StBifState {
        StBifState {
            v: self.membrane[row * self.cols + col],
            s: self.tracer[row * self.cols + col],
        }
    }

    fn set_state(&mut self, row: usize, col: usize, st: StBifState) {
        self.membrane[row * self.cols + col] = st.v;
        self.tracer[row * self.cols + col] = st.s;
    }

    /// Mini-batch Gustavson step: read the membrane row once, accumulate all
    /// batch weight rows (negated for negative spikes), fire each column
    /// against the tracer row, write both rows back once.
    ///
    /// Counter deltas per call: `|spikes|` weight-row reads, one membrane
    /// read + write, one tracer read + write, `|spikes| * cols` adder ops,
    /// `cols` fire evaluations. An empty batch touches nothing.
    pub fn mm_sc_minibatch(
        &mut self,
        batch: &SpikeBatch,
        n_ways: u32,
        counters: &mut AccessCounters,
    ) -> Result<Vec<EmittedSpike>> {
        if batch.row as usize >= self.rows {
            return Err(SimError::RowIdOutOfRange {
                row: batch.row as usize,
                rows: self.rows,
            });
        }
        if batch.spikes.is_empty() {
            return Ok(Vec::new());
        }
        if batch.spikes.len() > n_ways as usize {
            return Err(SimError::BatchTooWide {
                got: batch.spikes.len(),
                ways: n_ways as usize,
            });
        }
        let row = batch.row as usize;
        counters.membrane_row_reads += 1;
        counters.tracer_row_reads += 1;

        // Integration: sum the selected weight rows into the membrane row.
        let mut sums = vec![0i64; self.cols];
        for sp in &batch.spikes {
            let wr = sp.weight_row as usize;
            if wr >= self.weights.len() {
                return Err(SimError::RowIdOutOfRange {
                    row: wr,
                    rows: self.weights.len(),
                });
            }
            counters.weight_row_reads += 1;
            let sign = if sp.negative { -1i64 } else { 1i64 };
            for (c, &w) in self.weights[wr].iter().enumerate() {
                sums[c] += sign * w as i64;
            }
        }
        counters.adder_ops += batch.spikes.len() as u64 * self.cols as u64;

        // Fire and soft-reset per column, one evaluation per batch.
        let mut emitted = Vec::new();
        for c in 0..self.cols {
            let st = self.state(row, c);
            let (y, next) = neuron::step(st, sums[c], &self.quant);
            self.set_state(row, c, next);
            if y != 0 {
                emitted.push(EmittedSpike {
                    row: batch.row,
                    position: (self.col_offset + c) as u32,
                    sign: y,
                });
            }
        }
        counters.fire_evals += self.cols as u64;
        counters.membrane_row_writes += 1;
        counters.tracer_row_writes += 1;
        Ok(emitted)
    }

    /// Zero-input evaluation of one row: the per-time-step advance that
    /// drains leftover potential. Skipped by callers when the row is already
    /// quiescent.
    pub fn drain_row(&mut self, row: u32, counters: &mut AccessCounters) -> Result<Vec<EmittedSpike>> {
        if row as usize >= self.rows {
            return Err(SimError::RowIdOutOfRange {
                row: row as usize,
                rows: self.rows,
            });
        }
        let r = row as usize;
        counters.membrane_row_reads += 1;
        counters.tracer_row_reads += 1;
        let mut emitted = Vec::new();
        for c in 0..self.cols {
            let st = self.state(r, c);
            let (y, next) = neuron::step(st, 0, &self.quant);
            self.set_state(r, c, next);
            if y != 0 {
                emitted.push(EmittedSpike {
                    row,
                    position: (self.col_offset + c) as u32,
                    sign: y,
                });
            }
        }
        counters.fire_evals += self.cols as u64;
        counters.membrane_row_writes += 1;
        counters.tracer_row_writes += 1;
        Ok(emitted)
    }

    pub fn row_quiescent(&self, row: u32) -> bool {
        let r = row as usize;
        (0..self.cols).all(|c| neuron::is_quiescent(&self.state(r, c), &self.quant))
    }

    pub fn tracer_row(&self, row: u32) -> &[i32] {
        let r = row as usize;
        &self.tracer[r * self.cols..(r + 1) * self.cols]
    }
}

/// Balanced contiguous column tiling: ranges cover all columns, are pairwise
/// disjoint, and differ in size by at most one. Spikes are broadcast to
/// every tile.
pub fn tile_columns(cols: usize, n_pes: usize) -> Vec<std::ops::Range<usize>> {
    assert!(n_pes >= 1);
    let tiles = n_pes.min(cols.max(1));
    let base = cols / tiles;
    let extra = cols % tiles;
    let mut out = Vec::with_capacity(tiles);
    let mut start = 0;
    for i in 0..tiles {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// A spike matrix for the counting models: `nnz[row]` lists the occupied
/// columns of that row, grouped into the row-aligned batches the bundled
/// protocol would deliver.
#[derive(Debug, Clone, Default)]
pub struct SpikeMatrix {
    /// Per row: batches of occupied weight-row indices.
    pub batches: Vec<Vec<Vec<u32>>>,
}

impl SpikeMatrix {
    pub fn nnz(&self) -> u64 {
        self.batches
            .iter()
            .flat_map(|row| row.iter())
            .map(|b| b.len() as u64)
            .sum()
    }

    pub fn batch_count(&self) -> u64 {
        self.batches
            .iter()
            .map(|row| row.iter().filter(|b| !b.is_empty()).count() as u64)
            .sum()
    }

    pub fn rows_touched(&self) -> u64 {
        self.batches
            .iter()
            .filter(|row| row.iter().any(|b| !b.is_empty()))
            .count() as u64
    }
}

/// Inner-product counting model: each touched output row reads the full
/// dense weight matrix (`weight_rows` rows) and accesses its membrane row
/// once for read and once for write.
pub fn count_inner_product(m: &SpikeMatrix, weight_rows: u64, cols: u64) -> AccessCounters {
    let rows = m.rows_touched();
    AccessCounters {
        weight_row_reads: rows * weight_rows,
        membrane_row_reads: rows,
        membrane_row_writes: rows,
        tracer_row_reads: rows,
        tracer_row_writes: rows,
        adder_ops: m.nnz() * cols,
        fire_evals: rows * cols,
    }
}

/// Outer-product counting model: every spike re-reads and re-writes its
/// membrane row.
pub fn count_outer_product(m: &SpikeMatrix, cols: u64) -> AccessCounters {
    let nnz = m.nnz();
    AccessCounters {
        weight_row_reads: nnz,
        membrane_row_reads: nnz,
        membrane_row_writes: nnz,
        tracer_row_reads: nnz,
        tracer_row_writes: nnz,
        adder_ops: nnz * cols,
        fire_evals: nnz * cols,
    }
}

/// Mini-batch Gustavson counting model: one membrane read/write pair per
/// row-aligned batch, sparse weight reads.
pub fn count_gustavson(m: &SpikeMatrix, cols: u64) -> AccessCounters {
    let batches = m.batch_count();
    AccessCounters {
        weight_row_reads: m.nnz(),
        membrane_row_reads: batches,
        membrane_row_writes: batches,
        tracer_row_reads: batches,
        tracer_row_writes: batches,
        adder_ops: m.nnz() * cols,
        fire_evals: batches * cols,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(v_thr: i64, s_min: i32, s_max: i32) -> QuantParams {
        QuantParams {
            v_thr,
            s_min,
            s_max,
            weight_bits: 4,
        }
    }

    /// The worked MM-sc example: batch {(0,1),(0,3)} accumulates weight rows
    /// [2,2,3,3] and [1,3,1,1] into membrane row 0 = [3,5,4,4].
    #[test]
    fn minibatch_reproduces_worked_example() {
        let weights = vec![
            vec![1, 1, 2, 1],
            vec![2, 2, 3, 3],
            vec![3, 1, 1, 2],
            vec![1, 3, 1, 1],
        ];
        // Large threshold so no spike fires and the raw sums stay visible.
        let mut pe = PeBuffers::new(&weights, 2, 0..4, q(100, 0, 15));
        let mut counters = AccessCounters::default();
        let batch = SpikeBatch {
            row: 0,
            spikes: vec![
                BatchSpike { weight_row: 1, negative: false },
                BatchSpike { weight_row: 3, negative: false },
            ],
        };
        let emitted = pe.mm_sc_minibatch(&batch, 17, &mut counters).unwrap();
        assert_eq!(&pe.membrane[0..4], &[3, 5, 4, 4]);
        assert!(emitted.is_empty());
        assert_eq!(counters.weight_row_reads, 2);
        assert_eq!(counters.membrane_row_reads, 1);
        assert_eq!(counters.membrane_row_writes, 1);
        assert_eq!(counters.tracer_row_reads, 1);
        assert_eq!(counters.tracer_row_writes, 1);
        assert_eq!(counters.adder_ops, 8);
    }

    #[test]
    fn empty_batch_touches_nothing() {
        let weights = vec![vec![1, 1]];
        let mut pe = PeBuffers::new(&weights, 1, 0..2, q(10, 0, 15));
        let mut counters = AccessCounters::default();
        let batch = SpikeBatch { row: 0, spikes: vec![] };
        pe.mm_sc_minibatch(&batch, 17, &mut counters).unwrap();
        assert_eq!(counters, AccessCounters::default());
        assert_eq!(pe.membrane, vec![0, 0]);
    }

    #[test]
    fn negative_spike_accumulates_negated_row() {
        // s_min = 0 keeps the fire component silent on negative potentials.
        let weights = vec![vec![2, -3, 5]];
        let mut pos = PeBuffers::new(&weights, 1, 0..3, q(100, 0, 8));
        let mut neg = pos.clone();
        let mut c = AccessCounters::default();
        pos.mm_sc_minibatch(
            &SpikeBatch { row: 0, spikes: vec![BatchSpike { weight_row: 0, negative: false }] },
            17,
            &mut c,
        )
        .unwrap();
        neg.mm_sc_minibatch(
            &SpikeBatch { row: 0, spikes: vec![BatchSpike { weight_row: 0, negative: true }] },
            17,
            &mut c,
        )
        .unwrap();
        for i in 0..3 {
            assert_eq!(neg.membrane[i], -pos.membrane[i]);
        }
    }

    #[test]
    fn batch_wider_than_ways_is_rejected() {
        let weights = vec![vec![1]; 8];
        let mut pe = PeBuffers::new(&weights, 1, 0..1, q(10, 0, 15));
        let mut c = AccessCounters::default();
        let batch = SpikeBatch {
            row: 0,
            spikes: (0..5)
                .map(|i| BatchSpike { weight_row: i, negative: false })
                .collect(),
        };
        assert!(matches!(
            pe.mm_sc_minibatch(&batch, 4, &mut c),
            Err(SimError::BatchTooWide { got: 5, ways: 4 })
        ));
    }

    #[test]
    fn row_out_of_range_is_rejected() {
        let weights = vec![vec![1]];
        let mut pe = PeBuffers::new(&weights, 2, 0..1, q(10, 0, 15));
        let mut c = AccessCounters::default();
        let batch = SpikeBatch {
            row: 7,
            spikes: vec![BatchSpike { weight_row: 0, negative: false }],
        };
        assert!(matches!(
            pe.mm_sc_minibatch(&batch, 17, &mut c),
            Err(SimError::RowIdOutOfRange { row: 7, rows: 2 })
        ));
    }

    /// Batch-by-batch execution must match per-spike execution bitwise once
    /// both have drained: integration is a reassociation of integer adds and
    /// the quiescent state is unique for a given total.
    #[test]
    fn minibatch_equals_per_spike_at_quiescence() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let rows = rng.gen_range(1..4usize);
            let wrows = rng.gen_range(1..6usize);
            let cols = rng.gen_range(1..6usize);
            let weights: Vec<Vec<i32>> = (0..wrows)
                .map(|_| (0..cols).map(|_| rng.gen_range(-4..5)).collect())
                .collect();
            let qp = q(rng.gen_range(2..8), -2, 10);
            let mut batched = PeBuffers::new(&weights, rows, 0..cols, qp);
            let mut single = batched.clone();
            let mut c = AccessCounters::default();
            for _ in 0..rng.gen_range(1..8) {
                let row = rng.gen_range(0..rows) as u32;
                let k = rng.gen_range(1..5usize);
                let spikes: Vec<BatchSpike> = (0..k)
                    .map(|_| BatchSpike {
                        weight_row: rng.gen_range(0..wrows) as u32,
                        negative: rng.gen_bool(0.3),
                    })
                    .collect();
                batched
                    .mm_sc_minibatch(&SpikeBatch { row, spikes: spikes.clone() }, 17, &mut c)
                    .unwrap();
                for sp in spikes {
                    single
                        .mm_sc_minibatch(&SpikeBatch { row, spikes: vec![sp] }, 17, &mut c)
                        .unwrap();
                }
            }
            for pe in [&mut batched, &mut single] {
                for r in 0..rows as u32 {
                    while !pe.row_quiescent(r) {
                        pe.drain_row(r, &mut c).unwrap();
                    }
                }
            }
            assert_eq!(batched.membrane, single.membrane);
            assert_eq!(batched.tracer, single.tracer);
        }
    }

    #[test]
    fn tiling_matches_worked_split() {
        assert_eq!(tile_columns(4, 2), vec![0..2, 2..4]);
        assert_eq!(tile_columns(5, 2), vec![0..3, 3..5]);
        assert_eq!(tile_columns(4, 1), vec![0..4]);
    }

    #[test]
    fn tiling_covers_and_is_disjoint() {
        for cols in 1..40 {
            for pes in 1..8 {
                let tiles = tile_columns(cols, pes);
                let mut seen = vec![false; cols];
                for t in &tiles {
                    for i in t.clone() {
                        assert!(!seen[i]);
                        seen[i] = true;
                    }
                }
                assert!(seen.iter().all(|&s| s));
                let sizes: Vec<usize> = tiles.iter().map(|t| t.len()).collect();
                let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(max - min <= 1);
            }
        }
    }

    #[test]
    fn counting_models_on_empty_matrix() {
        let m = SpikeMatrix { batches: vec![vec![], vec![]] };
        assert_eq!(count_inner_product(&m, 8, 4), AccessCounters::default());
        assert_eq!(count_outer_product(&m, 4), AccessCounters::default());
        assert_eq!(count_gustavson(&m, 4), AccessCounters::default());
    }

    /// Two batches on rows 0 and 1 give four membrane-row accesses under
    /// Gustavson; outer-product pays two per spike.
    #[test]
    fn counting_models_on_worked_instance() {
        let m = SpikeMatrix {
            batches: vec![vec![vec![1, 3]], vec![vec![0, 2, 3]]],
        };
        let g = count_gustavson(&m, 4);
        assert_eq!(g.membrane_row_accesses(), 4);
        assert_eq!(g.weight_row_reads, 5);
        let o = count_outer_product(&m, 4);
        assert_eq!(o.membrane_row_accesses(), 2 * 5);
        let i = count_inner_product(&m, 4, 4);
        assert_eq!(i.weight_row_reads, 2 * 4);
        assert_eq!(i.membrane_row_accesses(), 4);
    }

    #[test]
    fn gustavson_never_exceeds_outer_membrane_accesses() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let rows = rng.gen_range(1..6);
            let mut m = SpikeMatrix { batches: vec![Vec::new(); rows] };
            let mut singleton_only = true;
            for row in m.batches.iter_mut() {
                for _ in 0..rng.gen_range(0..4) {
                    let k = rng.gen_range(1..6);
                    if k > 1 {
                        singleton_only = false;
                    }
                    row.push((0..k).map(|_| rng.gen_range(0..8)).collect());
                }
            }
            let g = count_gustavson(&m, 4).membrane_row_accesses();
            let o = count_outer_product(&m, 4).membrane_row_accesses();
            assert!(g <= o);
            if singleton_only {
                assert_eq!(g, o);
            } else if m.nnz() > 0 {
                assert!(g < o);
            }
        }
    }

    #[test]
    fn batch_cycles_respects_adder_capacity() {
        let cfg = PeConfig::default();
        // 16 rows x 128 cols = 2048 adds: needs two cycles at 1024 adds/cycle.
        assert_eq!(cfg.batch_cycles(16, 128, 128), 2);
        assert_eq!(cfg.batch_cycles(1, 4, 128), 1);
        for k in 1..24 {
            for cols in 1..200 {
                for circuits in [32u32, 64, 128] {
                    let cycles = cfg.batch_cycles(k, cols, circuits);
                    let group_adds = circuits as u64 * (cfg.adder_inputs as u64 / 2);
                    assert!(k as u64 * cols as u64 <= cycles * group_adds);
                }
            }
        }
    }
}
