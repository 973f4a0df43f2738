//! Per-layer functional executors.
//!
//! Matrix layers run on tiled PE buffers; residual, ssoftmax, slayernorm,
//! and attention run on router-side ST-BIF neuron banks that requantize a
//! deterministic integer target. Every executor converges to the
//! quantized-ReLU reference because each bank's cumulative input telescopes
//! to the stable-state target.

use crate::model::{LayerShape, QuantParams};
use crate::neuron::{self, StBifState};
use crate::noc::units::{slayernorm_int, ssoftmax_int};
use crate::pe::{AccessCounters, BatchSpike, EmittedSpike, PeBuffers, SpikeBatch};

/// A bank of ST-BIF neurons without synaptic weights: callers feed already
/// weighted sums. One fire evaluation per column per feed.
#[derive(Debug, Clone)]
pub struct NeuronBank {
    states: Vec<StBifState>,
    pub rows: usize,
    pub cols: usize,
    pub quant: QuantParams,
}

impl NeuronBank {
    pub fn new(rows: usize, cols: usize, quant: QuantParams) -> Self {
        NeuronBank {
            states: vec![StBifState::new(); rows * cols],
            rows,
            cols,
            quant,
        }
    }

    pub fn feed_row(
        &mut self,
        row: usize,
        sums: &[i64],
        counters: &mut AccessCounters,
    ) -> Vec<(u32, i8)> {
        counters.membrane_row_reads += 1;
        counters.tracer_row_reads += 1;
        let mut out = Vec::new();
        for c in 0..self.cols {
            let idx = row * self.cols + c;
            let (y, next) = neuron::step(self.states[idx], sums[c], &self.quant);
            self.states[idx] = next;
            if y != 0 {
                out.push((c as u32, y));
            }
        }
        counters.fire_evals += self.cols as u64;
        counters.membrane_row_writes += 1;
        counters.tracer_row_writes += 1;
        out
    }

    pub fn drain_row(&mut self, row: usize, counters: &mut AccessCounters) -> Vec<(u32, i8)> {
        let zeros = vec![0i64; self.cols];
        self.feed_row(row, &zeros, counters)
    }

    pub fn row_quiescent(&self, row: usize) -> bool {
        (0..self.cols)
            .all(|c| neuron::is_quiescent(&self.states[row * self.cols + c], &self.quant))
    }

    pub fn quiescent(&self) -> bool {
        (0..self.rows).all(|r| self.row_quiescent(r))
    }

    pub fn tracer_levels(&self) -> Vec<i64> {
        self.states.iter().map(|s| s.s as i64).collect()
    }

    pub fn tracer_row(&self, row: usize) -> Vec<i64> {
        (0..self.cols)
            .map(|c| self.states[row * self.cols + c].s as i64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Ssoftmax,
    Slayernorm,
}

/// Execution state for one layer.
pub enum LayerExec {
    /// Conv / linear: column-tiled ST-BIF arrays, `tiles[shard][pe]`.
    MmSc { tiles: Vec<Vec<PeBuffers>> },
    /// Two-operand saturating merge through identity-weight neurons.
    Residual { bank: NeuronBank },
    /// Row-local integer function (ssoftmax / slayernorm) with requantizing
    /// neurons; keeps a mirror of the cumulative input levels.
    RowUnit {
        kind: UnitKind,
        input_levels: Vec<i64>,
        prev_target: Vec<i64>,
        bank: NeuronBank,
        cols_in: usize,
    },
    /// Full attention block: Q/K/V projections, incremental score product,
    /// integer softmax with requantization, incremental value mixing.
    Attention(Box<AttentionExec>),
}

pub struct AttentionExec {
    pub weights: Vec<Vec<i32>>,
    pub n_tok: usize,
    pub d_in: usize,
    pub head: usize,
    pub q: NeuronBank,
    pub k: NeuronBank,
    pub v: NeuronBank,
    /// Requantized attention probabilities, `n_tok x n_tok`.
    pub p: NeuronBank,
    pub out: NeuronBank,
    /// Exact running Q.K^T on current tracer levels.
    scores: Vec<i64>,
    prev_soft: Vec<i64>,
}

impl AttentionExec {
    pub fn new(weights: Vec<Vec<i32>>, n_tok: usize, d_in: usize, quant: QuantParams) -> Self {
        let head = weights.first().map_or(0, |r| r.len()) / 3;
        AttentionExec {
            weights,
            n_tok,
            d_in,
            head,
            q: NeuronBank::new(n_tok, head, quant),
            k: NeuronBank::new(n_tok, head, quant),
            v: NeuronBank::new(n_tok, head, quant),
            p: NeuronBank::new(n_tok, n_tok, quant),
            out: NeuronBank::new(n_tok, head, quant),
            scores: vec![0; n_tok * n_tok],
            prev_soft: vec![0; n_tok * n_tok],
        }
    }

    /// One time-step for the whole block. `row_spikes[x]` holds the input
    /// spikes (dim position, sign) of token x for this step, already in
    /// canonical order. Returns per-token output spikes.
    pub fn process_step(
        &mut self,
        row_spikes: &[Vec<(u32, i8)>],
        counters: &mut AccessCounters,
    ) -> Vec<Vec<(u32, i8)>> {
        let n = self.n_tok;
        let h = self.head;
        let quant = self.q.quant;
        let scale = quant.ssoftmax_scale();

        let q_old: Vec<i64> = self.q.tracer_levels();
        let k_old: Vec<i64> = self.k.tracer_levels();
        let v_old: Vec<i64> = self.v.tracer_levels();

        // Projection feed: each input spike selects one weight row for all
        // three projections.
        for (x, spikes) in row_spikes.iter().enumerate() {
            let mut sums = vec![0i64; 3 * h];
            for &(d, sign) in spikes {
                counters.weight_row_reads += 1;
                let wrow = &self.weights[d as usize];
                for (j, &w) in wrow.iter().enumerate() {
                    sums[j] += sign as i64 * w as i64;
                }
            }
            counters.adder_ops += spikes.len() as u64 * (3 * h) as u64;
            for (part, bank) in [&mut self.q, &mut self.k, &mut self.v].into_iter().enumerate() {
                let part_sums = &sums[part * h..(part + 1) * h];
                let zero = part_sums.iter().all(|&s| s == 0);
                if !zero || !bank.row_quiescent(x) {
                    bank.feed_row(x, part_sums, counters);
                }
            }
        }

        let q_new = self.q.tracer_levels();
        let k_new = self.k.tracer_levels();
        let v_new = self.v.tracer_levels();

        // Incremental score update keeps scores == Q.K^T exactly:
        // dS = dQ . K_new^T + Q_old . dK^T.
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                let mut ds = 0i64;
                for j in 0..h {
                    let dq = q_new[a * h + j] - q_old[a * h + j];
                    let dk = k_new[b * h + j] - k_old[b * h + j];
                    if dq != 0 {
                        ds += dq * k_new[b * h + j];
                        counters.adder_ops += 1;
                    }
                    if dk != 0 {
                        ds += q_old[a * h + j] * dk;
                        counters.adder_ops += 1;
                    }
                }
                if ds != 0 {
                    self.scores[a * n + b] += ds;
                    changed = true;
                }
            }
        }

        // Softmax recompute per row, delta-fed into the probability bank.
        let p_old: Vec<i64> = self.p.tracer_levels();
        for a in 0..n {
            let target = ssoftmax_int(&self.scores[a * n..(a + 1) * n], scale);
            let sums: Vec<i64> = (0..n)
                .map(|b| target[b] - self.prev_soft[a * n + b])
                .collect();
            self.prev_soft[a * n..(a + 1) * n].copy_from_slice(&target);
            let zero = sums.iter().all(|&s| s == 0);
            if !zero || !self.p.row_quiescent(a) {
                self.p.feed_row(a, &sums, counters);
            }
        }
        let _ = changed;
        let p_new = self.p.tracer_levels();

        // Value mixing, same incremental product on (P, V).
        let mut outputs = Vec::with_capacity(n);
        for a in 0..n {
            let mut sums = vec![0i64; h];
            for b in 0..n {
                let dp = p_new[a * n + b] - p_old[a * n + b];
                for j in 0..h {
                    let dv = v_new[b * h + j] - v_old[b * h + j];
                    if dp != 0 {
                        sums[j] += dp * v_new[b * h + j];
                        counters.adder_ops += 1;
                    }
                    if dv != 0 {
                        sums[j] += p_old[a * n + b] * dv;
                        counters.adder_ops += 1;
                    }
                }
            }
            let zero = sums.iter().all(|&s| s == 0);
            let spikes = if !zero || !self.out.row_quiescent(a) {
                self.out.feed_row(a, &sums, counters)
            } else {
                Vec::new()
            };
            outputs.push(spikes);
        }
        outputs
    }

    pub fn quiescent(&self) -> bool {
        self.q.quiescent()
            && self.k.quiescent()
            && self.v.quiescent()
            && self.p.quiescent()
            && self.out.quiescent()
    }
}

impl LayerExec {
    /// Cumulative output spike tracers as integer levels, row-major.
    pub fn tracer_levels(&self, shape: LayerShape) -> Vec<i64> {
        match self {
            LayerExec::MmSc { tiles } => {
                let mut out = vec![0i64; shape.rows * shape.cols];
                for shard in tiles {
                    for pe in shard {
                        for r in 0..pe.rows {
                            for (c_local, &t) in pe.tracer_row(r as u32).iter().enumerate() {
                                out[r * shape.cols + pe.col_offset + c_local] = t as i64;
                            }
                        }
                    }
                }
                out
            }
            LayerExec::Residual { bank } => bank.tracer_levels(),
            LayerExec::RowUnit { bank, .. } => bank.tracer_levels(),
            LayerExec::Attention(att) => att.out.tracer_levels(),
        }
    }

    pub fn quiescent(&self) -> bool {
        match self {
            LayerExec::MmSc { tiles } => tiles.iter().flatten().all(|pe| {
                (0..pe.rows as u32).all(|r| pe.row_quiescent(r))
            }),
            LayerExec::Residual { bank } => bank.quiescent(),
            LayerExec::RowUnit { bank, .. } => bank.quiescent(),
            LayerExec::Attention(att) => att.quiescent(),
        }
    }
}

/// Dense single-evaluation integration used by the inner-product dataflow:
/// reads every weight row once per touched output row regardless of
/// sparsity, with one fire evaluation.
pub fn mm_sc_dense(
    pe: &mut PeBuffers,
    batch: &SpikeBatch,
    counters: &mut AccessCounters,
) -> crate::error::Result<Vec<EmittedSpike>> {
    if batch.spikes.is_empty() {
        return Ok(Vec::new());
    }
    let row = batch.row as usize;
    if row >= pe.rows {
        return Err(crate::error::SimError::RowIdOutOfRange { row, rows: pe.rows });
    }
    counters.weight_row_reads += pe.weights.len() as u64;
    counters.membrane_row_reads += 1;
    counters.tracer_row_reads += 1;
    let mut sums = vec![0i64; pe.cols];
    for sp in &batch.spikes {
        let sign = if sp.negative { -1i64 } else { 1i64 };
        for (c, &w) in pe.weights[sp.weight_row as usize].iter().enumerate() {
            sums[c] += sign * w as i64;
        }
    }
    counters.adder_ops += batch.spikes.len() as u64 * pe.cols as u64;
    let mut emitted = Vec::new();
    for c in 0..pe.cols {
        let idx = row * pe.cols + c;
        let st = StBifState {
            v: pe.membrane[idx],
            s: pe.tracer[idx],
        };
        let (y, next) = neuron::step(st, sums[c], &pe.quant);
        pe.membrane[idx] = next.v;
        pe.tracer[idx] = next.s;
        if y != 0 {
            emitted.push(EmittedSpike {
                row: batch.row,
                position: (pe.col_offset + c) as u32,
                sign: y,
            });
        }
    }
    counters.fire_evals += pe.cols as u64;
    counters.membrane_row_writes += 1;
    counters.tracer_row_writes += 1;
    Ok(emitted)
}

/// Splits a batch into per-spike singletons (outer-product dataflow).
pub fn split_singletons(batch: &SpikeBatch) -> Vec<SpikeBatch> {
    batch
        .spikes
        .iter()
        .map(|&sp| SpikeBatch {
            row: batch.row,
            spikes: vec![sp],
        })
        .collect()
}

/// Residual merge sums for one row: each incoming spike contributes a full
/// threshold so the bank tracer counts the saturating sum of both operands.
pub fn residual_sums(cols: usize, v_thr: i64, spikes: &[(u32, i8)]) -> Vec<i64> {
    let mut sums = vec![0i64; cols];
    for &(pos, sign) in spikes {
        sums[pos as usize] += sign as i64 * v_thr;
    }
    sums
}

/// Recomputes a row-unit target from the mirrored input levels.
pub fn unit_target(kind: UnitKind, levels_row: &[i64], quant: &QuantParams) -> Vec<i64> {
    match kind {
        UnitKind::Ssoftmax => ssoftmax_int(levels_row, quant.ssoftmax_scale()),
        UnitKind::Slayernorm => slayernorm_int(levels_row, quant.slayernorm_gain()),
    }
}

/// Work items processed by a PE lane.
#[derive(Debug, Clone, Copy)]
pub struct WorkItem {
    pub step: u32,
    pub row: u32,
    pub cycles: u64,
}

#[derive(Debug, Default)]
pub struct PeLane {
    pub queue: std::collections::VecDeque<WorkItem>,
    pub remaining: u64,
}

impl PeLane {
    pub fn push(&mut self, item: WorkItem) {
        self.queue.push_back(item);
    }

    pub fn idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Advances one cycle; returns the completed item, if any.
    pub fn tick(&mut self) -> Option<WorkItem> {
        let head = self.queue.front()?;
        if self.remaining == 0 {
            self.remaining = head.cycles;
        }
        self.remaining -= 1;
        if self.remaining == 0 {
            self.queue.pop_front()
        } else {
            None
        }
    }
}

pub fn batch_spikes_from_positions(spikes: &[(u32, i8)]) -> Vec<BatchSpike> {
    spikes
        .iter()
        .map(|&(pos, sign)| BatchSpike {
            weight_row: pos,
            negative: sign < 0,
        })
        .collect()
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

    #[test]
    fn bank_tracks_cumulative_levels() {
        let mut bank = NeuronBank::new(1, 2, q(10, 0, 15));
        let mut c = AccessCounters::default();
        bank.feed_row(0, &[25, 7], &mut c);
        // One eval: one spike max per column.
        assert_eq!(bank.tracer_row(0), vec![1, 0]);
        while !bank.row_quiescent(0) {
            bank.drain_row(0, &mut c);
        }
        assert_eq!(bank.tracer_row(0), vec![2, 0]);
    }

    #[test]
    fn attention_converges_to_reference() {
        use crate::model::{qann_forward, LayerKind, LayerSpec, NetworkSpec, TokenGeom};
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n_tok = rng.gen_range(1..4usize);
            let d_in = rng.gen_range(1..4usize);
            let head = rng.gen_range(1..3usize);
            let quant = q(rng.gen_range(2..6), 0, 15);
            let weights: Vec<Vec<i32>> = (0..d_in)
                .map(|_| (0..3 * head).map(|_| rng.gen_range(-3..4)).collect())
                .collect();
            let input: Vec<i64> = (0..n_tok * d_in).map(|_| rng.gen_range(0..5)).collect();

            // Reference through the network oracle.
            let net = NetworkSpec {
                time_steps: 64,
                layers: vec![
                    LayerSpec {
                        kind: LayerKind::Linear,
                        quant: q(1, 0, 31),
                        conv_geom: None,
                        token_geom: Some(TokenGeom {
                            tokens: n_tok as u32,
                            dim: d_in as u32,
                        }),
                        weights: (0..d_in)
                            .map(|r| (0..d_in).map(|c| i32::from(r == c)).collect())
                            .collect(),
                    },
                    LayerSpec {
                        kind: LayerKind::Attention,
                        quant,
                        conv_geom: None,
                        token_geom: Some(TokenGeom {
                            tokens: n_tok as u32,
                            dim: d_in as u32,
                        }),
                        weights: weights.clone(),
                    },
                ],
                edges: vec![(0, 1)],
            };
            let info = net.compile().unwrap();
            let expect = qann_forward(&net, &info, &input).unwrap()[1].clone();

            // Streamed execution: unary-encoded inputs over time-steps,
            // then zero-input steps until quiescent.
            let mut att = AttentionExec::new(weights, n_tok, d_in, quant);
            let mut counters = AccessCounters::default();
            let t_max = input.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as u32;
            for t in 1..=t_max + 40 {
                let mut rows: Vec<Vec<(u32, i8)>> = vec![Vec::new(); n_tok];
                if t <= t_max {
                    for (i, &v) in input.iter().enumerate() {
                        if v.unsigned_abs() as u32 >= t {
                            rows[i / d_in].push(((i % d_in) as u32, v.signum() as i8));
                        }
                    }
                }
                att.process_step(&rows, &mut counters);
                if t > t_max && att.quiescent() {
                    break;
                }
            }
            assert!(att.quiescent(), "attention failed to settle");
            assert_eq!(att.out.tracer_levels(), expect);
        }
    }

    #[test]
    fn lane_serializes_work() {
        let mut lane = PeLane::default();
        lane.push(WorkItem { step: 1, row: 0, cycles: 2 });
        lane.push(WorkItem { step: 1, row: 1, cycles: 1 });
        assert!(lane.tick().is_none());
        let done = lane.tick().unwrap();
        assert_eq!(done.row, 0);
        let done = lane.tick().unwrap();
        assert_eq!(done.row, 1);
        assert!(lane.idle());
    }
}
