//! Simulation traces and the derived latency/mismatch statistics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::model::LayerShape;
use crate::pe::AccessCounters;

/// Coarse event kinds kept in the per-cycle event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEventKind {
    RowCompleted { layer: usize, row: u32, step: u32 },
    StepCompleted { step: u32 },
    Terminated { step: u32 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub kind: TraceEventKind,
}

/// Snapshot at the completion of one time-step at the final layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub end_cycle: u64,
    /// Pooled class scores from the cumulative output tracers.
    pub scores: Vec<i64>,
    pub prediction: usize,
    pub confidence: f64,
    /// Cumulative activity up to this step (for energy-to-date curves).
    pub counters: AccessCounters,
    pub fifo_accesses: u64,
    pub flit_hops: u64,
    pub wire_bits: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimTrace {
    pub cycles: u64,
    pub executed_steps: u32,
    pub converged: bool,
    pub steps: Vec<StepRecord>,
    pub counters: AccessCounters,
    pub fifo_accesses: u64,
    pub flit_hops: u64,
    pub wire_bits: u64,
    pub total_flits: u64,
    pub padding_flits: u64,
    /// Flits injected per layer edge (src, dst), for measured re-mapping.
    pub flow_flits: BTreeMap<String, u64>,
    /// Per-link delivered flit counts, key "r,c->r,c".
    pub link_flits: BTreeMap<String, u64>,
    /// Row completion events (cycle, layer, row, step).
    pub completions: Vec<(u64, usize, u32, u32)>,
    pub events: Vec<TraceEvent>,
    pub output_rows: usize,
    pub output_cols: usize,
    /// Cumulative final-layer spike tracers at the end of the run.
    pub final_tracers: Vec<i64>,
    pub first_response_cycle: Option<u64>,
    /// Bit-exact wire records of every mesh-bound bundled flit, captured
    /// only when the run was configured to record them.
    #[serde(skip)]
    pub wire_records: Vec<Vec<u8>>,
}

impl SimTrace {
    pub fn output_shape(&self) -> LayerShape {
        LayerShape {
            rows: self.output_rows,
            cols: self.output_cols,
        }
    }

    pub fn push_event(&mut self, cycle: u64, kind: TraceEventKind) {
        debug_assert!(self.events.last().map_or(true, |e| e.cycle <= cycle));
        self.events.push(TraceEvent { cycle, kind });
    }

    /// Final prediction (argmax of pooled scores at the last recorded step).
    pub fn final_prediction(&self) -> Result<usize> {
        self.steps
            .last()
            .map(|s| s.prediction)
            .ok_or(SimError::EmptyTrace)
    }

    /// Cycles spent within each executed time-step (for congestion curves).
    pub fn cycles_per_step(&self) -> Vec<(u32, u64)> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut prev = 0u64;
        for s in &self.steps {
            out.push((s.step, s.end_cycle - prev));
            prev = s.end_cycle;
        }
        out
    }
}

/// First-correct-response latency: the end cycle of the earliest time-step
/// whose running prediction equals the ground truth. `None` means the
/// prediction was never correct (counted separately by callers). The first
/// occurrence is reported; `first_stable_cycle` gives the stability variant.
pub fn fcr_latency(trace: &SimTrace, ground_truth: usize) -> Result<Option<u64>> {
    if trace.steps.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    Ok(trace
        .steps
        .iter()
        .find(|s| s.prediction == ground_truth)
        .map(|s| s.end_cycle))
}

/// End cycle of the earliest step from which the prediction stays correct.
pub fn first_stable_cycle(trace: &SimTrace, ground_truth: usize) -> Result<Option<u64>> {
    if trace.steps.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let mut stable_from = None;
    for s in &trace.steps {
        if s.prediction == ground_truth {
            stable_from.get_or_insert(s.end_cycle);
        } else {
            stable_from = None;
        }
    }
    Ok(stable_from)
}

/// Fraction of paired predictions where the early-terminated class differs
/// from the stable-state class.
pub fn mismatch_rate(early: &[usize], stable: &[usize]) -> Result<f64> {
    if early.len() != stable.len() {
        return Err(SimError::LengthMismatch(early.len(), stable.len()));
    }
    if early.is_empty() {
        return Ok(0.0);
    }
    let diff = early
        .iter()
        .zip(stable.iter())
        .filter(|(a, b)| a != b)
        .count();
    Ok(diff as f64 / early.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(step: u32, cycle: u64, pred: usize) -> StepRecord {
        StepRecord {
            step,
            end_cycle: cycle,
            scores: vec![],
            prediction: pred,
            confidence: 0.5,
            counters: AccessCounters::default(),
            fifo_accesses: 0,
            flit_hops: 0,
            wire_bits: 0,
        }
    }

    #[test]
    fn fcr_first_occurrence() {
        let mut trace = SimTrace::default();
        trace.steps = vec![step(1, 10, 2), step(2, 20, 0), step(3, 30, 2)];
        assert_eq!(fcr_latency(&trace, 2).unwrap(), Some(10));
        assert_eq!(first_stable_cycle(&trace, 2).unwrap(), Some(30));
        assert_eq!(fcr_latency(&trace, 7).unwrap(), None);
    }

    #[test]
    fn fcr_needs_steps() {
        let trace = SimTrace::default();
        assert!(matches!(fcr_latency(&trace, 0), Err(SimError::EmptyTrace)));
    }

    #[test]
    fn mismatch_edge_cases() {
        assert_eq!(mismatch_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(mismatch_rate(&[1, 2], &[2, 1]).unwrap(), 1.0);
        assert!(matches!(
            mismatch_rate(&[1], &[1, 2]),
            Err(SimError::LengthMismatch(1, 2))
        ));
    }
}
