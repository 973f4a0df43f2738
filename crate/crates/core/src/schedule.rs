//! Pipeline granularity and the output scheduler.
//!
//! The spine scheduler is a dependency-counting tracker: every output spine
//! holds a counter of not-yet-arrived receptive-field inputs and is released
//! exactly once, when the counter reaches zero. Leading-edge padding counts
//! as pre-arrived; trailing-edge padding is released together with the last
//! valid input spine, so outputs that touch it are delayed until then.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::ConvGeom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Strictly serialized (time-step, layer) stages.
    None,
    /// A layer forwards a time-step's outputs only once all of its
    /// spines/tokens have completed it.
    LayerWise,
    /// Every completed spine/token is forwarded immediately.
    SpineTokenWise,
}

impl PipelineMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineMode::None => "none",
            PipelineMode::LayerWise => "layer_wise",
            PipelineMode::SpineTokenWise => "spine_token_wise",
        }
    }
}

/// Dependency tracker for one convolution layer and one time-step.
#[derive(Debug, Clone)]
pub struct DependencyTracker {
    geom: ConvGeom,
    out_w: u32,
    /// Remaining not-yet-arrived inputs per output spine.
    remaining: Vec<u32>,
    emitted: Vec<bool>,
    arrived: Vec<bool>,
    arrived_count: u32,
    valid_total: u32,
    /// Outputs whose receptive field is pure leading padding: computable
    /// from the start, released with the first arrival.
    initially_ready: Vec<(u32, u32)>,
}

impl DependencyTracker {
    pub fn new(geom: ConvGeom) -> Self {
        let (out_h, out_w) = geom.output_dims(0).expect("validated geometry");
        let n_out = (out_h * out_w) as usize;
        let mut remaining = vec![0u32; n_out];
        let p = geom.padding as i64;
        for r in 0..out_h as i64 {
            for c in 0..out_w as i64 {
                let mut need = 0u32;
                for kh in 0..geom.kernel_h as i64 {
                    for kw in 0..geom.kernel_w as i64 {
                        let ih = r * geom.stride as i64 + kh - p;
                        let iw = c * geom.stride as i64 + kw - p;
                        let valid = ih >= 0
                            && iw >= 0
                            && ih < geom.input_h as i64
                            && iw < geom.input_w as i64;
                        if valid {
                            need += 1;
                        } else if ih >= geom.input_h as i64 || iw >= geom.input_w as i64 {
                            // Trailing-edge padding: released with the last
                            // valid spine. Leading padding is pre-arrived.
                            need += 1;
                        }
                    }
                }
                remaining[(r * out_w as i64 + c) as usize] = need;
            }
        }
        let mut emitted = vec![false; n_out];
        let mut initially_ready = Vec::new();
        for (idx, &need) in remaining.iter().enumerate() {
            if need == 0 {
                emitted[idx] = true;
                initially_ready.push((idx as u32 / out_w, idx as u32 % out_w));
            }
        }
        DependencyTracker {
            geom,
            out_w,
            remaining,
            emitted,
            arrived: vec![false; (geom.input_h * geom.input_w) as usize],
            arrived_count: 0,
            valid_total: geom.input_h * geom.input_w,
            initially_ready,
        }
    }

    pub fn outputs_total(&self) -> usize {
        self.remaining.len()
    }

    pub fn all_arrived(&self) -> bool {
        self.arrived_count == self.valid_total
    }

    fn decrement_targets(&mut self, pi: i64, pj: i64, ready: &mut Vec<(u32, u32)>) {
        // Outputs whose receptive field covers padded coordinate (pi, pj).
        let g = &self.geom;
        let s = g.stride as i64;
        let (out_h, out_w) = g.output_dims(0).unwrap();
        let r_lo = ((pi - g.kernel_h as i64 + 1).max(0) + s - 1) / s;
        let r_hi = (pi / s).min(out_h as i64 - 1);
        let c_lo = ((pj - g.kernel_w as i64 + 1).max(0) + s - 1) / s;
        let c_hi = (pj / s).min(out_w as i64 - 1);
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let idx = (r * out_w as i64 + c) as usize;
                debug_assert!(self.remaining[idx] > 0);
                self.remaining[idx] -= 1;
                if self.remaining[idx] == 0 && !self.emitted[idx] {
                    self.emitted[idx] = true;
                    ready.push((r as u32, c as u32));
                }
            }
        }
    }

    /// Records the arrival of valid input spine (i, j) and returns every
    /// output spine that just became computable, in row-major order.
    pub fn on_arrival(&mut self, i: u32, j: u32) -> Result<Vec<(u32, u32)>> {
        let g = self.geom;
        if i >= g.input_h || j >= g.input_w {
            return Err(SimError::RowIdOutOfRange {
                row: (i * g.input_w + j) as usize,
                rows: (g.input_h * g.input_w) as usize,
            });
        }
        let flat = (i * g.input_w + j) as usize;
        if self.arrived[flat] {
            return Err(SimError::DuplicateArrival(i, j));
        }
        self.arrived[flat] = true;
        self.arrived_count += 1;

        let mut ready = std::mem::take(&mut self.initially_ready);
        let p = g.padding as i64;
        self.decrement_targets(i as i64 + p, j as i64 + p, &mut ready);

        if self.all_arrived() && g.padding > 0 {
            // Release the trailing padding bands.
            let span_h = (g.input_h + 2 * g.padding) as i64;
            let span_w = (g.input_w + 2 * g.padding) as i64;
            for pi in 0..span_h {
                for pj in 0..span_w {
                    let trailing =
                        pi >= p + g.input_h as i64 || pj >= p + g.input_w as i64;
                    if trailing {
                        self.decrement_targets(pi, pj, &mut ready);
                    }
                }
            }
        }
        ready.sort_unstable();
        Ok(ready)
    }

    pub fn output_index(&self, r: u32, c: u32) -> u32 {
        r * self.out_w + c
    }
}

/// Input spine traversal order: kernel-shaped shells growing from the
/// top-left corner, so the first `H_k * W_k` arrivals are exactly the first
/// receptive field and downstream outputs complete as early as possible.
pub fn spine_traversal_order(geom: &ConvGeom) -> Vec<(u32, u32)> {
    let mut cells: Vec<(u32, u32, u32)> = Vec::new();
    for i in 0..geom.input_h {
        for j in 0..geom.input_w {
            let shell = (i / geom.kernel_h.max(1)).max(j / geom.kernel_w.max(1));
            cells.push((shell, i, j));
        }
    }
    cells.sort_unstable();
    cells.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Row dependencies per output row of a layer, for one time-step.
#[derive(Debug, Clone)]
pub enum RowTracker {
    /// Row x needs row x from each of `preds` predecessors.
    Identity {
        rows: usize,
        preds: usize,
        seen: Vec<u8>,
        emitted: Vec<bool>,
    },
    /// Every output row needs every input row (attention barrier, flatten).
    AllRows {
        rows: usize,
        need: usize,
        got: usize,
        released: bool,
    },
    /// Convolution receptive fields via the dependency tracker.
    Conv(DependencyTracker),
}

impl RowTracker {
    pub fn identity(rows: usize, preds: usize) -> Self {
        RowTracker::Identity {
            rows,
            preds,
            seen: vec![0; rows],
            emitted: vec![false; rows],
        }
    }

    pub fn all_rows(rows: usize, need: usize) -> Self {
        RowTracker::AllRows {
            rows,
            need,
            got: 0,
            released: false,
        }
    }

    pub fn conv(geom: ConvGeom) -> Self {
        RowTracker::Conv(DependencyTracker::new(geom))
    }

    /// Registers the arrival of `src_row` from predecessor slot `pred_slot`
    /// and returns the output rows that just became complete.
    pub fn on_arrival(&mut self, pred_slot: usize, src_row: u32) -> Result<Vec<u32>> {
        match self {
            RowTracker::Identity { rows, preds, seen, emitted } => {
                let r = src_row as usize;
                if r >= *rows {
                    return Err(SimError::RowIdOutOfRange { row: r, rows: *rows });
                }
                let bit = 1u8 << pred_slot;
                if seen[r] & bit != 0 {
                    return Err(SimError::DuplicateArrival(src_row, pred_slot as u32));
                }
                seen[r] |= bit;
                if seen[r].count_ones() as usize == *preds && !emitted[r] {
                    emitted[r] = true;
                    Ok(vec![src_row])
                } else {
                    Ok(vec![])
                }
            }
            RowTracker::AllRows { rows, need, got, released } => {
                *got += 1;
                if *got == *need && !*released {
                    *released = true;
                    Ok((0..*rows as u32).collect())
                } else {
                    Ok(vec![])
                }
            }
            RowTracker::Conv(tracker) => {
                let w = tracker.geom.input_w;
                let ready = tracker.on_arrival(src_row / w, src_row % w)?;
                Ok(ready
                    .into_iter()
                    .map(|(r, c)| tracker.output_index(r, c))
                    .collect())
            }
        }
    }
}

/// Earliest cycle at which the final layer produced an output spine/token.
pub fn first_response_cycle(completions: &[(u64, usize, u32, u32)], final_layer: usize) -> Result<u64> {
    completions
        .iter()
        .filter(|(_, layer, _, _)| *layer == final_layer)
        .map(|(cycle, _, _, _)| *cycle)
        .min()
        .ok_or(SimError::EmptyTrace)
}
