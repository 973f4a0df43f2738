//! ST-BIF neuron dynamics: integrate, fire, soft-reset update.
//!
//! The neuron emits ternary spikes. A spike tracer `s` accumulates emitted
//! spikes and is bounded by `[s_min, s_max]`; at quiescence the tracer equals
//! the quantized-ReLU of the total delivered input, which is the conversion
//! equivalence the whole simulator rests on.
//!
//! The firing decision reads the pre-update tracer: the tracer-update
//! recurrence is only self-consistent when both the decision and the update
//! see the tracer from the previous step, so that is the reading used here.
//!
//! All quantities are integer activation units (see the model module), so
//! the conservation identity `v_hat = v_new + y * v_thr` is exact.

use crate::error::{Result, SimError};
use crate::model::QuantParams;

/// Dynamical state of one ST-BIF neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StBifState {
    /// Membrane potential in integer activation units.
    pub v: i64,
    /// Spike tracer: running sum of emitted spikes.
    pub s: i32,
}

impl StBifState {
    pub fn new() -> Self {
        StBifState { v: 0, s: 0 }
    }
}

impl Default for StBifState {
    fn default() -> Self {
        Self::new()
    }
}

/// Step-1: integrate the weighted presynaptic sum into the membrane.
/// Returns the post-integration potential; the state itself is untouched.
#[inline]
pub fn integrate(state: &StBifState, weighted_sum: i64) -> i64 {
    state.v + weighted_sum
}

/// Step-2: firing decision. `+1` when the potential reaches threshold and
/// the tracer has headroom, `-1` when the potential is negative and the
/// tracer has room below, `0` otherwise. The two conditions are mutually
/// exclusive because `v_thr > 0`.
#[inline]
pub fn fire(v_hat: i64, state: &StBifState, q: &QuantParams) -> i8 {
    if v_hat >= q.v_thr && state.s < q.s_max {
        1
    } else if v_hat < 0 && state.s > q.s_min {
        -1
    } else {
        0
    }
}

/// Step-3: soft reset. Subtracts `y * v_thr` from the integrated potential
/// and accumulates the spike into the tracer.
#[inline]
pub fn update(state: &StBifState, v_hat: i64, y: i8, q: &QuantParams) -> Result<StBifState> {
    let s = state.s + y as i32;
    if s < q.s_min || s > q.s_max {
        return Err(SimError::InvariantViolation(format!(
            "tracer {s} outside [{}, {}] after y = {y}",
            q.s_min, q.s_max
        )));
    }
    Ok(StBifState {
        v: v_hat - y as i64 * q.v_thr,
        s,
    })
}

/// One atomic time-step event: integrate, fire, update.
#[inline]
pub fn step(state: StBifState, weighted_sum: i64, q: &QuantParams) -> (i8, StBifState) {
    let v_hat = integrate(&state, weighted_sum);
    let y = fire(v_hat, &state, q);
    // `fire` respects the tracer bounds, so `update` cannot fail here.
    let next = update(&state, v_hat, y, q).expect("fire/update consistency");
    (y, next)
}

/// True when no spike of either sign is possible with zero further input.
#[inline]
pub fn is_quiescent(state: &StBifState, q: &QuantParams) -> bool {
    !(state.v >= q.v_thr && state.s < q.s_max) && !(state.v < 0 && state.s > q.s_min)
}

/// Steps the neuron with zero input until it goes quiescent; returns the
/// final state. Used as the lump-sum oracle for the quantizer convention.
pub fn settle(mut state: StBifState, q: &QuantParams) -> StBifState {
    loop {
        if is_quiescent(&state, q) {
            return state;
        }
        let (_, next) = step(state, 0, q);
        state = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quantized_relu;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn q(v_thr: i64, s_min: i32, s_max: i32) -> QuantParams {
        QuantParams {
            v_thr,
            s_min,
            s_max,
            weight_bits: 4,
        }
    }

    #[test]
    fn integrate_is_pure_addition() {
        let s = StBifState { v: 0, s: 0 };
        assert_eq!(integrate(&s, 0), 0);
        let s = StBifState { v: 9, s: 0 };
        assert_eq!(integrate(&s, 2), 11);
        let s = StBifState { v: 10, s: 0 };
        assert_eq!(integrate(&s, -30), -20);
    }

    #[test]
    fn fire_branches() {
        let qp = q(10, 0, 15);
        assert_eq!(fire(11, &StBifState { v: 0, s: 0 }, &qp), 1);
        // tracer saturated: no positive spike
        assert_eq!(fire(11, &StBifState { v: 0, s: 15 }, &qp), 0);
        assert_eq!(fire(-5, &StBifState { v: 0, s: 2 }, &qp), -1);
        // at the lower bound: no negative spike
        assert_eq!(fire(-5, &StBifState { v: 0, s: 0 }, &qp), 0);
    }

    #[test]
    fn update_soft_reset() {
        let qp = q(10, 0, 15);
        let s0 = StBifState { v: 0, s: 0 };
        let next = update(&s0, 11, 1, &qp).unwrap();
        assert_eq!(next, StBifState { v: 1, s: 1 });

        let next = update(&StBifState { v: 0, s: 3 }, 3, 0, &qp).unwrap();
        assert_eq!(next, StBifState { v: 3, s: 3 });

        let next = update(&StBifState { v: 0, s: 2 }, -5, -1, &qp).unwrap();
        assert_eq!(next, StBifState { v: 5, s: 1 });
    }

    #[test]
    fn update_rejects_inconsistent_spike() {
        let qp = q(10, 0, 15);
        assert!(update(&StBifState { v: 0, s: 15 }, 20, 1, &qp).is_err());
    }

    #[test]
    fn step_drains_lump_input() {
        // 2.5 thresholds of charge at t=1: fires twice, then rests at 0.5.
        let qp = q(10, 0, 15);
        let (y1, s1) = step(StBifState::new(), 25, &qp);
        assert_eq!(y1, 1);
        let (y2, s2) = step(s1, 0, &qp);
        assert_eq!(y2, 1);
        let (y3, s3) = step(s2, 0, &qp);
        assert_eq!(y3, 0);
        assert_eq!(s3, StBifState { v: 5, s: 2 });
    }

    #[test]
    fn zero_input_never_fires() {
        let qp = q(10, 0, 15);
        let mut st = StBifState::new();
        for _ in 0..32 {
            let (y, next) = step(st, 0, &qp);
            assert_eq!(y, 0);
            st = next;
        }
        assert_eq!(st, StBifState::new());
    }

    #[test]
    fn conservation_holds_every_step() {
        let qp = q(7, -4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = StBifState::new();
        for _ in 0..500 {
            let input = rng.gen_range(-30..30);
            let v_hat = integrate(&st, input);
            let (y, next) = step(st, input, &qp);
            assert_eq!(v_hat, next.v + y as i64 * qp.v_thr);
            assert!(next.s >= qp.s_min && next.s <= qp.s_max);
            st = next;
        }
    }

    #[test]
    fn lump_input_settles_to_quantized_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let qp = q(
                rng.gen_range(1..20),
                -rng.gen_range(0..6),
                rng.gen_range(1..16),
            );
            let x: i64 = rng.gen_range(-400..400);
            let (_, st) = step(StBifState::new(), x, &qp);
            let settled = settle(st, &qp);
            assert_eq!(
                settled.s,
                quantized_relu(x, &qp),
                "x = {x}, q = {qp:?}"
            );
        }
    }

    #[test]
    fn any_temporal_order_settles_to_lump_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..300 {
            let qp = q(
                rng.gen_range(1..16),
                -rng.gen_range(0..5),
                rng.gen_range(1..13),
            );
            let n = rng.gen_range(1..12);
            let stream: Vec<i64> = (0..n).map(|_| rng.gen_range(-25..25)).collect();
            let total: i64 = stream.iter().sum();
            let mut st = StBifState::new();
            for &x in &stream {
                let (_, next) = step(st, x, &qp);
                st = next;
            }
            let settled = settle(st, &qp);
            assert_eq!(settled.s, quantized_relu(total, &qp), "stream = {stream:?}");
        }
    }

    #[test]
    fn identical_streams_produce_identical_trains() {
        let qp = q(5, -3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let stream: Vec<i64> = (0..64).map(|_| rng.gen_range(-12..12)).collect();
        let run = |stream: &[i64]| -> Vec<i8> {
            let mut st = StBifState::new();
            let mut spikes = Vec::new();
            for &x in stream {
                let (y, next) = step(st, x, &qp);
                spikes.push(y);
                st = next;
            }
            spikes
        };
        assert_eq!(run(&stream), run(&stream));
    }
}
