//! Energy accounting: access counters priced by configurable unit costs.
//!
//! The default costs are order-of-magnitude placeholders shaped like the
//! reference design's breakdown (adder trees dominant, weight buffer
//! second, wide membrane rows pricier than narrow weight rows). Absolute
//! joules are explicitly not claimed.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::pe::AccessCounters;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    pub adder_op: f64,
    pub weight_row_read: f64,
    pub membrane_row_read: f64,
    pub membrane_row_write: f64,
    pub tracer_access: f64,
    pub fifo_access: f64,
    pub flit_per_hop: f64,
    pub fire_eval: f64,
    pub leakage_per_core_cycle: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            adder_op: 1.0,
            weight_row_read: 4.0,
            membrane_row_read: 12.0,
            membrane_row_write: 12.0,
            tracer_access: 3.0,
            fifo_access: 2.0,
            flit_per_hop: 6.0,
            fire_eval: 0.5,
            leakage_per_core_cycle: 0.05,
        }
    }
}

impl EnergyModel {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let costs = [
            self.adder_op,
            self.weight_row_read,
            self.membrane_row_read,
            self.membrane_row_write,
            self.tracer_access,
            self.fifo_access,
            self.flit_per_hop,
            self.fire_eval,
            self.leakage_per_core_cycle,
        ];
        if costs.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(SimError::Parse("energy unit costs must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Raw activity totals the energy model prices.
#[derive(Debug, Clone, Copy, Default)]
pub struct ActivityTotals {
    pub counters: AccessCounters,
    pub fifo_accesses: u64,
    pub flit_hops: u64,
    pub cycles: u64,
    pub cores: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    /// (component, energy, percentage); percentages sum to 100 when the
    /// total is nonzero.
    pub breakdown: Vec<(String, f64, f64)>,
}

pub fn energy_report(activity: &ActivityTotals, model: &EnergyModel) -> EnergyReport {
    let c = &activity.counters;
    let parts: Vec<(&str, f64)> = vec![
        ("adder_tree", c.adder_ops as f64 * model.adder_op),
        ("weight_buffer", c.weight_row_reads as f64 * model.weight_row_read),
        (
            "membrane_buffer",
            c.membrane_row_reads as f64 * model.membrane_row_read
                + c.membrane_row_writes as f64 * model.membrane_row_write,
        ),
        (
            "tracer_buffer",
            (c.tracer_row_reads + c.tracer_row_writes) as f64 * model.tracer_access,
        ),
        ("fire_component", c.fire_evals as f64 * model.fire_eval),
        ("fifo_queue", activity.fifo_accesses as f64 * model.fifo_access),
        ("noc_links", activity.flit_hops as f64 * model.flit_per_hop),
        (
            "leakage",
            activity.cycles as f64 * activity.cores as f64 * model.leakage_per_core_cycle,
        ),
    ];
    let total: f64 = parts.iter().map(|(_, e)| e).sum();
    let breakdown = parts
        .into_iter()
        .map(|(name, e)| {
            let pct = if total > 0.0 { 100.0 * e / total } else { 0.0 };
            (name.to_string(), e, pct)
        })
        .collect();
    EnergyReport { total, breakdown }
}
