//! Cycle-level simulation core.

pub mod energy;
pub mod exec;
pub mod sim;
pub mod trace;

pub use energy::{energy_report, EnergyModel, EnergyReport};
pub use sim::{elastic_run, run_inference, ElasticConfig, ProductMode, RunOutcome, SimConfig};
pub use trace::{fcr_latency, mismatch_rate, SimTrace, StepRecord};
