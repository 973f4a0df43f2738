//! Cycle-level simulator for an elastic spiking-neural-network accelerator:
//! quantized networks are converted to bipolar integrate-and-fire form,
//! mapped onto a 2D mesh of neural cores, and executed with a fine-grained
//! spine/token-wise pipeline while latency, energy, and NoC traffic are
//! accounted per component.

pub mod engine;
pub mod error;
pub mod mapping;
pub mod model;
pub mod netgen;
pub mod neuron;
pub mod noc;
pub mod pe;
pub mod schedule;

pub use error::{Result, SimError};
