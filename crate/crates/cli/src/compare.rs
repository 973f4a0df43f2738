//! One-axis sweeps aggregated into a CSV.

use std::path::Path;

use spikemesh_core::engine::{elastic_run, run_inference, ElasticConfig};
use spikemesh_core::error::{Result, SimError};
use spikemesh_core::mapping::Mapping;
use spikemesh_core::model::{NetworkInfo, NetworkSpec};
use spikemesh_core::netgen::Dataset;

use crate::config::{parse_aer, parse_pipeline, parse_product, parse_routing, Resolved};
use crate::simrun::activity_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Pipeline,
    Product,
    Aer,
    Routing,
    FlitBits,
    Theta,
    InjectionRate,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Axis> {
        match s {
            "pipeline" => Ok(Axis::Pipeline),
            "product" => Ok(Axis::Product),
            "aer" => Ok(Axis::Aer),
            "routing" => Ok(Axis::Routing),
            "flit_bits" | "flit-bits" => Ok(Axis::FlitBits),
            "theta" => Ok(Axis::Theta),
            "injection_rate" | "injection-rate" => Ok(Axis::InjectionRate),
            _ => Err(SimError::Parse(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// Applies one axis value onto a resolved configuration.
pub fn apply_axis(resolved: &mut Resolved, axis: Axis, value: &str) -> Result<()> {
    match axis {
        Axis::Pipeline => resolved.sim.pipeline = parse_pipeline(value)?,
        Axis::Product => resolved.sim.product = parse_product(value)?,
        Axis::Aer => resolved.sim.aer = parse_aer(value)?,
        Axis::Routing => resolved.sim.routing = parse_routing(value)?,
        Axis::FlitBits => {
            resolved.sim.mesh.flit_bits = value
                .parse()
                .map_err(|_| SimError::Parse(format!("bad flit size `{value}`")))?
        }
        Axis::Theta => {
            resolved.theta = value
                .parse()
                .map_err(|_| SimError::Parse(format!("bad theta `{value}`")))?
        }
        Axis::InjectionRate => {
            resolved.sim.injection_multiplier = value
                .parse()
                .map_err(|_| SimError::Parse(format!("bad injection multiplier `{value}`")))?
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub cycles: f64,
    pub first_response: f64,
    pub fcr: f64,
    pub energy: f64,
    pub wire_bits: f64,
    pub total_flits: f64,
    pub peak_link_flits: f64,
    pub rpb: f64,
    pub mean_term_step: f64,
    pub mismatch: f64,
    pub mean_cycles_per_step: f64,
}

/// Runs one axis value over the inputs. Latency/termination statistics come
/// from elastic runs at the configured theta; mismatch compares them to the
/// stable-state runs.
pub fn run_value(
    net: &NetworkSpec,
    info: &NetworkInfo,
    mapping: &Mapping,
    inputs: &[(Vec<i64>, Option<usize>)],
    resolved: &Resolved,
    value: &str,
) -> Result<SweepRow> {
    let cores = (resolved.sim.mesh.rows * resolved.sim.mesh.cols) as u64;
    let mut cycles = 0.0;
    let mut first_response = 0.0;
    let mut fcr_sum = 0.0;
    let mut fcr_n = 0usize;
    let mut energy = 0.0;
    let mut wire_bits = 0.0;
    let mut total_flits = 0.0;
    let mut peak_link = 0.0f64;
    let mut rpb = 0.0f64;
    let mut term = 0.0;
    let mut early = Vec::new();
    let mut stable = Vec::new();
    let mut steps_cycles = 0.0;
    let mut steps_count = 0.0;
    for (input, label) in inputs {
        let outcome = elastic_run(
            net,
            info,
            mapping,
            input,
            &resolved.sim,
            ElasticConfig {
                theta: resolved.theta,
            },
        )?;
        let full = run_inference(net, info, mapping, input, &resolved.sim)?;
        let trace = &full.clone();
        cycles += outcome.trace.cycles as f64;
        first_response += outcome.trace.first_response_cycle.unwrap_or(0) as f64;
        if let Some(l) = label {
            if let Some(c) = spikemesh_core::engine::fcr_latency(&full, *l)? {
                fcr_sum += c as f64;
                fcr_n += 1;
            }
        }
        let report =
            spikemesh_core::engine::energy_report(&activity_of(trace, cores), &resolved.energy);
        energy += report.total;
        wire_bits += full.wire_bits as f64;
        total_flits += full.total_flits as f64;
        let peak = full.link_flits.values().copied().max().unwrap_or(0) as f64;
        peak_link = peak_link.max(peak);
        if full.cycles > 0 {
            rpb = rpb.max(peak / full.cycles as f64);
        }
        term += outcome.terminated_at as f64;
        early.push(outcome.prediction);
        stable.push(full.final_prediction()?);
        for (_, c) in full.cycles_per_step() {
            steps_cycles += c as f64;
            steps_count += 1.0;
        }
    }
    let n = inputs.len().max(1) as f64;
    let mismatch = spikemesh_core::engine::mismatch_rate(&early, &stable)?;
    Ok(SweepRow {
        value: value.to_string(),
        cycles: cycles / n,
        first_response: first_response / n,
        fcr: if fcr_n > 0 { fcr_sum / fcr_n as f64 } else { 0.0 },
        energy: energy / n,
        wire_bits: wire_bits / n,
        total_flits: total_flits / n,
        peak_link_flits: peak_link,
        rpb,
        mean_term_step: term / n,
        mismatch,
        mean_cycles_per_step: if steps_count > 0.0 {
            steps_cycles / steps_count
        } else {
            0.0
        },
    })
}

pub fn write_sweep_csv(path: &Path, axis: &str, rows: &[SweepRow]) -> Result<()> {
    let mut out = format!(
        "{axis},latency_cycles,first_response_cycle,fcr_cycle,energy,wire_bits,total_flits,\
         peak_link_flits,rpb,mean_termination_step,mismatch_rate,mean_cycles_per_step\n"
    );
    for r in rows {
        out.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.6},{:.3},{:.6},{:.3}\n",
            r.value,
            r.cycles,
            r.first_response,
            r.fcr,
            r.energy,
            r.wire_bits,
            r.total_flits,
            r.peak_link_flits,
            r.rpb,
            r.mean_term_step,
            r.mismatch,
            r.mean_cycles_per_step,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads sweep inputs: a dataset slice or one seeded random input.
pub fn sweep_inputs(
    net: &NetworkSpec,
    dataset: Option<&Path>,
    samples: usize,
    input_seed: Option<u64>,
) -> Result<Vec<(Vec<i64>, Option<usize>)>> {
    match dataset {
        Some(path) => {
            let ds = Dataset::load(path)?;
            Ok(ds
                .inputs
                .into_iter()
                .zip(ds.labels)
                .take(samples.max(1))
                .map(|(i, l)| (i, Some(l)))
                .collect())
        }
        None => {
            let seed = input_seed.unwrap_or(0);
            Ok(vec![(spikemesh_core::netgen::generate_input(net, seed), None)])
        }
    }
}
