//! Single-run execution and report emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use spikemesh_core::engine::{
    elastic_run, energy_report, fcr_latency, run_inference, ElasticConfig, EnergyReport,
    SimConfig, SimTrace,
};
use spikemesh_core::engine::energy::ActivityTotals;
use spikemesh_core::engine::trace::first_stable_cycle;
use spikemesh_core::error::{Result, SimError};
use spikemesh_core::mapping::Mapping;
use spikemesh_core::model::{NetworkInfo, NetworkSpec};

use crate::config::Resolved;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficReport {
    pub total_flits: u64,
    pub padding_flits: u64,
    pub flit_hops: u64,
    pub wire_bits: u64,
    pub peak_link_flits: u64,
    /// Peak observed link load in flits per cycle.
    pub peak_link_load: f64,
    pub per_link: BTreeMap<String, u64>,
    pub per_flow: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub cycles: u64,
    pub executed_steps: u32,
    pub converged: bool,
    pub first_response_cycle: Option<u64>,
    pub prediction: usize,
    pub confidence: f64,
    pub terminated_at: Option<u32>,
    pub fcr_cycle: Option<u64>,
    pub first_stable_cycle: Option<u64>,
    pub label: Option<usize>,
    pub energy: EnergyReport,
    pub traffic: TrafficReport,
    pub counters: spikemesh_core::pe::AccessCounters,
    pub config: SimConfig,
    pub theta: Option<f64>,
}

pub fn activity_of(trace: &SimTrace, cores: u64) -> ActivityTotals {
    ActivityTotals {
        counters: trace.counters,
        fifo_accesses: trace.fifo_accesses,
        flit_hops: trace.flit_hops,
        cycles: trace.cycles,
        cores,
    }
}

pub fn build_report(
    trace: &SimTrace,
    resolved: &Resolved,
    elastic: bool,
    label: Option<usize>,
) -> Result<Report> {
    let cores = (resolved.sim.mesh.rows * resolved.sim.mesh.cols) as u64;
    let energy = energy_report(&activity_of(trace, cores), &resolved.energy);
    let peak_link_flits = trace.link_flits.values().copied().max().unwrap_or(0);
    let last = trace.steps.last().ok_or(SimError::EmptyTrace)?;
    let (fcr_cycle, first_stable) = match label {
        Some(l) => (fcr_latency(trace, l)?, first_stable_cycle(trace, l)?),
        None => (None, None),
    };
    Ok(Report {
        cycles: trace.cycles,
        executed_steps: trace.executed_steps,
        converged: trace.converged,
        first_response_cycle: trace.first_response_cycle,
        prediction: last.prediction,
        confidence: last.confidence,
        terminated_at: elastic.then_some(last.step),
        fcr_cycle,
        first_stable_cycle: first_stable,
        label,
        energy,
        traffic: TrafficReport {
            total_flits: trace.total_flits,
            padding_flits: trace.padding_flits,
            flit_hops: trace.flit_hops,
            wire_bits: trace.wire_bits,
            peak_link_flits,
            peak_link_load: if trace.cycles > 0 {
                peak_link_flits as f64 / trace.cycles as f64
            } else {
                0.0
            },
            per_link: trace.link_flits.clone(),
            per_flow: trace.flow_flits.clone(),
        },
        counters: trace.counters,
        config: resolved.sim.clone(),
        theta: elastic.then_some(resolved.theta),
    })
}

/// Runs once (full or elastic) and returns the trace.
pub fn run_once(
    net: &NetworkSpec,
    info: &NetworkInfo,
    mapping: &Mapping,
    input: &[i64],
    resolved: &Resolved,
    elastic: bool,
) -> Result<SimTrace> {
    if elastic {
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
        Ok(outcome.trace)
    } else {
        run_inference(net, info, mapping, input, &resolved.sim)
    }
}

/// Per-time-step CSV: cycle bounds, prediction, confidence, and
/// energy-to-date under the active energy model.
pub fn write_trace_csv(
    path: &Path,
    trace: &SimTrace,
    resolved: &Resolved,
) -> Result<()> {
    let cores = (resolved.sim.mesh.rows * resolved.sim.mesh.cols) as u64;
    let mut out = String::from(
        "step,end_cycle,cycles_in_step,prediction,confidence,energy_to_date,wire_bits_to_date\n",
    );
    let mut prev = 0u64;
    for s in &trace.steps {
        let activity = ActivityTotals {
            counters: s.counters,
            fifo_accesses: s.fifo_accesses,
            flit_hops: s.flit_hops,
            cycles: s.end_cycle,
            cores,
        };
        let energy = energy_report(&activity, &resolved.energy);
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.3},{}\n",
            s.step,
            s.end_cycle,
            s.end_cycle - prev,
            s.prediction,
            s.confidence,
            energy.total,
            s.wire_bits,
        ));
        prev = s.end_cycle;
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-link flit counts for violin-style traffic statistics.
pub fn write_links_csv(path: &Path, trace: &SimTrace) -> Result<()> {
    let mut out = String::from("link,flits\n");
    for (link, count) in &trace.link_flits {
        out.push_str(&format!("{link},{count}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_report_json(path: &Path, report: &Report) -> Result<()> {
    let text =
        serde_json::to_string_pretty(report).map_err(|e| SimError::Parse(e.to_string()))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn write_flit_dump(path: &Path, trace: &SimTrace) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for rec in &trace.wire_records {
        f.write_all(rec)?;
    }
    Ok(())
}

/// Input file: either {"values": [...]} or a dataset with an index.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum InputFile {
    Values { values: Vec<i64> },
    Dataset(spikemesh_core::netgen::Dataset),
}

pub fn load_input(path: &Path, index: usize) -> Result<(Vec<i64>, Option<usize>)> {
    let text = std::fs::read_to_string(path)?;
    let parsed: InputFile =
        serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))?;
    match parsed {
        InputFile::Values { values } => Ok((values, None)),
        InputFile::Dataset(ds) => {
            let input = ds
                .inputs
                .get(index)
                .ok_or_else(|| SimError::Parse(format!("dataset has no sample {index}")))?
                .clone();
            Ok((input, ds.labels.get(index).copied()))
        }
    }
}
