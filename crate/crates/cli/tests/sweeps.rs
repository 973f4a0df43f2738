//! Qualitative sweep behaviours: congestion, AER traffic, timing sanity.

use spikemesh_core::engine::{elastic_run, run_inference, ElasticConfig, SimConfig};
use spikemesh_core::mapping::{build_mapping, CoreCapacity};
use spikemesh_core::netgen::{generate_input, generate_network, GenKind, GenParams};
use spikemesh_core::noc::{AerMode, MeshConfig};

const MESH3: MeshConfig = MeshConfig {
    rows: 3,
    cols: 3,
    link_bandwidth: 1,
    flit_bits: 256,
    fifo_bytes: 512,
};

fn wide_workload(seed: u64) -> (spikemesh_core::model::NetworkSpec, spikemesh_core::mapping::Mapping, Vec<i64>) {
    let params = GenParams {
        kind: GenKind::Mlp,
        width: 32,
        layers: 3,
        density: 0.5,
        seed,
        ..GenParams::default()
    };
    let net = generate_network(&params).unwrap();
    let info = net.compile().unwrap();
    let caps = CoreCapacity { mem_bytes: 60_000, neuron_circuits: 32 };
    let mapping = build_mapping(&net, &info, &MESH3, &caps, 0.2, seed).unwrap();
    let input = generate_input(&net, seed);
    (net, mapping, input)
}

/// Bundled AER beats per-spike AER on wire bits once rows carry enough
/// spikes, and is never slower.
#[test]
fn baer_reduces_traffic_on_occupied_rows() {
    let (net, mapping, input) = wide_workload(13);
    let info = net.compile().unwrap();
    let mut results = Vec::new();
    for aer in [AerMode::Legacy, AerMode::Baer] {
        let cfg = SimConfig { aer, mesh: MESH3, seed: 13, ..SimConfig::default() };
        let trace = run_inference(&net, &info, &mapping, &input, &cfg).unwrap();
        results.push((trace.wire_bits, trace.cycles));
    }
    let (legacy_bits, legacy_cycles) = results[0];
    let (baer_bits, baer_cycles) = results[1];
    assert!(
        baer_bits < legacy_bits,
        "baer {baer_bits} bits vs legacy {legacy_bits}"
    );
    assert!(baer_cycles <= legacy_cycles);
}

/// Above saturation the cycles per time-step grow, while the cycle
/// reduction from early termination persists.
#[test]
fn congestion_slows_steps_but_keeps_elastic_benefit() {
    let (net, mapping, input) = wide_workload(19);
    let info = net.compile().unwrap();
    let mut mean_step_cycles = Vec::new();
    let mut benefits = Vec::new();
    for mult in [1u32, 8, 32] {
        let cfg = SimConfig {
            mesh: MESH3,
            seed: 19,
            injection_multiplier: mult,
            ..SimConfig::default()
        };
        let full = run_inference(&net, &info, &mapping, &input, &cfg).unwrap();
        let per_step = full.cycles_per_step();
        let mean = per_step.iter().map(|(_, c)| *c as f64).sum::<f64>() / per_step.len() as f64;
        mean_step_cycles.push(mean);
        let early = elastic_run(&net, &info, &mapping, &input, &cfg, ElasticConfig { theta: 0.6 })
            .unwrap();
        benefits.push(1.0 - early.trace.cycles as f64 / full.cycles as f64);
    }
    assert!(
        mean_step_cycles.windows(2).all(|w| w[0] < w[1]),
        "per-step cycles must grow with injection rate: {mean_step_cycles:?}"
    );
    assert!(
        benefits.iter().all(|&b| b > 0.05),
        "early-termination benefit must persist under congestion: {benefits:?}"
    );
}

/// The timing model never schedules more additions than the PEs provide.
#[test]
fn adder_capacity_bounds_hold() {
    for seed in [13u64, 19, 23] {
        let (net, mapping, input) = wide_workload(seed);
        let info = net.compile().unwrap();
        let cfg = SimConfig { mesh: MESH3, seed, ..SimConfig::default() };
        let trace = run_inference(&net, &info, &mapping, &input, &cfg).unwrap();
        let cores = (MESH3.rows * MESH3.cols) as u64;
        let per_core_adds = 4 * cfg.pe.adds_per_cycle();
        assert!(
            trace.counters.adder_ops <= trace.cycles * cores * per_core_adds,
            "seed {seed}: {} adds in {} cycles",
            trace.counters.adder_ops,
            trace.cycles
        );
    }
}

/// The bundling ratio approaches 256/425 as row occupancy approaches the
/// 17-spike payload capacity.
#[test]
fn bundling_ratio_approaches_the_flit_bound() {
    use spikemesh_core::noc::{baer_wire_bits, legacy_wire_bits};
    let exact = 256.0 / 425.0;
    let ratio = |k: usize| baer_wire_bits(k, 256) as f64 / legacy_wire_bits(k) as f64;
    assert!((ratio(17) - exact).abs() < 1e-12);
    assert!((ratio(34) - exact).abs() < 1e-12);
    for k in 11..=17 {
        assert!(ratio(k) <= 1.0, "bundling must win at occupancy {k}");
    }
    // Sparse rows pay for the fixed flit, exactly the small-flit argument
    // of the flit-size trade-off.
    assert!(ratio(3) > 1.0);
}
