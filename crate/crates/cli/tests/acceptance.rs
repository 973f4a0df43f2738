//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the checked tolerances. Every threshold is pinned here, not deferred.

use std::collections::BTreeMap;
use std::process::Command;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use spikemesh_core::engine::{
    elastic_run, mismatch_rate, run_inference, ElasticConfig, ProductMode, SimConfig,
};
use spikemesh_core::mapping::{
    build_mapping, ga_optimize_paths, required_peak_bandwidth, xy_probabilities, CoreCapacity,
    Flow, GaParams,
};
use spikemesh_core::model::{
    qann_forward, ConvGeom, LayerKind, LayerSpec, NetworkSpec, QuantParams, TokenGeom,
};
use spikemesh_core::netgen::{generate_dataset, generate_input, generate_network, GenKind, GenParams};
use spikemesh_core::noc::{
    decode_baer, encode_baer, legacy_wire_bits, xy_path, yx_path, AerMode, BaerFlit, Coord,
    MeshConfig, RoutingEngine,
};
use spikemesh_core::pe::{
    count_gustavson, count_outer_product, AccessCounters, BatchSpike, PeBuffers, SpikeBatch,
    SpikeMatrix,
};
use spikemesh_core::schedule::{DependencyTracker, PipelineMode};

const MESH3: MeshConfig = MeshConfig {
    rows: 3,
    cols: 3,
    link_bandwidth: 1,
    flit_bits: 256,
    fifo_bytes: 512,
};

/// Criterion 1: the worked MM-sc example reproduces bitwise. Spikes (0,1)
/// and (0,3) on the 4x4 weight matrix put membrane row 0 at [3,5,4,4];
/// a negative spike accumulates the negated row; counters move exactly as
/// specified. Tolerance: exact.
#[test]
fn criterion_01_mm_sc_worked_example() {
    let weights = vec![
        vec![1, 1, 2, 1],
        vec![2, 2, 3, 3],
        vec![3, 1, 1, 2],
        vec![1, 3, 1, 1],
    ];
    let quant = QuantParams { v_thr: 100, s_min: 0, s_max: 15, weight_bits: 4 };
    let mut pe = PeBuffers::new(&weights, 2, 0..4, quant);
    let mut counters = AccessCounters::default();
    let batch = SpikeBatch {
        row: 0,
        spikes: vec![
            BatchSpike { weight_row: 1, negative: false },
            BatchSpike { weight_row: 3, negative: false },
        ],
    };
    pe.mm_sc_minibatch(&batch, 17, &mut counters).unwrap();
    assert_eq!(&pe.membrane[0..4], &[3, 5, 4, 4]);
    assert_eq!(counters.weight_row_reads, 2);
    assert_eq!(counters.membrane_row_reads, 1);
    assert_eq!(counters.membrane_row_writes, 1);
    assert_eq!(counters.adder_ops, 8);

    // Completing the walk-through: the second row takes a negative spike,
    // which accumulates the negated weight row.
    let batch2 = SpikeBatch {
        row: 1,
        spikes: vec![
            BatchSpike { weight_row: 0, negative: true },
            BatchSpike { weight_row: 2, negative: false },
        ],
    };
    pe.mm_sc_minibatch(&batch2, 17, &mut counters).unwrap();
    assert_eq!(&pe.membrane[4..8], &[2, 0, -1, 1]); // -row0 + row2
    assert_eq!(counters.membrane_row_accesses(), 4); // two batches
    println!("ACCEPTANCE C1 PASS: MM-sc worked example bitwise exact (membrane row [3,5,4,4])");
}

/// Criterion 2: 17 same-row spikes encode to one 256-bit flit against 425
/// legacy bits, and the codec round-trips 10^4 random spike sets exactly.
#[test]
fn criterion_02_baer_arithmetic_and_round_trip() {
    let spikes: Vec<(u32, i8)> = (0..17).map(|i| (i * 3, if i % 2 == 0 { 1 } else { -1 })).collect();
    let flits = encode_baer(7, &spikes, (2, 3), 256).unwrap();
    assert_eq!(flits.len(), 1);
    assert_eq!(flits[0].pack(256).len() * 8, 256);
    assert_eq!(legacy_wire_bits(17), 425);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let k = rng.gen_range(0..60);
        let st_id = rng.gen_range(0..4096);
        let spikes: Vec<(u32, i8)> = (0..k)
            .map(|_| (rng.gen_range(0..4096), if rng.gen_bool(0.5) { 1 } else { -1 }))
            .collect();
        let dest = (rng.gen_range(0..8), rng.gen_range(0..8));
        let flits = encode_baer(st_id, &spikes, dest, 256).unwrap();
        let reparsed: Vec<BaerFlit> = flits
            .iter()
            .map(|f| BaerFlit::unpack(&f.pack(256), 256).unwrap())
            .collect();
        let (st, decoded) = decode_baer(&reparsed);
        if !spikes.is_empty() {
            assert_eq!(st, st_id);
        }
        assert_eq!(decoded, spikes);
    }
    println!("ACCEPTANCE C2 PASS: 17 spikes = one 256-bit flit vs 425 legacy bits; 10^4 round trips exact");
}

/// Criterion 3: on 100 random desk-scale networks (T = 32), the final
/// cumulative tracers equal the quantized-ReLU reference for every
/// combination of pipeline mode, product dataflow, AER encoding, and
/// routing engine. Exact integer equality.
#[test]
fn criterion_03_global_equivalence_all_combinations() {
    let caps = CoreCapacity { mem_bytes: 8192, neuron_circuits: 16 };
    let mut nets = 0;
    let mut runs = 0u32;
    for seed in 0..100u64 {
        let kind = [GenKind::Cnn, GenKind::Mlp, GenKind::Transformer][(seed % 3) as usize];
        let params = GenParams {
            kind,
            layers: 1 + (seed % 3) as u32,
            with_residual: seed % 2 == 0,
            seed: 1000 + seed,
            time_steps: 32,
            ..GenParams::default()
        };
        let net = generate_network(&params).unwrap();
        let info = net.compile().unwrap();
        let mapping = build_mapping(&net, &info, &MESH3, &caps, 0.2, params.seed).unwrap();
        let input = generate_input(&net, params.seed);
        let expect = qann_forward(&net, &info, &input).unwrap()[info.output_layer].clone();
        for pipeline in [
            PipelineMode::None,
            PipelineMode::LayerWise,
            PipelineMode::SpineTokenWise,
        ] {
            for product in [ProductMode::Inner, ProductMode::Outer, ProductMode::Gustavson] {
                for aer in [AerMode::Legacy, AerMode::Baer] {
                    for routing in [
                        RoutingEngine::Xy,
                        RoutingEngine::Valiant,
                        RoutingEngine::Multipath,
                    ] {
                        let cfg = SimConfig {
                            pipeline,
                            product,
                            aer,
                            routing,
                            mesh: MESH3,
                            seed: params.seed,
                            ..SimConfig::default()
                        };
                        let trace = run_inference(&net, &info, &mapping, &input, &cfg).unwrap();
                        assert!(
                            trace.converged,
                            "net {seed} {pipeline:?}/{product:?}/{aer:?}/{routing:?}"
                        );
                        assert_eq!(
                            trace.final_tracers, expect,
                            "net {seed} {pipeline:?}/{product:?}/{aer:?}/{routing:?}"
                        );
                        runs += 1;
                    }
                }
            }
        }
        nets += 1;
    }
    assert_eq!(nets, 100);
    println!("ACCEPTANCE C3 PASS: {runs} runs over 100 networks x 54 configurations, exact tracer equality");
}

fn uniform_toy_net(layers: usize, tokens: u32, dim: u32) -> NetworkSpec {
    let ident: Vec<Vec<i32>> = (0..dim as usize)
        .map(|r| (0..dim as usize).map(|c| i32::from(r == c)).collect())
        .collect();
    NetworkSpec {
        time_steps: 32,
        layers: (0..layers)
            .map(|_| LayerSpec {
                kind: LayerKind::Linear,
                quant: QuantParams { v_thr: 1, s_min: 0, s_max: 15, weight_bits: 4 },
                conv_geom: None,
                token_geom: Some(TokenGeom { tokens, dim }),
                weights: ident.clone(),
            })
            .collect(),
        edges: (0..layers - 1).map(|i| (i, i + 1)).collect(),
    }
}

/// Criterion 4: on the uniform toy net with L = 6 and N = 64, the first
/// response under the layer-wise pipeline is at least N/4 = 16 times later
/// than under the spine/token-wise pipeline, and the ordering
/// none >= layer >= spine holds.
#[test]
fn criterion_04_first_response_scaling() {
    let (l, n, d) = (6usize, 64u32, 8u32);
    let net = uniform_toy_net(l, n, d);
    let info = net.compile().unwrap();
    let caps = CoreCapacity { mem_bytes: 1 << 20, neuron_circuits: d as u64 };
    let mapping = build_mapping(&net, &info, &MESH3, &caps, 0.2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input: Vec<i64> = (0..(n * d) as usize).map(|_| rng.gen_range(1..=3)).collect();
    let fr = |pipeline: PipelineMode| -> u64 {
        let cfg = SimConfig {
            pipeline,
            mesh: MESH3,
            seed: 4,
            input_rate: 16,
            ..SimConfig::default()
        };
        run_inference(&net, &info, &mapping, &input, &cfg)
            .unwrap()
            .first_response_cycle
            .unwrap()
    };
    let none = fr(PipelineMode::None);
    let layer = fr(PipelineMode::LayerWise);
    let spine = fr(PipelineMode::SpineTokenWise);
    assert!(none >= layer && layer >= spine, "ordering {none} {layer} {spine}");
    let ratio = layer as f64 / spine as f64;
    assert!(
        ratio >= (n / 4) as f64,
        "layer {layer} / spine {spine} = {ratio:.1} < {}",
        n / 4
    );
    println!(
        "ACCEPTANCE C4 PASS: first response none {none} >= layer {layer} >= spine {spine}; \
         layer/spine = {ratio:.1} >= {}",
        n / 4
    );
}

/// Criterion 5: Gustavson membrane accesses never exceed outer-product's
/// (equality only for all-singleton batches), and with the default
/// energy ratios Gustavson total energy beats inner and outer on the
/// standard wide-MLP workload. Exact counters.
#[test]
fn criterion_05_gustavson_dominance() {
    // Counting-model property over random instances.
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..200 {
        let rows = rng.gen_range(1..6);
        let mut m = SpikeMatrix { batches: vec![Vec::new(); rows] };
        let mut singleton_only = true;
        for row in m.batches.iter_mut() {
            for _ in 0..rng.gen_range(0..5) {
                let k = rng.gen_range(1..7);
                if k > 1 {
                    singleton_only = false;
                }
                row.push((0..k).map(|_| rng.gen_range(0..12)).collect());
            }
        }
        let g = count_gustavson(&m, 6).membrane_row_accesses();
        let o = count_outer_product(&m, 6).membrane_row_accesses();
        assert!(g <= o);
        if !singleton_only && m.nnz() > 0 {
            assert!(g < o);
        } else {
            assert_eq!(g, o);
        }
    }

    // Engine comparison on the standard workload.
    let params = GenParams {
        kind: GenKind::Mlp,
        width: 24,
        layers: 3,
        density: 0.5,
        seed: 13,
        ..GenParams::default()
    };
    let net = generate_network(&params).unwrap();
    let info = net.compile().unwrap();
    let caps = CoreCapacity { mem_bytes: 60_000, neuron_circuits: 24 };
    let mapping = build_mapping(&net, &info, &MESH3, &caps, 0.2, 13).unwrap();
    let input = generate_input(&net, 13);
    let energy_model = spikemesh_core::engine::EnergyModel::default();
    let mut totals = BTreeMap::new();
    let mut membrane = BTreeMap::new();
    for product in [ProductMode::Inner, ProductMode::Outer, ProductMode::Gustavson] {
        let cfg = SimConfig { product, mesh: MESH3, seed: 13, ..SimConfig::default() };
        let trace = run_inference(&net, &info, &mapping, &input, &cfg).unwrap();
        let activity = spikemesh_core::engine::energy::ActivityTotals {
            counters: trace.counters,
            fifo_accesses: trace.fifo_accesses,
            flit_hops: trace.flit_hops,
            cycles: trace.cycles,
            cores: 9,
        };
        totals.insert(
            product.as_str(),
            spikemesh_core::engine::energy_report(&activity, &energy_model).total,
        );
        membrane.insert(product.as_str(), trace.counters.membrane_row_accesses());
    }
    assert!(membrane["gustavson"] <= membrane["outer"]);
    assert!(totals["gustavson"] < totals["inner"]);
    assert!(totals["gustavson"] < totals["outer"]);
    println!(
        "ACCEPTANCE C5 PASS: membrane accesses gustavson {} <= outer {}; energy gustavson {:.0} < inner {:.0} and < outer {:.0}",
        membrane["gustavson"], membrane["outer"], totals["gustavson"], totals["inner"], totals["outer"]
    );
}

/// Criterion 6: GA routing tables never exceed the pure X-Y peak bandwidth
/// on 50 random flow sets, and on the constructed two-flow instance the GA
/// reaches within 5% of the brute-force optimum (half the X-Y peak).
#[test]
fn criterion_06_routing_rpb() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for trial in 0..50u64 {
        let n = rng.gen_range(1..7);
        let flows: Vec<Flow> = (0..n)
            .map(|_| {
                let src = Coord::new(rng.gen_range(0..3), rng.gen_range(0..3));
                let mut dst = src;
                while dst == src {
                    dst = Coord::new(rng.gen_range(0..3), rng.gen_range(0..3));
                }
                Flow {
                    src,
                    dst,
                    rate: rng.gen_range(1..6) as f64,
                    candidates: spikemesh_core::noc::candidate_paths(src, dst, 3, None),
                }
            })
            .collect();
        let probs = ga_optimize_paths(&flows, &GaParams::default(), trial);
        let ga = required_peak_bandwidth(&flows, &probs);
        let xy = required_peak_bandwidth(&flows, &xy_probabilities(&flows));
        assert!(ga <= xy + 1e-9, "trial {trial}: GA {ga} > XY {xy}");
    }

    // Two equal flows share the X-Y path and split onto the disjoint Y-X
    // alternative.
    let src = Coord::new(0, 0);
    let dst = Coord::new(1, 1);
    let cands = vec![xy_path(src, dst), yx_path(src, dst)];
    let flows: Vec<Flow> = (0..2)
        .map(|_| Flow { src, dst, rate: 1.0, candidates: cands.clone() })
        .collect();
    let xy_rpb = required_peak_bandwidth(&flows, &xy_probabilities(&flows));
    assert_eq!(xy_rpb, 2.0);
    let mut brute = f64::INFINITY;
    for i in 0..=100 {
        for j in 0..=100 {
            let probs = vec![
                vec![i as f64 / 100.0, 1.0 - i as f64 / 100.0],
                vec![j as f64 / 100.0, 1.0 - j as f64 / 100.0],
            ];
            brute = brute.min(required_peak_bandwidth(&flows, &probs));
        }
    }
    assert!((brute - 1.0).abs() < 1e-9);
    let ga = required_peak_bandwidth(&flows, &ga_optimize_paths(&flows, &GaParams::default(), 6));
    assert!(
        ga <= brute * 1.05,
        "GA {ga} not within 5% of brute-force {brute}"
    );
    println!(
        "ACCEPTANCE C6 PASS: GA <= X-Y on 50 random flow sets; constructed instance GA {ga:.3} within 5% of optimum {brute:.3} (X-Y {xy_rpb:.1})"
    );
}

/// Criterion 7: over flit sizes {48, 64, 128, 192, 256} the wire traffic
/// strictly falls then strictly rises, while latency is non-increasing.
#[test]
fn criterion_07_flit_size_sweep() {
    let params = GenParams { kind: GenKind::Cnn, seed: 7, ..GenParams::default() };
    let net = generate_network(&params).unwrap();
    let info = net.compile().unwrap();
    let caps = CoreCapacity { mem_bytes: 3000, neuron_circuits: 4 };
    let mapping = build_mapping(&net, &info, &MESH3, &caps, 0.2, 7).unwrap();
    let input = generate_input(&net, 7);
    let mut traffic = Vec::new();
    let mut latency = Vec::new();
    for flit_bits in [48u32, 64, 128, 192, 256] {
        let cfg = SimConfig {
            mesh: MeshConfig { flit_bits, ..MESH3 },
            seed: 7,
            ..SimConfig::default()
        };
        let trace = run_inference(&net, &info, &mapping, &input, &cfg).unwrap();
        traffic.push(trace.wire_bits);
        latency.push(trace.cycles);
    }
    let min_idx = traffic
        .iter()
        .enumerate()
        .min_by_key(|(_, &v)| v)
        .map(|(i, _)| i)
        .unwrap();
    assert!(min_idx > 0 && min_idx < traffic.len() - 1, "traffic {traffic:?} monotone");
    for i in 0..min_idx {
        assert!(traffic[i] > traffic[i + 1], "not strictly falling: {traffic:?}");
    }
    for i in min_idx..traffic.len() - 1 {
        assert!(traffic[i] < traffic[i + 1], "not strictly rising: {traffic:?}");
    }
    for w in latency.windows(2) {
        assert!(w[0] >= w[1], "latency increased with flit size: {latency:?}");
    }
    println!(
        "ACCEPTANCE C7 PASS: traffic {traffic:?} falls then rises (min at {} bits); latency {latency:?} non-increasing",
        [48, 64, 128, 192, 256][min_idx]
    );
}

/// Criterion 8: sweeping theta over {0.1..0.9}, the mean termination step
/// is non-decreasing and the mismatch rate against the stable state is
/// non-increasing; theta -> 1 gives zero mismatch.
#[test]
fn criterion_08_elastic_termination() {
    let params = GenParams {
        kind: GenKind::Mlp,
        width: 16,
        layers: 2,
        seed: 88,
        ..GenParams::default()
    };
    let net = generate_network(&params).unwrap();
    let info = net.compile().unwrap();
    let caps = CoreCapacity { mem_bytes: 60_000, neuron_circuits: 16 };
    let mapping = build_mapping(&net, &info, &MESH3, &caps, 0.2, 88).unwrap();
    let ds = generate_dataset(&net, 24, 88).unwrap();
    let cfg = SimConfig { mesh: MESH3, seed: 88, ..SimConfig::default() };

    let stable: Vec<usize> = ds
        .inputs
        .iter()
        .map(|input| {
            run_inference(&net, &info, &mapping, input, &cfg)
                .unwrap()
                .final_prediction()
                .unwrap()
        })
        .collect();

    let mut mean_terms = Vec::new();
    let mut mismatches = Vec::new();
    let thetas: Vec<f64> = (1..=9).map(|t| t as f64 / 10.0).collect();
    for &theta in &thetas {
        let mut terms = 0.0;
        let mut early = Vec::new();
        for input in &ds.inputs {
            let out = elastic_run(&net, &info, &mapping, input, &cfg, ElasticConfig { theta })
                .unwrap();
            terms += out.terminated_at as f64;
            early.push(out.prediction);
        }
        mean_terms.push(terms / ds.inputs.len() as f64);
        mismatches.push(mismatch_rate(&early, &stable).unwrap());
    }
    for w in mean_terms.windows(2) {
        assert!(w[0] <= w[1] + 1e-9, "termination not monotone: {mean_terms:?}");
    }
    for w in mismatches.windows(2) {
        assert!(w[0] >= w[1] - 1e-9, "mismatch not monotone: {mismatches:?}");
    }
    // theta -> 1: full-depth runs match the stable state exactly.
    let mut early = Vec::new();
    for input in &ds.inputs {
        let out = elastic_run(&net, &info, &mapping, input, &cfg, ElasticConfig { theta: 1.0 })
            .unwrap();
        early.push(out.prediction);
    }
    assert_eq!(mismatch_rate(&early, &stable).unwrap(), 0.0);
    println!(
        "ACCEPTANCE C8 PASS: mean termination {mean_terms:?} non-decreasing; mismatch {mismatches:?} non-increasing; theta=1 mismatch 0"
    );
}

/// Criterion 9: the dependency scheduler never dispatches an output spine
/// before its receptive field is complete and never misses one, against a
/// brute-force oracle over 500 random conv geometries.
#[test]
fn criterion_09_scheduler_safety() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    while checked < 500 {
        let geom = ConvGeom {
            kernel_h: rng.gen_range(1..5),
            kernel_w: rng.gen_range(1..5),
            stride: rng.gen_range(1..3),
            padding: rng.gen_range(0..2),
            input_h: rng.gen_range(1..8),
            input_w: rng.gen_range(1..8),
            channels: 1,
        };
        let Ok((oh, ow)) = geom.output_dims(0) else { continue };
        checked += 1;
        let mut order: Vec<(u32, u32)> = (0..geom.input_h)
            .flat_map(|i| (0..geom.input_w).map(move |j| (i, j)))
            .collect();
        order.shuffle(&mut rng);
        let mut tracker = DependencyTracker::new(geom);
        let mut arrived = vec![vec![false; geom.input_w as usize]; geom.input_h as usize];
        let mut released = vec![false; (oh * ow) as usize];
        for (step, &(i, j)) in order.iter().enumerate() {
            arrived[i as usize][j as usize] = true;
            let last = step + 1 == order.len();
            for (r, c) in tracker.on_arrival(i, j).unwrap() {
                let idx = (r * ow + c) as usize;
                assert!(!released[idx], "double dispatch");
                released[idx] = true;
            }
            for r in 0..oh {
                for c in 0..ow {
                    let mut valid_done = true;
                    let mut trailing = false;
                    for kh in 0..geom.kernel_h {
                        for kw in 0..geom.kernel_w {
                            let ih = (r * geom.stride + kh) as i64 - geom.padding as i64;
                            let iw = (c * geom.stride + kw) as i64 - geom.padding as i64;
                            if ih >= geom.input_h as i64 || iw >= geom.input_w as i64 {
                                trailing = true;
                            } else if ih >= 0 && iw >= 0 && !arrived[ih as usize][iw as usize] {
                                valid_done = false;
                            }
                        }
                    }
                    let expect = valid_done && (!trailing || last);
                    assert_eq!(
                        released[(r * ow + c) as usize],
                        expect,
                        "premature or missed dispatch, geom {geom:?}"
                    );
                }
            }
        }
        assert!(released.iter().all(|&b| b), "missed outputs");
    }
    println!("ACCEPTANCE C9 PASS: 500 random geometries, zero premature dispatches, zero missed outputs");
}

/// Criterion 10: repeating a `sim` invocation with the same seed produces
/// byte-identical report files.
#[test]
fn criterion_10_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_spikemesh");
    let net_path = dir.path().join("net.json");
    let map_path = dir.path().join("mapping.json");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "spikemesh {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "gen", "--kind", "cnn", "--seed", "17",
        "--out", net_path.to_str().unwrap(),
    ]);
    run(&[
        "map", "--net", net_path.to_str().unwrap(),
        "--mesh-rows", "3", "--mesh-cols", "3", "--seed", "17",
        "--circuit-capacity", "16", "--mem-capacity", "8192",
        "--out", map_path.to_str().unwrap(),
    ]);
    let sim = |out_dir: &str| {
        run(&[
            "sim", "--net", net_path.to_str().unwrap(),
            "--mapping", map_path.to_str().unwrap(),
            "--input-seed", "17", "--seed", "17",
            "--routing", "multipath",
            "--out-dir", dir.path().join(out_dir).to_str().unwrap(),
        ]);
    };
    sim("a");
    sim("b");
    for file in ["report.json", "trace.csv", "links.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    println!("ACCEPTANCE C10 PASS: repeated sim runs byte-identical (report.json, trace.csv, links.csv)");
}
