mod args;
mod compare;
mod config;
mod simrun;

use std::process::ExitCode;

use clap::Parser;

use spikemesh_core::error::{Result, SimError};
use spikemesh_core::mapping::{build_items, build_mapping, build_mapping_from_items, CoreCapacity, Mapping};
use spikemesh_core::model::NetworkSpec;
use spikemesh_core::netgen::{self, GenKind, GenParams};
use spikemesh_core::noc::MeshConfig;

use args::{Cli, Command, CompareArgs, GenArgs, KindArg, MapArgs, ReportArgs, SimArgs};
use compare::{apply_axis, run_value, sweep_inputs, write_sweep_csv, Axis, SweepRow};
use config::{load_config_file, resolve};
use simrun::{
    build_report, load_input, run_once, write_flit_dump, write_links_csv, write_report_json,
    write_trace_csv, Report,
};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit 1; --help/--version exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = load_config_file(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Map(a) => cmd_map(a, &file),
        Command::Sim(a) => cmd_sim(a, &file),
        Command::Compare(a) => cmd_compare(a, &file),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let params = GenParams {
        kind: match a.kind {
            KindArg::Cnn => GenKind::Cnn,
            KindArg::Mlp => GenKind::Mlp,
            KindArg::Transformer => GenKind::Transformer,
        },
        layers: a.layers,
        width: a.width,
        classes: a.classes,
        time_steps: a.time_steps,
        seed: a.seed,
        density: a.density,
        with_residual: a.residual,
    };
    if params.layers == 0 || params.width == 0 || params.classes < 2 {
        return Err(SimError::Validation {
            layer: 0,
            field: "gen",
            msg: "need layers >= 1, width >= 1, classes >= 2".into(),
        });
    }
    let net = netgen::generate_network(&params)?;
    net.save(&a.out)?;
    println!("wrote network with {} layers to {}", net.layers.len(), a.out.display());
    if let Some(n) = a.dataset {
        let out = a.dataset_out.clone().unwrap_or_else(|| {
            let mut p = a.out.clone();
            p.set_extension("dataset.json");
            p
        });
        let ds = netgen::generate_dataset(&net, n, a.seed)?;
        ds.save(&out)?;
        println!("wrote {} labeled samples to {}", n, out.display());
    }
    Ok(())
}

fn cmd_map(a: MapArgs, file: &config::ConfigFile) -> Result<()> {
    let net = NetworkSpec::load(&a.net)?;
    let info = net.compile()?;
    let mesh = MeshConfig {
        rows: a.mesh_rows.or(file.mesh_rows).unwrap_or(6),
        cols: a.mesh_cols.or(file.mesh_cols).unwrap_or(6),
        ..MeshConfig::default()
    };
    let mut caps = CoreCapacity::default();
    if let Some(v) = a.mem_capacity {
        caps.mem_bytes = v;
    }
    if let Some(v) = a.circuit_capacity {
        caps.neuron_circuits = v;
    }
    let density = a.density.unwrap_or(0.2);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let mut mapping = build_mapping(&net, &info, &mesh, &caps, density, seed)?;

    if a.measured {
        // One simulation pass with the analytic mapping, then re-partition
        // on the measured per-edge flit counts.
        let resolved = resolve(file, &default_flags(), Some((mesh.rows, mesh.cols)))?;
        let input = netgen::generate_input(&net, seed);
        let trace =
            spikemesh_core::engine::run_inference(&net, &info, &mapping, &input, &resolved.sim)?;
        let (items, mut pinput) = build_items(&net, &info, &caps, density)?;
        let mut measured = Vec::new();
        for &(a_l, b_l) in &net.edges {
            let flits = trace
                .flow_flits
                .get(&format!("{a_l}->{b_l}"))
                .copied()
                .unwrap_or(0) as f64;
            let src_cols: usize = items
                .iter()
                .filter(|it| it.layer == a_l)
                .map(|it| it.col_end - it.col_start)
                .sum();
            for (ia, it_a) in items.iter().enumerate() {
                if it_a.layer != a_l {
                    continue;
                }
                let share =
                    flits * (it_a.col_end - it_a.col_start) as f64 / src_cols.max(1) as f64;
                for (ib, it_b) in items.iter().enumerate() {
                    if it_b.layer == b_l {
                        measured.push((ia, ib, share));
                    }
                }
            }
        }
        pinput.traffic = measured;
        mapping = build_mapping_from_items(&net, &info, &mesh, items, pinput, density, seed)?;
    }

    mapping.save(&a.out)?;
    println!(
        "mapped {} layers into {} partitions on a {}x{} mesh -> {}",
        net.layers.len(),
        mapping.partitions.len(),
        mesh.rows,
        mesh.cols,
        a.out.display()
    );
    Ok(())
}

fn default_flags() -> args::RunFlags {
    args::RunFlags {
        pipeline: None,
        product: None,
        aer: None,
        routing: None,
        flit_bits: None,
        link_bandwidth: None,
        seed: None,
        theta: None,
        energy_model: None,
        injection_multiplier: None,
    }
}

fn cmd_sim(a: SimArgs, file: &config::ConfigFile) -> Result<()> {
    let net = NetworkSpec::load(&a.net)?;
    let info = net.compile()?;
    let mapping = Mapping::load(&a.mapping)?;
    mapping.validate(&net, &info)?;
    let mut resolved = resolve(file, &a.run, Some((mapping.mesh_rows, mapping.mesh_cols)))?;
    resolved.sim.record_wire = a.dump_flits.is_some();

    let (input, label) = match (&a.input, a.input_seed) {
        (Some(path), _) => load_input(path, a.index)?,
        (None, Some(seed)) => (netgen::generate_input(&net, seed), None),
        (None, None) => (netgen::generate_input(&net, resolved.sim.seed), None),
    };

    let trace = run_once(&net, &info, &mapping, &input, &resolved, a.elastic)?;
    let report = build_report(&trace, &resolved, a.elastic, label)?;

    std::fs::create_dir_all(&a.out_dir)?;
    write_report_json(&a.out_dir.join("report.json"), &report)?;
    write_trace_csv(&a.out_dir.join("trace.csv"), &trace, &resolved)?;
    write_links_csv(&a.out_dir.join("links.csv"), &trace)?;
    if let Some(dump) = &a.dump_flits {
        write_flit_dump(dump, &trace)?;
    }
    println!(
        "{} cycles, {} steps, prediction {} (confidence {:.3}), energy {:.1}",
        report.cycles, report.executed_steps, report.prediction, report.confidence,
        report.energy.total
    );
    Ok(())
}

fn cmd_compare(a: CompareArgs, file: &config::ConfigFile) -> Result<()> {
    let axis = Axis::parse(&a.axis)?;
    if a.values.is_empty() {
        return Err(SimError::Parse("compare needs at least one axis value".into()));
    }
    let net = NetworkSpec::load(&a.net)?;
    let info = net.compile()?;
    let mapping = Mapping::load(&a.mapping)?;
    mapping.validate(&net, &info)?;
    let base = resolve(file, &a.run, Some((mapping.mesh_rows, mapping.mesh_cols)))?;
    let inputs = sweep_inputs(&net, a.dataset.as_deref(), a.samples, a.input_seed)?;

    // Fan the axis values out across worker threads; results keep the
    // caller's value order.
    let mut rows: Vec<Option<Result<SweepRow>>> = Vec::new();
    rows.resize_with(a.values.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (i, value) in a.values.iter().enumerate() {
            let net = &net;
            let info = &info;
            let mapping = &mapping;
            let inputs = &inputs;
            let base = base.clone();
            handles.push((
                i,
                scope.spawn(move || -> Result<SweepRow> {
                    let mut resolved = base;
                    apply_axis(&mut resolved, axis, value)?;
                    run_value(net, info, mapping, inputs, &resolved, value)
                }),
            ));
        }
        for (i, h) in handles {
            rows[i] = Some(h.join().expect("sweep worker panicked"));
        }
    });
    let rows: Result<Vec<SweepRow>> = rows.into_iter().map(|r| r.unwrap()).collect();
    let rows = rows?;
    write_sweep_csv(&a.out, &a.axis, &rows)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report)?;
    let report: Report =
        serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))?;
    println!("cycles:            {}", report.cycles);
    println!("time-steps:        {}", report.executed_steps);
    println!("converged:         {}", report.converged);
    if let Some(fr) = report.first_response_cycle {
        println!("first response:    cycle {fr}");
    }
    if let Some(t) = report.terminated_at {
        println!("early termination: step {t} (theta {})", report.theta.unwrap_or(f64::NAN));
    }
    println!(
        "prediction:        {} (confidence {:.3})",
        report.prediction, report.confidence
    );
    if let Some(fcr) = report.fcr_cycle {
        println!("first correct:     cycle {fcr}");
    }
    println!("energy total:      {:.1}", report.energy.total);
    for (name, value, pct) in &report.energy.breakdown {
        println!("  {name:<16} {value:>12.1}  {pct:>5.1}%");
    }
    println!(
        "traffic:           {} flits, {} wire bits, peak link {} flits",
        report.traffic.total_flits, report.traffic.wire_bits, report.traffic.peak_link_flits
    );
    Ok(())
}
