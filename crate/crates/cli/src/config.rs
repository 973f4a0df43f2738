//! Run configuration with three-level precedence: CLI flags over config
//! file over built-in defaults. The config file path comes from `--config`
//! or the `SPIKEMESH_CONFIG` environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spikemesh_core::engine::{EnergyModel, ProductMode, SimConfig};
use spikemesh_core::error::{Result, SimError};
use spikemesh_core::noc::{AerMode, MeshConfig, RoutingEngine};
use spikemesh_core::schedule::PipelineMode;

use crate::args::RunFlags;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub pipeline: Option<String>,
    pub product: Option<String>,
    pub aer: Option<String>,
    pub routing: Option<String>,
    pub mesh_rows: Option<u32>,
    pub mesh_cols: Option<u32>,
    pub flit_bits: Option<u32>,
    pub link_bandwidth: Option<u32>,
    pub seed: Option<u64>,
    pub theta: Option<f64>,
    pub energy_model: Option<PathBuf>,
    pub injection_multiplier: Option<u32>,
}

pub fn parse_pipeline(s: &str) -> Result<PipelineMode> {
    match s {
        "none" => Ok(PipelineMode::None),
        "layer" | "layer_wise" => Ok(PipelineMode::LayerWise),
        "spine" | "token" | "spine_token" | "spine_token_wise" => {
            Ok(PipelineMode::SpineTokenWise)
        }
        _ => Err(SimError::Parse(format!("unknown pipeline mode `{s}`"))),
    }
}

pub fn parse_product(s: &str) -> Result<ProductMode> {
    match s {
        "inner" => Ok(ProductMode::Inner),
        "outer" => Ok(ProductMode::Outer),
        "gustavson" => Ok(ProductMode::Gustavson),
        _ => Err(SimError::Parse(format!("unknown product dataflow `{s}`"))),
    }
}

pub fn parse_aer(s: &str) -> Result<AerMode> {
    match s {
        "legacy" => Ok(AerMode::Legacy),
        "baer" => Ok(AerMode::Baer),
        _ => Err(SimError::Parse(format!("unknown AER mode `{s}`"))),
    }
}

pub fn parse_routing(s: &str) -> Result<RoutingEngine> {
    match s {
        "xy" => Ok(RoutingEngine::Xy),
        "valiant" => Ok(RoutingEngine::Valiant),
        "multipath" => Ok(RoutingEngine::Multipath),
        _ => Err(SimError::Parse(format!("unknown routing engine `{s}`"))),
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub sim: SimConfig,
    pub theta: f64,
    pub energy: EnergyModel,
}

pub fn load_config_file(explicit: Option<&Path>) -> Result<ConfigFile> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os("SPIKEMESH_CONFIG").map(PathBuf::from),
    };
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)?;
            serde_json::from_str(&text).map_err(|e| SimError::Parse(format!("{}: {e}", p.display())))
        }
        None => Ok(ConfigFile::default()),
    }
}

/// Merges defaults <- config file <- CLI flags. The mapping's mesh
/// dimensions win over everything (they are baked into the placement).
pub fn resolve(
    file: &ConfigFile,
    flags: &RunFlags,
    mesh_dims: Option<(u32, u32)>,
) -> Result<Resolved> {
    let mut sim = SimConfig::default();

    if let Some(s) = &file.pipeline {
        sim.pipeline = parse_pipeline(s)?;
    }
    if let Some(s) = &file.product {
        sim.product = parse_product(s)?;
    }
    if let Some(s) = &file.aer {
        sim.aer = parse_aer(s)?;
    }
    if let Some(s) = &file.routing {
        sim.routing = parse_routing(s)?;
    }
    if let Some(v) = file.mesh_rows {
        sim.mesh.rows = v;
    }
    if let Some(v) = file.mesh_cols {
        sim.mesh.cols = v;
    }
    if let Some(v) = file.flit_bits {
        sim.mesh.flit_bits = v;
    }
    if let Some(v) = file.link_bandwidth {
        sim.mesh.link_bandwidth = v;
    }
    if let Some(v) = file.seed {
        sim.seed = v;
    }
    if let Some(v) = file.injection_multiplier {
        sim.injection_multiplier = v;
    }

    if let Some(s) = &flags.pipeline {
        sim.pipeline = parse_pipeline(s)?;
    }
    if let Some(s) = &flags.product {
        sim.product = parse_product(s)?;
    }
    if let Some(s) = &flags.aer {
        sim.aer = parse_aer(s)?;
    }
    if let Some(s) = &flags.routing {
        sim.routing = parse_routing(s)?;
    }
    if let Some(v) = flags.flit_bits {
        sim.mesh.flit_bits = v;
    }
    if let Some(v) = flags.link_bandwidth {
        sim.mesh.link_bandwidth = v;
    }
    if let Some(v) = flags.seed {
        sim.seed = v;
    }
    if let Some(v) = flags.injection_multiplier {
        sim.injection_multiplier = v;
    }

    if let Some((rows, cols)) = mesh_dims {
        sim.mesh = MeshConfig {
            rows,
            cols,
            ..sim.mesh
        };
    }

    let theta = flags.theta.or(file.theta).unwrap_or(0.9);
    let energy_model_path = flags
        .energy_model
        .clone()
        .or_else(|| file.energy_model.clone());
    let energy = match &energy_model_path {
        Some(p) => {
            let m = EnergyModel::load(p)?;
            m.validate()?;
            m
        }
        None => EnergyModel::default(),
    };
    Ok(Resolved { sim, theta, energy })
}
