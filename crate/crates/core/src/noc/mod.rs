//! Network-on-chip: flit codecs, routing engines, the mesh fabric, and the
//! router-side functional units.

pub mod flit;
pub mod router;
pub mod routing;
pub mod units;

use serde::{Deserialize, Serialize};

pub use flit::{
    baer_wire_bits, decode_baer, encode_baer, legacy_wire_bits, slots_per_flit, AerPacket,
    BaerFlit, FlitType, AER_PACKET_BITS,
};
pub use router::{assign_data_paths, DataPathAssignment, FabricCounters, MeshFabric, TransitFlit};
pub use routing::{
    candidate_paths, detour_path, path_is_legal, path_links, route, valiant_path, xy_path,
    yx_path, Coord, Link, Path, RoutingEngine, RoutingTable,
};

/// Mesh dimensions and link parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub rows: u32,
    pub cols: u32,
    /// Flits per link per cycle.
    pub link_bandwidth: u32,
    pub flit_bits: u32,
    /// Bytes per router input FIFO (four queues per router).
    pub fifo_bytes: u32,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            rows: 6,
            cols: 6,
            link_bandwidth: 1,
            flit_bits: 256,
            fifo_bytes: 512,
        }
    }
}

impl MeshConfig {
    pub fn cores(&self) -> usize {
        (self.rows * self.cols) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AerMode {
    Legacy,
    Baer,
}
