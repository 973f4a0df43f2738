//! Path construction on the 2D mesh: deterministic X-Y, Valiant random
//! intermediate, and table-driven probabilistic multi-path.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Mesh coordinate (row, col).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub fn new(row: u32, col: u32) -> Self {
        Coord { row, col }
    }

    pub fn manhattan(&self, other: &Coord) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

/// Directed link between adjacent cores.
pub type Link = (Coord, Coord);

/// Node sequence from src to dst, omitting src itself. Empty when src == dst.
pub type Path = Vec<Coord>;

pub fn path_links(src: Coord, path: &Path) -> Vec<Link> {
    let mut links = Vec::with_capacity(path.len());
    let mut here = src;
    for &next in path {
        links.push((here, next));
        here = next;
    }
    links
}

fn walk_cols(path: &mut Path, from: Coord, to_col: u32) -> Coord {
    let mut here = from;
    while here.col != to_col {
        here.col = if to_col > here.col { here.col + 1 } else { here.col - 1 };
        path.push(here);
    }
    here
}

fn walk_rows(path: &mut Path, from: Coord, to_row: u32) -> Coord {
    let mut here = from;
    while here.row != to_row {
        here.row = if to_row > here.row { here.row + 1 } else { here.row - 1 };
        path.push(here);
    }
    here
}

/// Dimension-ordered minimal path: X (columns) first, then Y (rows).
pub fn xy_path(src: Coord, dst: Coord) -> Path {
    let mut path = Vec::new();
    let mid = walk_cols(&mut path, src, dst.col);
    walk_rows(&mut path, mid, dst.row);
    path
}

/// Y (rows) first, then X (columns).
pub fn yx_path(src: Coord, dst: Coord) -> Path {
    let mut path = Vec::new();
    let mid = walk_rows(&mut path, src, dst.row);
    walk_cols(&mut path, mid, dst.col);
    path
}

/// Detour through an intermediate column: X to `via_col`, Y to the target
/// row, X to the target column.
pub fn detour_path(src: Coord, dst: Coord, via_col: u32) -> Path {
    let mut path = Vec::new();
    let a = walk_cols(&mut path, src, via_col);
    let b = walk_rows(&mut path, a, dst.row);
    walk_cols(&mut path, b, dst.col);
    path
}

/// Valiant: route X-Y to a uniformly random intermediate node, then X-Y to
/// the destination.
pub fn valiant_path<R: Rng>(src: Coord, dst: Coord, rows: u32, cols: u32, rng: &mut R) -> Path {
    let via = Coord::new(rng.gen_range(0..rows), rng.gen_range(0..cols));
    let mut path = xy_path(src, via);
    path.extend(xy_path(via, dst));
    path
}

/// Candidate path set for multi-path routing: X-Y, Y-X, and one detour
/// column when it adds a distinct alternative. Deduplicated.
pub fn candidate_paths(src: Coord, dst: Coord, mesh_cols: u32, via_col: Option<u32>) -> Vec<Path> {
    let mut cands = vec![xy_path(src, dst)];
    let yx = yx_path(src, dst);
    if !cands.contains(&yx) {
        cands.push(yx);
    }
    let via = via_col.unwrap_or_else(|| {
        // Default detour column: one beyond the src/dst column span.
        let hi = src.col.max(dst.col);
        if hi + 1 < mesh_cols {
            hi + 1
        } else {
            src.col.min(dst.col).saturating_sub(1)
        }
    });
    let detour = detour_path(src, dst, via);
    if !cands.contains(&detour) {
        cands.push(detour);
    }
    cands
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingEngine {
    Xy,
    Valiant,
    Multipath,
}

/// Per-flow candidate paths with transmission probabilities (summing to 1).
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    pub flows: BTreeMap<(Coord, Coord), Vec<(Path, f64)>>,
}

impl RoutingTable {
    pub fn validate(&self) -> Result<()> {
        for ((src, dst), entries) in &self.flows {
            let total: f64 = entries.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(SimError::MappingIncomplete(format!(
                    "flow {src:?}->{dst:?} probabilities sum to {total}"
                )));
            }
        }
        Ok(())
    }

    /// Samples one candidate path by its probability.
    pub fn sample<R: Rng>(&self, src: Coord, dst: Coord, rng: &mut R) -> Result<Path> {
        let entries = self
            .flows
            .get(&(src, dst))
            .ok_or(SimError::NoPathConfigured {
                src: (src.row, src.col),
                dst: (dst.row, dst.col),
            })?;
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        for (path, p) in entries {
            acc += p;
            if draw < acc {
                return Ok(path.clone());
            }
        }
        Ok(entries.last().unwrap().0.clone())
    }
}

/// Routes one flow under the selected engine.
pub fn route<R: Rng>(
    src: Coord,
    dst: Coord,
    engine: RoutingEngine,
    table: Option<&RoutingTable>,
    mesh: (u32, u32),
    rng: &mut R,
) -> Result<Path> {
    if src == dst {
        return Ok(Vec::new());
    }
    match engine {
        RoutingEngine::Xy => Ok(xy_path(src, dst)),
        RoutingEngine::Valiant => Ok(valiant_path(src, dst, mesh.0, mesh.1, rng)),
        RoutingEngine::Multipath => match table {
            Some(t) => t.sample(src, dst, rng),
            None => Err(SimError::NoPathConfigured {
                src: (src.row, src.col),
                dst: (dst.row, dst.col),
            }),
        },
    }
}

/// Path legality: every step moves to a 4-neighbour inside the mesh and the
/// walk ends at dst.
pub fn path_is_legal(src: Coord, dst: Coord, path: &Path, rows: u32, cols: u32) -> bool {
    let mut here = src;
    for &next in path {
        let adjacent = here.manhattan(&next) == 1;
        let inside = next.row < rows && next.col < cols;
        if !adjacent || !inside {
            return false;
        }
        here = next;
    }
    here == dst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_node_routes_empty() {
        let c = Coord::new(2, 2);
        assert!(xy_path(c, c).is_empty());
        assert!(yx_path(c, c).is_empty());
    }

    #[test]
    fn xy_goes_columns_first() {
        let path = xy_path(Coord::new(0, 0), Coord::new(1, 2));
        assert_eq!(
            path,
            vec![Coord::new(0, 1), Coord::new(0, 2), Coord::new(1, 2)]
        );
    }

    #[test]
    fn yx_goes_rows_first() {
        let path = yx_path(Coord::new(0, 0), Coord::new(1, 2));
        assert_eq!(
            path,
            vec![Coord::new(1, 0), Coord::new(1, 1), Coord::new(1, 2)]
        );
    }

    #[test]
    fn every_engine_returns_legal_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (4, 5);
        for _ in 0..200 {
            let src = Coord::new(rng.gen_range(0..rows), rng.gen_range(0..cols));
            let dst = Coord::new(rng.gen_range(0..rows), rng.gen_range(0..cols));
            for path in [
                xy_path(src, dst),
                yx_path(src, dst),
                valiant_path(src, dst, rows, cols, &mut rng),
                detour_path(src, dst, rng.gen_range(0..cols)),
            ] {
                assert!(path_is_legal(src, dst, &path, rows, cols));
            }
        }
    }

    #[test]
    fn multipath_sampling_matches_probabilities() {
        let src = Coord::new(0, 0);
        let dst = Coord::new(1, 2);
        let mut table = RoutingTable::default();
        table.flows.insert(
            (src, dst),
            vec![(xy_path(src, dst), 0.5), (yx_path(src, dst), 0.5)],
        );
        table.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut xy_count = 0u32;
        for _ in 0..n {
            let p = table.sample(src, dst, &mut rng).unwrap();
            if p == xy_path(src, dst) {
                xy_count += 1;
            }
        }
        // 3 sigma of a fair binomial with n = 10^4 is 150.
        assert!((xy_count as i64 - 5000).abs() < 150, "split {xy_count}");
    }

    #[test]
    fn missing_flow_errors() {
        let table = RoutingTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            route(
                Coord::new(0, 0),
                Coord::new(1, 1),
                RoutingEngine::Multipath,
                Some(&table),
                (2, 2),
                &mut rng
            ),
            Err(SimError::NoPathConfigured { .. })
        ));
    }
}
