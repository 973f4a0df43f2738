//! Placement: Hilbert-curve initial assignment followed by greedy
//! force-potential refinement.
//!
//! The potential of a placement is `sum over flows of traffic * manhattan
//! distance`; refinement applies the best pairwise swap (vacant cells are
//! swappable) while the potential strictly decreases.

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::noc::Coord;

/// Maps curve distance to (x, y) on an order-`n` Hilbert curve (`n` a power
/// of two). Orientation is fixed so the order-1 curve visits
/// (0,0),(1,0),(1,1),(0,1) in (row, col) terms.
fn hilbert_d2xy(n: u32, d: u32) -> (u32, u32) {
    let (mut x, mut y) = (0u32, 0u32);
    let mut t = d;
    let mut s = 1u32;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

/// Mesh cells in Hilbert visit order, truncated to in-bounds cells for
/// non-power-of-two meshes.
pub fn hilbert_cells(rows: u32, cols: u32) -> Vec<Coord> {
    let side = rows.max(cols).next_power_of_two().max(1);
    let mut cells = Vec::with_capacity((rows * cols) as usize);
    for d in 0..side * side {
        let (x, y) = hilbert_d2xy(side, d);
        // x walks columns, y walks rows.
        if y < rows && x < cols {
            cells.push(Coord::new(y, x));
        }
    }
    cells
}

/// Linearizes the partition traffic graph: DFS from the start partition,
/// visiting the heaviest edge first; detached components follow by id.
fn linearize(
    n_partitions: usize,
    traffic: &[(usize, usize, f64)],
    start: usize,
) -> Vec<usize> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_partitions];
    for &(a, b, c) in traffic {
        adj[a].push((b, c));
        adj[b].push((a, c));
    }
    for nbrs in adj.iter_mut() {
        nbrs.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    }
    let mut order = Vec::with_capacity(n_partitions);
    let mut visited = vec![false; n_partitions];
    let mut stack = vec![start];
    loop {
        while let Some(p) = stack.pop() {
            if visited[p] {
                continue;
            }
            visited[p] = true;
            order.push(p);
            // Reverse so the heaviest neighbour is popped first.
            for &(nbr, _) in adj[p].iter().rev() {
                if !visited[nbr] {
                    stack.push(nbr);
                }
            }
        }
        match (0..n_partitions).find(|&p| !visited[p]) {
            Some(next) => stack.push(next),
            None => break,
        }
    }
    order
}

/// Initial placement: partitions in traffic-linearized order assigned to
/// cells in Hilbert visit order.
pub fn hilbert_place(
    n_partitions: usize,
    traffic: &[(usize, usize, f64)],
    mesh: (u32, u32),
    start: usize,
) -> Result<BTreeMap<usize, Coord>> {
    let cells = hilbert_cells(mesh.0, mesh.1);
    if n_partitions > cells.len() {
        return Err(SimError::TooManyPartitions {
            partitions: n_partitions,
            rows: mesh.0 as usize,
            cols: mesh.1 as usize,
        });
    }
    let order = linearize(n_partitions, traffic, start);
    Ok(order.into_iter().zip(cells).collect())
}

/// Total force potential of a placement.
pub fn placement_potential(
    placement: &BTreeMap<usize, Coord>,
    traffic: &[(usize, usize, f64)],
) -> f64 {
    traffic
        .iter()
        .map(|&(a, b, c)| c * placement[&a].manhattan(&placement[&b]) as f64)
        .sum()
}

/// Greedy refinement: repeatedly applies the best improving swap between
/// any two mesh cells (occupied or vacant) until a local minimum.
pub fn refine_placement(
    placement: &BTreeMap<usize, Coord>,
    traffic: &[(usize, usize, f64)],
    mesh: (u32, u32),
) -> BTreeMap<usize, Coord> {
    let mut current = placement.clone();
    let all_cells: Vec<Coord> = (0..mesh.0)
        .flat_map(|r| (0..mesh.1).map(move |c| Coord::new(r, c)))
        .collect();
    let mut best_phi = placement_potential(&current, traffic);
    loop {
        let occupant: BTreeMap<Coord, usize> =
            current.iter().map(|(&p, &c)| (c, p)).collect();
        let mut best_move: Option<(Coord, Coord, f64)> = None;
        for (i, &c1) in all_cells.iter().enumerate() {
            for &c2 in &all_cells[i + 1..] {
                let (o1, o2) = (occupant.get(&c1), occupant.get(&c2));
                if o1.is_none() && o2.is_none() {
                    continue;
                }
                let mut trial = current.clone();
                if let Some(&p) = o1 {
                    trial.insert(p, c2);
                }
                if let Some(&p) = o2 {
                    trial.insert(p, c1);
                }
                let phi = placement_potential(&trial, traffic);
                if phi + 1e-12 < best_move.map_or(best_phi, |(_, _, f)| f) {
                    best_move = Some((c1, c2, phi));
                }
            }
        }
        match best_move {
            Some((c1, c2, phi)) => {
                let occupant: BTreeMap<Coord, usize> =
                    current.iter().map(|(&p, &c)| (c, p)).collect();
                if let Some(&p) = occupant.get(&c1) {
                    current.insert(p, c2);
                }
                if let Some(&p) = occupant.get(&c2) {
                    current.insert(p, c1);
                }
                best_phi = phi;
            }
            None => return current,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_one_curve_orientation() {
        let cells = hilbert_cells(2, 2);
        assert_eq!(
            cells,
            vec![
                Coord::new(0, 0),
                Coord::new(1, 0),
                Coord::new(1, 1),
                Coord::new(0, 1)
            ]
        );
    }

    #[test]
    fn curve_visits_every_cell_once() {
        for (r, c) in [(2, 2), (3, 3), (4, 4), (3, 5), (6, 6)] {
            let cells = hilbert_cells(r, c);
            assert_eq!(cells.len(), (r * c) as usize);
            let set: std::collections::BTreeSet<_> = cells.iter().collect();
            assert_eq!(set.len(), cells.len());
        }
    }

    #[test]
    fn consecutive_order_cells_are_adjacent_on_square_mesh() {
        let cells = hilbert_cells(4, 4);
        for w in cells.windows(2) {
            assert_eq!(w[0].manhattan(&w[1]), 1);
        }
    }

    #[test]
    fn single_partition_placed_at_curve_start() {
        let p = hilbert_place(1, &[], (3, 3), 0).unwrap();
        assert_eq!(p[&0], Coord::new(0, 0));
    }

    #[test]
    fn too_many_partitions_rejected() {
        assert!(matches!(
            hilbert_place(5, &[], (2, 2), 0),
            Err(SimError::TooManyPartitions { .. })
        ));
    }

    #[test]
    fn refinement_never_increases_potential() {
        let traffic = vec![(0, 1, 4.0), (1, 2, 4.0), (2, 3, 4.0)];
        let initial = hilbert_place(4, &traffic, (2, 2), 0).unwrap();
        let phi0 = placement_potential(&initial, &traffic);
        let refined = refine_placement(&initial, &traffic, (2, 2));
        assert!(placement_potential(&refined, &traffic) <= phi0);
    }

    #[test]
    fn optimal_placement_is_a_fixed_point() {
        // Two partitions, heavy flow: adjacent cells on a 1x2 mesh.
        let traffic = vec![(0, 1, 1.0)];
        let mut opt = BTreeMap::new();
        opt.insert(0, Coord::new(0, 0));
        opt.insert(1, Coord::new(0, 1));
        let refined = refine_placement(&opt, &traffic, (1, 2));
        assert_eq!(placement_potential(&refined, &traffic), 1.0);
    }

    #[test]
    fn swapped_pair_recovers_on_line_mesh() {
        // Chain 0-1 with 1 pinned by heavy self cost... a 1x3 mesh where 0
        // and 1 start maximally separated; one swap restores adjacency.
        let traffic = vec![(0, 1, 2.0)];
        let mut bad = BTreeMap::new();
        bad.insert(0, Coord::new(0, 0));
        bad.insert(1, Coord::new(0, 2));
        let refined = refine_placement(&bad, &traffic, (1, 3));
        assert_eq!(placement_potential(&refined, &traffic), 2.0);
    }

    /// Brute-force optimum comparison on 3x3 meshes with up to 6 partitions.
    #[test]
    fn refined_potential_near_exhaustive_optimum() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cells: Vec<Coord> = (0..3)
            .flat_map(|r| (0..3).map(move |c| Coord::new(r, c)))
            .collect();
        for _ in 0..20 {
            let n = rng.gen_range(2..=6usize);
            let mut traffic = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.gen_bool(0.4) {
                        traffic.push((a, b, rng.gen_range(1..10) as f64));
                    }
                }
            }
            let initial = hilbert_place(n, &traffic, (3, 3), 0).unwrap();
            let refined = refine_placement(&initial, &traffic, (3, 3));
            let phi = placement_potential(&refined, &traffic);
            assert!(phi <= placement_potential(&initial, &traffic));

            // Exhaustive search over all injective placements.
            let mut best = f64::INFINITY;
            let mut idx = vec![0usize; n];
            fn rec(
                k: usize,
                n: usize,
                cells: &[Coord],
                used: &mut Vec<bool>,
                idx: &mut Vec<usize>,
                traffic: &[(usize, usize, f64)],
                best: &mut f64,
            ) {
                if k == n {
                    let placement: BTreeMap<usize, Coord> =
                        idx.iter().enumerate().map(|(p, &c)| (p, cells[c])).collect();
                    let phi = placement_potential(&placement, traffic);
                    if phi < *best {
                        *best = phi;
                    }
                    return;
                }
                for c in 0..cells.len() {
                    if !used[c] {
                        used[c] = true;
                        idx[k] = c;
                        rec(k + 1, n, cells, used, idx, traffic, best);
                        used[c] = false;
                    }
                }
            }
            rec(0, n, &cells, &mut vec![false; 9], &mut idx, &traffic, &mut best);
            let total: f64 = traffic.iter().map(|t| t.2).sum();
            assert!(
                phi <= best * 1.25 + 1e-9,
                "refined {phi} vs optimal {best} (total traffic {total})"
            );
        }
    }
}
