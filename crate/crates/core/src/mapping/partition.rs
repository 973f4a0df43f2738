//! Greedy capacity-bounded partitioning.
//!
//! Connections are processed in descending traffic order; two partitions
//! merge when the union's memory and neuron-circuit demands both fit a
//! single core. Merging is union-find with demands recomputed as set sums,
//! so transitive merges never double-count.

use crate::error::{Result, SimError};

#[derive(Debug, Clone)]
pub struct PartitionInput {
    /// Memory demand per item, bytes.
    pub mem_demand: Vec<u64>,
    /// Neuron-circuit demand per item.
    pub circuit_demand: Vec<u64>,
    pub mem_capacity: u64,
    pub circuit_capacity: u64,
    /// Directed traffic (from, to, flits) between items.
    pub traffic: Vec<(usize, usize, f64)>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Smaller root wins: keeps partition ids stable.
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
    }
}

/// Returns partition sets of item indices, each respecting both capacities.
/// Partitions are ordered by their smallest member.
pub fn greedy_partition(input: &PartitionInput) -> Result<Vec<Vec<usize>>> {
    let n = input.mem_demand.len();
    assert_eq!(n, input.circuit_demand.len());
    for i in 0..n {
        if input.mem_demand[i] > input.mem_capacity {
            return Err(SimError::LayerTooLarge {
                layer: i,
                demand: input.mem_demand[i],
                capacity: input.mem_capacity,
                resource: "memory",
            });
        }
        if input.circuit_demand[i] > input.circuit_capacity {
            return Err(SimError::LayerTooLarge {
                layer: i,
                demand: input.circuit_demand[i],
                capacity: input.circuit_capacity,
                resource: "neuron circuits",
            });
        }
    }

    let mut edges = input.traffic.clone();
    // Descending traffic; ties broken by endpoint ids for determinism.
    edges.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut uf = UnionFind::new(n);
    let mut mem: Vec<u64> = input.mem_demand.clone();
    let mut circ: Vec<u64> = input.circuit_demand.clone();
    for (a, b, _) in edges {
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb {
            continue; // already one partition
        }
        let m = mem[ra] + mem[rb];
        let d = circ[ra] + circ[rb];
        if m <= input.mem_capacity && d <= input.circuit_capacity {
            uf.union(ra, rb);
            let root = uf.find(ra);
            mem[root] = m;
            circ[root] = d;
        }
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    Ok(groups.into_values().collect())
}
