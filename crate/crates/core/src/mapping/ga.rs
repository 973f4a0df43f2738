//! Genetic optimization of per-flow transmission probabilities.
//!
//! The objective is the required peak bandwidth: the maximum expected
//! flits/cycle over all links. Pure X-Y routing is seeded into the initial
//! population and elitism preserves the best individual, so the result
//! never exceeds the X-Y baseline.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use crate::noc::{path_links, Coord, Link, Path};

#[derive(Debug, Clone)]
pub struct Flow {
    pub src: Coord,
    pub dst: Coord,
    pub rate: f64,
    /// 1..=3 candidate paths; index 0 is X-Y.
    pub candidates: Vec<Path>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub mutation_sigma: f64,
    pub elitism: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 64,
            generations: 200,
            tournament: 4,
            mutation_sigma: 0.1,
            elitism: 2,
        }
    }
}

/// Expected peak link load under the given per-flow path probabilities.
pub fn required_peak_bandwidth(flows: &[Flow], probs: &[Vec<f64>]) -> f64 {
    let mut load: BTreeMap<Link, f64> = BTreeMap::new();
    for (flow, p) in flows.iter().zip(probs.iter()) {
        for (path, &prob) in flow.candidates.iter().zip(p.iter()) {
            if prob == 0.0 {
                continue;
            }
            for link in path_links(flow.src, path) {
                *load.entry(link).or_insert(0.0) += flow.rate * prob;
            }
        }
    }
    load.values().fold(0.0f64, |m, &v| m.max(v))
}

/// All probability mass on the X-Y candidate.
pub fn xy_probabilities(flows: &[Flow]) -> Vec<Vec<f64>> {
    flows
        .iter()
        .map(|f| {
            let mut p = vec![0.0; f.candidates.len()];
            p[0] = 1.0;
            p
        })
        .collect()
}

fn normalize(p: &mut [f64]) {
    let mut total = 0.0;
    for v in p.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
        total += *v;
    }
    if total <= 0.0 {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|v| *v = u);
    } else {
        p.iter_mut().for_each(|v| *v /= total);
    }
}

type Genome = Vec<Vec<f64>>;

fn random_genome<R: Rng>(flows: &[Flow], rng: &mut R) -> Genome {
    flows
        .iter()
        .map(|f| {
            let mut p: Vec<f64> = (0..f.candidates.len()).map(|_| rng.gen::<f64>()).collect();
            normalize(&mut p);
            p
        })
        .collect()
}

/// Optimizes per-flow transmission probabilities; each returned vector sums
/// to one. Deterministic for a fixed seed.
pub fn ga_optimize_paths(flows: &[Flow], params: &GaParams, seed: u64) -> Vec<Vec<f64>> {
    if flows.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let mut population: Vec<Genome> = Vec::with_capacity(params.population);
    population.push(xy_probabilities(flows));
    population.push(
        flows
            .iter()
            .map(|f| vec![1.0 / f.candidates.len() as f64; f.candidates.len()])
            .collect(),
    );
    while population.len() < params.population {
        population.push(random_genome(flows, &mut rng));
    }

    let fitness = |g: &Genome| required_peak_bandwidth(flows, g);
    let mut scored: Vec<(f64, Genome)> =
        population.into_iter().map(|g| (fitness(&g), g)).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    for _ in 0..params.generations {
        let mut next: Vec<(f64, Genome)> = scored.iter().take(params.elitism).cloned().collect();
        while next.len() < params.population {
            let pick = |rng: &mut ChaCha8Rng| -> usize {
                (0..params.tournament)
                    .map(|_| rng.gen_range(0..scored.len()))
                    .min()
                    .unwrap()
            };
            let (a, b) = (pick(&mut rng), pick(&mut rng));
            let (pa, pb) = (&scored[a].1, &scored[b].1);
            // Uniform crossover per flow, then Gaussian mutation clipped to
            // the simplex.
            let mut child: Genome = pa
                .iter()
                .zip(pb.iter())
                .map(|(x, y)| if rng.gen_bool(0.5) { x.clone() } else { y.clone() })
                .collect();
            for p in child.iter_mut() {
                if p.len() > 1 {
                    for v in p.iter_mut() {
                        // Box-Muller keeps us off the rand_distr dependency.
                        let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-12), rng.gen());
                        let gauss =
                            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                        *v += params.mutation_sigma * gauss;
                    }
                }
                normalize(p);
            }
            next.push((fitness(&child), child));
        }
        next.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        next.truncate(params.population);
        scored = next;
    }
    scored.into_iter().next().unwrap().1
}
