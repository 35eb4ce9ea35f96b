#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zdalab::graph::{Edge, Topology};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn topo(id: u32, n: usize, edges: &[(usize, usize, f64)]) -> Topology {
    let e: Vec<Edge> = edges.iter().map(|&(i, j, w)| Edge(i, j, w)).collect();
    Topology::from_edges(id, n, &e).unwrap()
}

pub fn p3() -> Topology {
    topo(1, 3, &[(1, 2, 1.0), (2, 3, 1.0)])
}

/// Random spanning tree plus extra edges with probability `extra`, weights in [0.5, 2).
pub fn random_connected(rng: &mut ChaCha8Rng, id: u32, n: usize, extra: f64) -> Topology {
    let mut a = DMatrix::zeros(n, n);
    for i in 1..n {
        let j = rng.random_range(0..i);
        let w = rng.random_range(0.5..2.0);
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if a[(i, j)] == 0.0 && rng.random::<f64>() < extra {
                let w = rng.random_range(0.5..2.0);
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    Topology::new(id, a).unwrap()
}

/// Random graph without a connectivity guarantee, unit weights.
pub fn random_graph(rng: &mut ChaCha8Rng, id: u32, n: usize, p: f64) -> Topology {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    Topology::new(id, a).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.random_range(-scale..scale)))
}

/// Random nonempty subset of `0..n` of size at most `max`, sorted.
pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    let m = rng.random_range(1..=max.min(n));
    let mut out: Vec<usize> = Vec::new();
    while out.len() < m {
        let i = rng.random_range(0..n);
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out.sort();
    out
}
