#![allow(dead_code)]

use dgn_core::graph::{Graph, Masks};
use dgn_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected-ish graph: a ring plus `extra` random chords.
pub fn random_graph(n: usize, d: usize, classes: usize, extra: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    for _ in 0..extra {
        edges.push((rng.gen_range(0..n), rng.gen_range(0..n)));
    }
    let features = Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0f32..1.0));
    let labels: Vec<usize> = (0..n).map(|v| v % classes).collect();
    let all = (0..n).collect::<Vec<_>>();
    let masks = Masks::from_indices(n, &all, &[], &[]).unwrap();
    Graph::from_edges(n, &edges, features, labels, classes, masks).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Dense copy of a normalized adjacency.
pub fn dense_adjacency(g: &Graph) -> Matrix<f64> {
    dgn_core::graph::normalize_adjacency::<f64>(g).to_dense()
}
