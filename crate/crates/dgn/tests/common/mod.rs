#![allow(dead_code)]

use std::path::Path;

use dgn::io::save_generic;
use dgn_core::graph::{generate_split, Graph, Masks};
use dgn_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Homophilous random graph with noisy class-indicator features and a
/// 10-per-class / 40 / 80 split.
pub fn blocks(n: usize, classes: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|v| v % classes).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for _ in 0..4 {
            let v = rng.gen_range(0..n);
            if labels[u] == labels[v] || rng.gen_bool(0.1) {
                edges.push((u, v));
            }
        }
    }
    let features = Matrix::from_fn(n, classes + 5, |v, c| {
        let signal = if c == labels[v] { 0.8 } else { 0.0 };
        signal + rng.gen_range(-1.0f32..1.0)
    });
    let g = Graph::from_edges(n, &edges, features, labels, classes, Masks::empty(n)).unwrap();
    let masks = generate_split(&g, 10, 40, 80, seed).unwrap();
    g.with_masks(masks).unwrap()
}

/// Writes a small generic-format dataset and returns its config JSON.
pub fn dataset(dir: &Path, out: &Path, model: &str, extra: &str) -> String {
    let data = dir.join("toy");
    save_generic(&blocks(200, 3, 1), &data).unwrap();
    format!(
        r#"{{"dataset": {{"path": {:?}, "format": "generic"}},
            "model": {model},
            "train": {{"max_epochs": 40, "patience": 15}},
            "output_dir": {:?},
            "repeats": 2{extra}}}"#,
        data.to_str().unwrap(),
        out.to_str().unwrap()
    )
}
