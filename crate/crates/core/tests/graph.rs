mod common;

use dgn_core::graph::{generate_split, mask_features, normalize_adjacency, Graph, Masks};
use dgn_core::{Matrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn repeated_propagation_converges() {
    let g = common::random_graph(40, 3, 2, 30, 6);
    let a = normalize_adjacency::<f64>(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h0 = Matrix::from_fn(40, 3, |_, _| rng.gen_range(0.0..1.0));
    let mut tape = Tape::new();
    let mut h = tape.constant(h0).unwrap();
    let mut steps = Vec::new();
    for _ in 0..200 {
        let next = tape.spmm(&a, h).unwrap();
        steps.push(tape.value(next).max_abs_diff(tape.value(h)));
        h = next;
    }
    // Late steps shrink monotonically toward zero.
    for w in steps[100..].windows(2) {
        assert!(w[1] <= w[0] + 1e-15);
    }
    assert!(steps[199] < 1e-3 * steps[0]);
}

#[test]
fn spmm_leaves_isolated_nodes_unchanged() {
    let n = 4;
    let g = Graph::from_edges(n, &[], Matrix::zeros(n, 1), vec![0; n], 1, Masks::empty(n)).unwrap();
    let a = normalize_adjacency::<f64>(&g);
    let h = common::random_matrix(n, 3, 2);
    let mut tape = Tape::new();
    let t = tape.constant(h.clone()).unwrap();
    let out = tape.spmm(&a, t).unwrap();
    assert_eq!(tape.value(out), &h);
}

#[test]
fn split_follows_requested_sizes() {
    let n = 300;
    let labels: Vec<usize> = (0..n).map(|v| v % 7).collect();
    let g = Graph::from_edges(n, &[], Matrix::zeros(n, 2), labels, 7, Masks::empty(n)).unwrap();
    let m = generate_split(&g, 20, 60, 100, 3).unwrap();
    assert_eq!(m.train_indices().len(), 140);
    assert_eq!(m.val_indices().len(), 60);
    assert_eq!(m.test_indices().len(), 100);
    for c in 0..7 {
        assert_eq!(m.train_indices().iter().filter(|&&v| g.labels()[v] == c).count(), 20);
    }
    assert_eq!(generate_split(&g, 20, 60, 100, 3).unwrap(), m);
    assert_ne!(generate_split(&g, 20, 60, 100, 4).unwrap(), m);
    assert!(generate_split(&g, 20, 60, 101, 3).is_err());
    assert!(generate_split(&g, 50, 0, 0, 3).is_err());
}

#[test]
fn masked_features_zero_exactly_val_and_test() {
    let g = common::random_graph(30, 4, 3, 5, 0);
    assert_eq!(mask_features(&g).features(), g.features());
    let g = g.with_masks(Masks::from_indices(30, &[0, 1, 2], &[3, 4], &[5]).unwrap()).unwrap();
    let masked = mask_features(&g);
    for v in 0..30 {
        if (3..=5).contains(&v) {
            assert!(masked.features().row(v).iter().all(|&x| x == 0.0));
        } else {
            assert_eq!(masked.features().row(v), g.features().row(v));
        }
    }
}
