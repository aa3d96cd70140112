mod common;

use common::dense_adjacency;
use dgn_core::graph::{normalize_adjacency, Graph, Masks};
use dgn_core::layers::{pair_norm, BatchNorm, Dgn};
use dgn_core::matrix::matmul;
use dgn_core::metrics::{group_distances, FeatureKernel};
use dgn_core::{Matrix, Tape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c))
}

fn graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n)
        .prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..3 * n)))
        .prop_map(|(n, edges)| {
            Graph::from_edges(n, &edges, Matrix::zeros(n, 1), vec![0; n], 1, Masks::empty(n)).unwrap()
        })
}

/// Features plus labels drawn from up to `classes` values.
fn labelled(max_n: usize, d: usize, classes: usize) -> impl Strategy<Value = (Matrix<f64>, Vec<usize>)> {
    (2..=max_n).prop_flat_map(move |n| (matrix(n, d), prop::collection::vec(0..classes, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in sized_matrix(6, 6)) {
        let mut tape = Tape::new();
        let t = tape.constant(x).unwrap();
        let y = tape.row_softmax(t).unwrap();
        let y = tape.value(y);
        for r in 0..y.rows() {
            let row = y.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0 || (row.len() == 1 && p == 1.0)));
        }
    }

    #[test]
    fn reuse_doubles_gradient(x in sized_matrix(4, 4), w in matrix(4, 4)) {
        let grad = |twice: bool| {
            let mut tape = Tape::new();
            let xt = tape.leaf(x.clone(), true).unwrap();
            let wt = tape.constant(Matrix::from_fn(x.rows(), x.cols(), |r, c| w.get(r % 4, c % 4))).unwrap();
            let f = |tape: &mut Tape<f64>| {
                let s = tape.row_softmax(xt).unwrap();
                let p = tape.mul(s, wt).unwrap();
                tape.sum(p).unwrap()
            };
            let a = f(&mut tape);
            let y = if twice { let b = f(&mut tape); tape.add(a, b).unwrap() } else { a };
            tape.backward(y).unwrap().get(xt).unwrap().clone()
        };
        let once = grad(false);
        let both = grad(true);
        for (a, b) in once.as_slice().iter().zip(both.as_slice()) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn normalized_adjacency_invariants(g in graph(12)) {
        let a = normalize_adjacency::<f64>(&g);
        let dense = a.to_dense();
        prop_assert_eq!(&dense, &dense.transpose());
        for v in 0..g.num_nodes() {
            prop_assert_eq!(a.pattern().row(v).len(), g.adjacency().degree(v) + 1);
        }
        prop_assert!(a.values().iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn spmm_matches_dense(g in graph(50), seed in any::<u64>()) {
        let n = g.num_nodes();
        let h = common::random_matrix(n, 3, seed);
        let a = normalize_adjacency::<f64>(&g);
        let mut tape = Tape::new();
        let ht = tape.constant(h.clone()).unwrap();
        let out = tape.spmm(&a, ht).unwrap();
        let oracle = matmul(&dense_adjacency(&g), &h).unwrap();
        prop_assert!(tape.value(out).max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn pair_norm_is_idempotent(h in (2usize..10, 1usize..5).prop_flat_map(|(r, c)| matrix(r, c))) {
        let mut tape = Tape::new();
        let t = tape.constant(h).unwrap();
        let once = pair_norm(&mut tape, t).unwrap();
        let twice = pair_norm(&mut tape, once).unwrap();
        prop_assert!(tape.value(twice).max_abs_diff(tape.value(once)) < 1e-6);
    }

    #[test]
    fn dgn_assignments_are_row_stochastic(h in matrix(7, 4), groups in 1usize..6, seed in any::<u64>()) {
        let dgn = Dgn::<f64>::new(4, groups, 0.1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut tape = Tape::new();
        let t = tape.constant(h).unwrap();
        let s = dgn.assign(&mut tape, t).unwrap();
        let s = tape.value(s);
        for r in 0..s.rows() {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(s.row(r).iter().all(|&p| p > 0.0 && p <= 1.0));
        }
    }

    #[test]
    fn dgn_with_zero_lambda_is_identity(h in matrix(6, 3), training in any::<bool>()) {
        let dgn = Dgn::<f64>::new(3, 4, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tape = Tape::new();
        let t = tape.constant(h.clone()).unwrap();
        let (out, _) = dgn.forward(&mut tape, t, training).unwrap();
        prop_assert_eq!(tape.value(out), &h);
    }

    #[test]
    fn dgn_single_group_is_residual_batch_norm(h in matrix(8, 3), lambda in 0.01f64..2.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dgn = Dgn::<f64>::new(3, 1, lambda, &mut rng).unwrap();
        let gamma = common::random_matrix(1, 3, seed ^ 1);
        let beta = common::random_matrix(1, 3, seed ^ 2);
        dgn.gamma.set(gamma.clone());
        dgn.beta.set(beta.clone());
        let mut bn = BatchNorm::<f64>::new(3);
        bn.gamma.set(gamma);
        bn.beta.set(beta);
        let mut tape = Tape::new();
        let t = tape.constant(h.clone()).unwrap();
        let (d, _) = dgn.forward(&mut tape, t, true).unwrap();
        let (b, _) = bn.forward(&mut tape, t, true).unwrap();
        let expect = Matrix::from_fn(8, 3, |r, c| h.get(r, c) + lambda * tape.value(b).get(r, c));
        prop_assert!(tape.value(d).max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn batch_norm_eval_is_affine(h in matrix(5, 2), k in -2.0f64..2.0) {
        let mut bn = BatchNorm::<f64>::new(2);
        let mut tape = Tape::new();
        let t = tape.constant(h.clone()).unwrap();
        let (_, stats) = bn.forward(&mut tape, t, true).unwrap();
        bn.update_running(&stats.unwrap());
        // f(a + k·b) − f(a) = k·(f(a + b) − f(a)) for an affine f
        let eval = |m: &Matrix<f64>| {
            let mut tape = Tape::new();
            let t = tape.constant(m.clone()).unwrap();
            let (y, _) = bn.forward(&mut tape, t, false).unwrap();
            tape.value(y).clone()
        };
        let ones = Matrix::filled(5, 2, 1.0);
        let shifted = Matrix::from_fn(5, 2, |r, c| h.get(r, c) + k);
        let step = Matrix::from_fn(5, 2, |r, c| h.get(r, c) + ones.get(r, c));
        let (f0, fk, f1) = (eval(&h), eval(&shifted), eval(&step));
        for i in 0..10 {
            let lhs = fk.as_slice()[i] - f0.as_slice()[i];
            let rhs = k * (f1.as_slice()[i] - f0.as_slice()[i]);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn ratio_invariant_under_rotation_and_translation(
        (h, labels) in labelled(20, 2, 3),
        angle in 0.0f64..6.3,
        shift in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let (c, s) = (angle.cos(), angle.sin());
        let moved = Matrix::from_fn(h.rows(), 2, |r, k| {
            let (x, y) = (h.get(r, 0), h.get(r, 1));
            if k == 0 { c * x - s * y + shift.0 } else { s * x + c * y + shift.1 }
        });
        let a = group_distances(&h, &labels, None, 0).unwrap();
        let b = group_distances(&moved, &labels, None, 0).unwrap();
        prop_assert!((a.inter - b.inter).abs() < 1e-9);
        prop_assert!((a.intra - b.intra).abs() < 1e-9);
    }

    #[test]
    fn ratio_invariant_under_scaling((h, labels) in labelled(20, 3, 3), scale in 0.1f64..10.0) {
        let a = group_distances(&h, &labels, None, 0).unwrap();
        prop_assume!(a.groups >= 2 && a.intra > 1e-6);
        let scaled = h.map(|x| x * scale);
        let b = group_distances(&scaled, &labels, None, 0).unwrap();
        prop_assert!((a.ratio() - b.ratio()).abs() < 1e-9 * a.ratio().max(1.0));
    }

    #[test]
    fn info_gain_ignores_class_relabelling(
        (x, _) in labelled(15, 3, 2),
        seed in any::<u64>(),
        perm in Just([2usize, 0, 3, 1]),
    ) {
        let logits = common::random_matrix(x.rows(), 4, seed);
        let permuted = Matrix::from_fn(x.rows(), 4, |r, c| logits.get(r, perm[c]));
        let k = FeatureKernel::new(&x, 0.5).unwrap();
        let a = k.info_gain(&logits).unwrap();
        let b = k.info_gain(&permuted).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= 0.0 && a <= k.marginal_entropy() + 1e-12);
    }
}
