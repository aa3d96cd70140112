use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::SparsePattern;
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::{Param, Tape, Tensor};
use crate::train::glorot_init;

pub const GAT_SLOPE: f64 = 0.2;

/// Single-head graph attention.
///
/// `e_vv' = LeakyReLU(aᵀ[Wh_v ‖ Wh_v'])`, normalized by softmax over the
/// closed neighborhood of `v`, then `ReLU(Σ α_vv' W h_v')`.
#[derive(Debug, Clone)]
pub struct GatLayer<T> {
    pub w: Param<T>,
    /// Attention vector, `2·d_out × 1`.
    pub a: Param<T>,
}

impl<T: Real> GatLayer<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = Param::new(glorot_init(d_in, d_out, rng));
        let a = Param::new(glorot_init(2 * d_out, 1, rng));
        GatLayer { w, a }
    }

    pub fn from_weights(w: Matrix<T>, a: Matrix<T>) -> Self {
        GatLayer { w: Param::new(w), a: Param::new(a) }
    }

    /// Attention coefficients (one per entry of `closed`) and `W·H`.
    pub fn attention(&self, tape: &mut Tape<T>, closed: &Rc<SparsePattern>, h: Tensor) -> Result<(Tensor, Tensor)> {
        let w = tape.param(&self.w)?;
        let a = tape.param(&self.a)?;
        let wh = tape.matmul(h, w)?;
        let e = tape.edge_logits(closed, wh, a)?;
        let e = tape.leaky_relu(e, T::of(GAT_SLOPE))?;
        let alpha = tape.edge_softmax(closed, e)?;
        Ok((alpha, wh))
    }

    /// `closed` must include every self-loop, as the pattern of the
    /// normalized adjacency does.
    pub fn forward(&self, tape: &mut Tape<T>, closed: &Rc<SparsePattern>, h: Tensor, last_layer: bool) -> Result<Tensor> {
        let (alpha, wh) = self.attention(tape, closed, h)?;
        let z = tape.edge_spmm(closed, alpha, wh)?;
        if last_layer {
            Ok(z)
        } else {
            tape.relu(z)
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w, &self.a]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph, Masks};

    fn closed(n: usize, edges: &[(usize, usize)]) -> Rc<SparsePattern> {
        let g = Graph::from_edges(n, edges, Matrix::zeros(n, 1), vec![0; n], 1, Masks::empty(n)).unwrap();
        Rc::clone(normalize_adjacency::<f64>(&g).pattern())
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let p = closed(1, &[]);
        let layer = GatLayer::from_weights(Matrix::identity(2), Matrix::filled(4, 1, 0.3));
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[&[2.0, -1.0]]).unwrap()).unwrap();
        let (alpha, _) = layer.attention(&mut tape, &p, h).unwrap();
        assert_eq!(tape.value(alpha).as_slice(), &[1.0]);
        let out = layer.forward(&mut tape, &p, h, false).unwrap();
        assert_eq!(tape.value(out).as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn zero_attention_vector_is_uniform() {
        // star: node 0 joined to 1, 2, 3
        let p = closed(4, &[(0, 1), (0, 2), (0, 3)]);
        let w = Matrix::from_fn(3, 2, |r, c| (r + c) as f64 * 0.7 - 0.4);
        let layer = GatLayer::from_weights(w, Matrix::zeros(4, 1));
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.1)).unwrap();
        let (alpha, _) = layer.attention(&mut tape, &p, h).unwrap();
        let alpha = tape.value(alpha);
        for v in 0..4 {
            let share = 1.0 / p.row(v).len() as f64;
            for k in p.row_range(v) {
                assert!((alpha.as_slice()[k] - share).abs() < 1e-15);
            }
        }
        assert_eq!(p.row(0).len(), 4);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = closed(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]);
        let layer = GatLayer::<f64>::new(3, 4, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2));
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_fn(5, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0)).unwrap();
        let (alpha, _) = layer.attention(&mut tape, &p, h).unwrap();
        let alpha = tape.value(alpha);
        for v in 0..5 {
            let total: f64 = p.row_range(v).map(|k| alpha.as_slice()[k]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
