use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::{Param, Tape, Tensor};
use crate::train::glorot_init;

/// `ReLU(Â · H · W)`; the ReLU is dropped on the output layer.
#[derive(Debug, Clone)]
pub struct GcnLayer<T> {
    pub w: Param<T>,
}

impl<T: Real> GcnLayer<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        GcnLayer { w: Param::new(glorot_init(d_in, d_out, rng)) }
    }

    pub fn from_weights(w: Matrix<T>) -> Self {
        GcnLayer { w: Param::new(w) }
    }

    pub fn forward(&self, tape: &mut Tape<T>, a: &NormalizedAdjacency<T>, h: Tensor, last_layer: bool) -> Result<Tensor> {
        let w = tape.param(&self.w)?;
        // (ÂH)W == Â(HW); projecting first keeps the sparse product narrow.
        let hw = tape.matmul(h, w)?;
        let z = tape.spmm(a, hw)?;
        if last_layer {
            Ok(z)
        } else {
            tape.relu(z)
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph, Masks};

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(n, edges, Matrix::zeros(n, 1), vec![0; n], 1, Masks::empty(n)).unwrap()
    }

    #[test]
    fn isolated_node_identity_weights() {
        let a = normalize_adjacency::<f64>(&graph(1, &[]));
        let layer = GcnLayer::from_weights(Matrix::identity(2));
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[&[1.0, -1.0]]).unwrap()).unwrap();
        let out = layer.forward(&mut tape, &a, h, false).unwrap();
        assert_eq!(tape.value(out).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn path_averages() {
        let a = normalize_adjacency::<f64>(&graph(2, &[(0, 1)]));
        let layer = GcnLayer::from_weights(Matrix::identity(1));
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[&[0.0], &[2.0]]).unwrap()).unwrap();
        let out = layer.forward(&mut tape, &a, h, false).unwrap();
        assert_eq!(tape.value(out).as_slice(), &[1.0, 1.0]);
    }
}
