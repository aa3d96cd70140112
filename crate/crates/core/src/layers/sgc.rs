use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::{Param, Tape, Tensor};
use crate::train::glorot_init;

/// One parameter-free propagation step, `Â · H`.
pub fn sgc_forward<T: Real>(tape: &mut Tape<T>, a: &NormalizedAdjacency<T>, h: Tensor) -> Result<Tensor> {
    tape.spmm(a, h)
}

/// Affine classifier `H·W + b` applied after the last SGC propagation.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Param<T>,
    pub b: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear { w: Param::new(glorot_init(d_in, d_out, rng)), b: Param::new(Matrix::zeros(1, d_out)) }
    }

    pub fn from_weights(w: Matrix<T>, b: Matrix<T>) -> Self {
        Linear { w: Param::new(w), b: Param::new(b) }
    }

    pub fn forward(&self, tape: &mut Tape<T>, h: Tensor) -> Result<Tensor> {
        let w = tape.param(&self.w)?;
        let b = tape.param(&self.b)?;
        let hw = tape.matmul(h, w)?;
        tape.add_row(hw, b)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w, &mut self.b]
    }
}
