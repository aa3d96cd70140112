use rand::Rng;

use crate::matrix::Matrix;
use crate::scalar::Real;

/// Uniform samples on `[-a, a]` with `a = sqrt(6 / (rows + cols))`.
pub fn glorot_init<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<T> {
    let a = num_traits::Float::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-a..=a)))
}
