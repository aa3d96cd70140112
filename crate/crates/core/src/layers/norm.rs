use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::{GroupNormMode, GroupStats, Param, Tape, Tensor};

use super::{ema, Dgn};

/// Added to the variance inside every square root.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in running-statistics updates.
pub const RUNNING_MOMENTUM: f64 = 0.1;

/// Column-wise batch normalization with affine `γ`, `β` (each `1 × d`).
///
/// Training mode normalizes with batch mean and population variance; eval
/// mode uses the running estimates, which start at mean 0, variance 1.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    running_mean: Matrix<T>,
    running_var: Matrix<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(d: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Matrix::filled(1, d, T::one())),
            beta: Param::new(Matrix::zeros(1, d)),
            running_mean: Matrix::zeros(1, d),
            running_var: Matrix::filled(1, d, T::one()),
            momentum: T::of(RUNNING_MOMENTUM),
            eps: T::of(NORM_EPS),
        }
    }

    pub fn running_mean(&self) -> &Matrix<T> {
        &self.running_mean
    }

    /// `sqrt(running variance + ε)`.
    pub fn running_std(&self) -> Matrix<T> {
        self.running_var.map(|v| (v + self.eps).sqrt())
    }

    pub fn forward(&self, tape: &mut Tape<T>, h: Tensor, training: bool) -> Result<(Tensor, Option<GroupStats<T>>)> {
        let ones = tape.constant(Matrix::filled(h.rows(), 1, T::one()))?;
        let gamma = tape.param(&self.gamma)?;
        let beta = tape.param(&self.beta)?;
        let mode = running_mode(training, self.eps, &self.running_mean, &self.running_var);
        tape.group_norm(h, ones, gamma, beta, mode)
    }

    pub fn update_running(&mut self, stats: &GroupStats<T>) {
        ema(&mut self.running_mean, &mut self.running_var, stats, self.momentum);
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

pub(crate) fn running_mode<T: Real>(training: bool, eps: T, mean: &Matrix<T>, var: &Matrix<T>) -> GroupNormMode<T> {
    if training {
        GroupNormMode::Batch { eps }
    } else {
        GroupNormMode::Fixed { mean: mean.clone(), inv_std: var.map(|v| T::one() / (v + eps).sqrt()) }
    }
}

/// Column standardization `(x − μ)/σ` with batch statistics, no affine
/// parameters and no running state. σ is floored at [`NORM_EPS`] so constant
/// columns map to zero and a standardized input is a fixed point.
pub fn pair_norm<T: Real>(tape: &mut Tape<T>, h: Tensor) -> Result<Tensor> {
    let d = h.cols();
    let ones = tape.constant(Matrix::filled(h.rows(), 1, T::one()))?;
    let gamma = tape.constant(Matrix::filled(1, d, T::one()))?;
    let beta = tape.constant(Matrix::zeros(1, d))?;
    let (out, _) = tape.group_norm(h, ones, gamma, beta, GroupNormMode::Standardize { floor: T::of(NORM_EPS) })?;
    Ok(out)
}

/// The normalizer placed between propagation layers.
#[derive(Debug, Clone)]
pub enum Normalizer<T> {
    Identity,
    Batch(BatchNorm<T>),
    Pair,
    Dgn(Dgn<T>),
}

impl<T: Real> Normalizer<T> {
    /// Returns the normalized tensor and, for stateful normalizers in
    /// training mode, the batch statistics to fold into the running state.
    pub fn forward(&self, tape: &mut Tape<T>, h: Tensor, training: bool) -> Result<(Tensor, Option<GroupStats<T>>)> {
        match self {
            Normalizer::Identity => Ok((h, None)),
            Normalizer::Batch(bn) => bn.forward(tape, h, training),
            Normalizer::Pair => Ok((pair_norm(tape, h)?, None)),
            Normalizer::Dgn(dgn) => dgn.forward(tape, h, training),
        }
    }

    pub fn update_running(&mut self, stats: &GroupStats<T>) {
        match self {
            Normalizer::Batch(bn) => bn.update_running(stats),
            Normalizer::Dgn(dgn) => dgn.update_running(stats),
            Normalizer::Identity | Normalizer::Pair => {}
        }
    }

    /// True when the output depends only on the input, so propagation
    /// through it can be computed once and reused.
    pub fn is_stateless(&self) -> bool {
        matches!(self, Normalizer::Identity | Normalizer::Pair)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Normalizer::Batch(bn) => bn.params(),
            Normalizer::Dgn(dgn) => dgn.params(),
            Normalizer::Identity | Normalizer::Pair => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Normalizer::Batch(bn) => bn.params_mut(),
            Normalizer::Dgn(dgn) => dgn.params_mut(),
            Normalizer::Identity | Normalizer::Pair => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Matrix<f64> {
        Matrix::from_fn(values.len(), 1, |r, _| values[r])
    }

    #[test]
    fn constant_column_goes_to_zero() {
        let bn = BatchNorm::<f64>::new(1);
        let mut tape = Tape::new();
        let h = tape.constant(column(&[4.0, 4.0, 4.0])).unwrap();
        let (out, _) = bn.forward(&mut tape, h, true).unwrap();
        assert_eq!(tape.value(out).as_slice(), &[0.0; 3]);
        let p = pair_norm(&mut tape, h).unwrap();
        assert_eq!(tape.value(p).as_slice(), &[0.0; 3]);
    }

    #[test]
    fn two_values_standardize_to_unit() {
        let bn = BatchNorm::<f64>::new(1);
        let mut tape = Tape::new();
        let h = tape.constant(column(&[1.0, 3.0])).unwrap();
        let (out, stats) = bn.forward(&mut tape, h, true).unwrap();
        let v = tape.value(out).clone();
        assert!((v.get(0, 0) + 1.0).abs() < 1e-5 && (v.get(1, 0) - 1.0).abs() < 1e-5);
        let stats = stats.unwrap();
        assert_eq!(stats.mean.as_slice(), &[2.0]);
        assert_eq!(stats.var.as_slice(), &[1.0]);
        let p = pair_norm(&mut tape, h).unwrap();
        assert_eq!(tape.value(p).as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardized_column_is_unchanged() {
        let mut tape = Tape::new();
        let h = tape.constant(column(&[-1.5, 0.5, 0.5, 0.5])).unwrap();
        let once = pair_norm(&mut tape, h).unwrap();
        let twice = pair_norm(&mut tape, once).unwrap();
        assert!(tape.value(twice).max_abs_diff(tape.value(once)) < 1e-12);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma.set(Matrix::zeros(1, 2));
        bn.beta.set(Matrix::from_rows(&[&[0.5, -2.0]]).unwrap());
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_fn(3, 2, |r, c| (r * c) as f64 + r as f64)).unwrap();
        let (out, _) = bn.forward(&mut tape, h, true).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(out).row(r), &[0.5, -2.0]);
        }
    }

    #[test]
    fn running_stats_follow_ema() {
        let mut bn = BatchNorm::<f64>::new(1);
        let mut tape = Tape::new();
        let h = tape.constant(column(&[1.0, 3.0])).unwrap();
        let (_, stats) = bn.forward(&mut tape, h, true).unwrap();
        bn.update_running(&stats.unwrap());
        assert!((bn.running_mean().get(0, 0) - 0.2).abs() < 1e-15);
        // variance 0.9·1 + 0.1·1
        assert!((bn.running_std().get(0, 0) - (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);
        assert!(bn.running_std().get(0, 0) >= bn.eps);
    }

    #[test]
    fn eval_mode_is_fixed_affine_map() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.update_running(&GroupStats { mean: column(&[3.0]), var: column(&[4.0]) });
        let mut tape = Tape::new();
        let a = tape.constant(column(&[0.0, 1.0, 2.0])).unwrap();
        let (out, stats) = bn.forward(&mut tape, a, false).unwrap();
        assert!(stats.is_none());
        let v = tape.value(out).as_slice();
        // Equal input steps give equal output steps.
        assert!(((v[1] - v[0]) - (v[2] - v[1])).abs() < 1e-15);
        let (again, _) = bn.forward(&mut tape, a, false).unwrap();
        assert_eq!(tape.value(again), tape.value(out));
    }
}
