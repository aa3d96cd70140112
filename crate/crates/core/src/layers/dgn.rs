use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::{GroupStats, Param, Tape, Tensor};
use crate::train::glorot_init;

use super::norm::running_mode;
use super::{ema, NORM_EPS, RUNNING_MOMENTUM};

/// Differentiable group normalization.
///
/// Nodes are softly assigned to `G` groups by `S = softmax(H·U)` (row-wise).
/// Each group's masked embedding `S[:,i] ∘ H` is batch-normalized with its
/// own statistics and affine pair, and the result is added back onto the
/// input: `H + λ · Σ_i (γ_i ∘ (S[:,i]∘H − μ_i)/σ_i + β_i)`.
#[derive(Debug, Clone)]
pub struct Dgn<T> {
    /// Assignment weights, `d × G`.
    pub u: Param<T>,
    /// Per-group scale, one row per group (`G × d`).
    pub gamma: Param<T>,
    /// Per-group shift, `G × d`.
    pub beta: Param<T>,
    running_mean: Matrix<T>,
    running_var: Matrix<T>,
    pub lambda: T,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> Dgn<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, groups: usize, lambda: f64, rng: &mut R) -> Result<Self> {
        if groups == 0 {
            return Err(Error::param("group normalization needs at least one group"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(alloc::format!("balancing factor must be finite and non-negative, got {lambda}")));
        }
        Ok(Dgn {
            u: Param::new(glorot_init(d, groups, rng)),
            gamma: Param::new(Matrix::filled(groups, d, T::one())),
            beta: Param::new(Matrix::zeros(groups, d)),
            running_mean: Matrix::zeros(groups, d),
            running_var: Matrix::filled(groups, d, T::one()),
            lambda: T::of(lambda),
            momentum: T::of(RUNNING_MOMENTUM),
            eps: T::of(NORM_EPS),
        })
    }

    pub fn groups(&self) -> usize {
        self.u.value().cols()
    }

    /// Running group means, one row per group.
    pub fn running_mean(&self) -> &Matrix<T> {
        &self.running_mean
    }

    pub fn running_std(&self) -> Matrix<T> {
        self.running_var.map(|v| (v + self.eps).sqrt())
    }

    /// Row-stochastic group assignment `softmax(H·U)`.
    pub fn assign(&self, tape: &mut Tape<T>, h: Tensor) -> Result<Tensor> {
        let u = tape.param(&self.u)?;
        let logits = tape.matmul(h, u)?;
        tape.row_softmax(logits)
    }

    pub fn forward(&self, tape: &mut Tape<T>, h: Tensor, training: bool) -> Result<(Tensor, Option<GroupStats<T>>)> {
        if self.lambda == T::zero() {
            return Ok((h, None));
        }
        let s = self.assign(tape, h)?;
        let gamma = tape.param(&self.gamma)?;
        let beta = tape.param(&self.beta)?;
        let mode = running_mode(training, self.eps, &self.running_mean, &self.running_var);
        tape.group_norm_residual(h, s, gamma, beta, mode, self.lambda)
    }

    pub fn update_running(&mut self, stats: &GroupStats<T>) {
        ema(&mut self.running_mean, &mut self.running_var, stats, self.momentum);
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.u, &self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.u, &mut self.gamma, &mut self.beta]
    }
}
