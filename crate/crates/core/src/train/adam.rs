use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::Param;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState { m: Matrix::zeros(rows, cols), v: Matrix::zeros(rows, cols) }
    }
}

/// One bias-corrected Adam update at step `t ≥ 1`, with L2 decay added to
/// the gradient.
pub fn adam_step<T: Real>(
    param: &mut Matrix<T>,
    grad: &Matrix<T>,
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::param("Adam steps are counted from 1"));
    }
    if param.shape() != grad.shape() || state.m.shape() != param.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("parameter {:?}, gradient {:?}, state {:?}", param.shape(), grad.shape(), state.m.shape()),
        ));
    }
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let n = t.min(i32::MAX as u64) as i32;
    let c1 = T::of(1.0 - Float::powi(BETA1, n));
    let c2 = T::of(1.0 - Float::powi(BETA2, n));
    let (lr, wd, eps) = (T::of(lr), T::of(weight_decay), T::of(ADAM_EPS));
    let one = T::one();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (k, (p, &g)) in param.as_mut_slice().iter_mut().zip(grad.as_slice()).enumerate() {
        let g = g + wd * *p;
        m[k] = b1 * m[k] + (one - b1) * g;
        v[k] = b2 * v[k] + (one - b2) * g * g;
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub weight_decay: f64,
    t: u64,
    states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[&Param<T>], lr: f64, weight_decay: f64) -> Self {
        let states = params.iter().map(|p| AdamState::new(p.value().rows(), p.value().cols())).collect();
        Adam { lr, weight_decay, t: 0, states }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `grads[i]` of `None` means the loss did not reach parameter `i`; it is
    /// still decayed.
    pub fn step(&mut self, params: &mut [&mut Param<T>], grads: &[Option<Matrix<T>>]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "Adam::step",
                format!("{} parameters, {} gradients, {} states", params.len(), grads.len(), self.states.len()),
            ));
        }
        self.t += 1;
        for ((p, g), state) in params.iter_mut().zip(grads).zip(&mut self.states) {
            let value = p.make_mut();
            match g {
                Some(g) => adam_step(value, g, state, self.lr, self.weight_decay, self.t)?,
                None => {
                    let zero = Matrix::zeros(value.rows(), value.cols());
                    adam_step(value, &zero, state, self.lr, self.weight_decay, self.t)?
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Matrix::from_rows(&[&[1.0, -1.0, 0.0]]).unwrap();
        let g = Matrix::from_rows(&[&[0.3, -5.0, 1e-3]]).unwrap();
        let mut s = AdamState::new(1, 3);
        adam_step(&mut p, &g, &mut s, 0.01, 0.0, 1).unwrap();
        let expect = [1.0 - 0.01, -1.0 + 0.01, -0.01];
        for (a, b) in p.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = Matrix::from_rows(&[&[0.7, -2.0]]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(1, 2);
        for t in 1..=5 {
            adam_step(&mut p, &Matrix::zeros(1, 2), &mut s, 0.1, 0.0, t).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn decay_shrinks_toward_zero() {
        let mut p = Matrix::from_rows(&[&[0.7, -2.0]]).unwrap();
        let mut s = AdamState::new(1, 2);
        for t in 1..=5 {
            adam_step(&mut p, &Matrix::zeros(1, 2), &mut s, 0.01, 0.1, t).unwrap();
        }
        assert!(p.get(0, 0) < 0.7 && p.get(0, 0) > 0.0);
        assert!(p.get(0, 1) > -2.0 && p.get(0, 1) < 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Matrix::<f64>::zeros(2, 2);
        let mut s = AdamState::new(2, 2);
        let err = adam_step(&mut p, &Matrix::zeros(1, 2), &mut s, 0.1, 0.0, 1);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
