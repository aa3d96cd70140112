//! Central finite-difference checks for the tape's backward rules.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Param, Tape, Tensor};

/// Largest relative error between the tape gradient of scalar `f` at `x` and
/// central differences with step `eps`. Relative error is
/// `|analytic − cd| / max(|analytic|, |cd|, GRAD_FLOOR)`.
pub fn grad_check<F>(f: F, x: &Matrix<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Tensor) -> Result<Tensor>,
{
    check_eps(eps)?;
    let eval = |m: &Matrix<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let t = tape.leaf(m.clone(), true)?;
        let y = f(&mut tape, t)?;
        scalar_of(&tape, y)
    };
    let mut tape = Tape::new();
    let t = tape.leaf(x.clone(), true)?;
    let y = f(&mut tape, t)?;
    scalar_of(&tape, y)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get(t).cloned().unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = x.as_slice()[k];
        probe.as_mut_slice()[k] = orig + eps;
        let up = eval(&probe)?;
        probe.as_mut_slice()[k] = orig - eps;
        let down = eval(&probe)?;
        probe.as_mut_slice()[k] = orig;
        worst = worst.max(relative_error(analytic.as_slice()[k], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Same check over every entry of a set of parameters owned by `model`.
///
/// `params` must return the parameters in a stable order; `f` must be
/// deterministic (no dropout in training mode).
pub fn grad_check_params<M, P, F>(model: &mut M, params: P, f: F, eps: f64) -> Result<f64>
where
    P: Fn(&mut M) -> Vec<&mut Param<f64>>,
    F: Fn(&M, &mut Tape<f64>) -> Result<Tensor>,
{
    check_eps(eps)?;
    let eval = |m: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let y = f(m, &mut tape)?;
        scalar_of(&tape, y)
    };
    let analytic: Vec<Matrix<f64>> = {
        let mut tape = Tape::new();
        let y = f(model, &mut tape)?;
        scalar_of(&tape, y)?;
        let grads = tape.backward(y)?;
        params(model)
            .into_iter()
            .map(|p| {
                grads
                    .param(p)
                    .unwrap_or_else(|| Matrix::zeros(p.value().rows(), p.value().cols()))
            })
            .collect()
    };
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        for k in 0..a.len() {
            let orig = params(model)[i].value().as_slice()[k];
            params(model)[i].make_mut().as_mut_slice()[k] = orig + eps;
            let up = eval(model)?;
            params(model)[i].make_mut().as_mut_slice()[k] = orig - eps;
            let down = eval(model)?;
            params(model)[i].make_mut().as_mut_slice()[k] = orig;
            worst = worst.max(relative_error(a.as_slice()[k], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Gradients smaller than this are compared in absolute terms. Central
/// differences cannot resolve them: rounding alone contributes about
/// `f64::EPSILON · |f| / eps`.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::param(alloc::format!("finite-difference step must be positive, got {eps}")))
    }
}

fn scalar_of(tape: &Tape<f64>, y: Tensor) -> Result<f64> {
    if y.shape() != (1, 1) {
        return Err(Error::shape(
            "grad_check",
            alloc::format!("function must return a 1x1 value, got {}x{}", y.rows(), y.cols()),
        ));
    }
    Ok(tape.scalar(y))
}
