//! Graph convolution layers and inter-layer normalizers.
//!
//! Layers own their trainable [`Param`]s and record onto a caller-supplied
//! [`Tape`](crate::Tape). Normalizers with running statistics never mutate
//! during a forward pass: in training mode they hand back the batch
//! statistics and the caller folds them in with `update_running`.

mod dgn;
mod gat;
mod gcn;
mod norm;
mod sgc;

pub use dgn::Dgn;
pub use gat::GatLayer;
pub use gcn::GcnLayer;
pub use norm::{pair_norm, BatchNorm, Normalizer, NORM_EPS, RUNNING_MOMENTUM};
pub use sgc::{sgc_forward, Linear};

use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::GroupStats;

/// `running ← (1 − m)·running + m·batch` for mean and variance.
pub(crate) fn ema<T: Real>(mean: &mut Matrix<T>, var: &mut Matrix<T>, stats: &GroupStats<T>, m: T) {
    let keep = T::one() - m;
    for (r, &b) in mean.as_mut_slice().iter_mut().zip(stats.mean.as_slice()) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in var.as_mut_slice().iter_mut().zip(stats.var.as_slice()) {
        *r = keep * *r + m * b;
    }
}
