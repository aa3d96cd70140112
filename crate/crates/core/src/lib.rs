//! Deep graph neural networks with pluggable inter-layer normalization.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation:
//!
//! - [`matrix`] and [`tape`]: dense 2-D arrays and a define-by-run
//!   reverse-mode autodiff tape over them.
//! - [`graph`]: the graph data model, symmetric adjacency normalization,
//!   seeded splits and the missing-features transform.
//! - [`layers`]: GCN, GAT and SGC propagation plus the identity, batch,
//!   pair and differentiable group normalizers.
//! - [`metrics`]: group distance ratio, intra-group distance and the
//!   kernel-density estimate of instance information gain.
//! - [`train`]: model assembly, Glorot init, masked cross-entropy, Adam and
//!   the early-stopped full-batch training loop.
//!
//! File formats, the experiment runner and the command line live in the
//! companion `dgn` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod scalar;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Masks, NormalizedAdjacency, SparsePattern};
pub use matrix::Matrix;
pub use scalar::Real;
pub use tape::{Gradients, Param, Tape, Tensor};
