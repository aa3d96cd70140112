//! Experiment runner around `dgn-core`: dataset formats, single runs,
//! sweeps and embedding export.

pub mod error;
pub mod experiment;
pub mod export;
pub mod io;
pub mod sweep;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ResultRecord};
pub use sweep::{sweep, SweepSpec};
