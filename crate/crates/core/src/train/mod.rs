//! Model assembly and the full-batch training loop.

mod adam;
mod config;
mod init;
mod model;
mod trainer;

pub use adam::{adam_step, Adam, AdamState, ADAM_EPS, BETA1, BETA2};
pub use config::{ModelConfig, ModelKind, NormKind, TrainConfig, DEFAULT_GROUPS, DEFAULT_HIDDEN, DEFAULT_LAMBDA};
pub use init::glorot_init;
pub use model::{Conv, Forward, Model, ModelInput};
pub use trainer::{evaluate, evaluate_rows, masked_cross_entropy, train, train_with_input, Evaluation, History, TrainOutcome};
