use alloc::format;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum ModelKind {
    Gcn,
    Gat,
    Sgc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum NormKind {
    #[default]
    None,
    Batch,
    Pair,
    Dgn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::Sgc => "sgc",
        }
    }
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Batch => "batch",
            NormKind::Pair => "pair",
            NormKind::Dgn => "dgn",
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_GROUPS: usize = 10;
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of propagation layers `K`.
    pub depth: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_hidden"))]
    pub hidden: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub norm: NormKind,
    #[cfg_attr(feature = "serde", serde(default = "default_groups"))]
    pub groups: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_lambda"))]
    pub lambda: f64,
}

#[cfg(feature = "serde")]
fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

#[cfg(feature = "serde")]
fn default_groups() -> usize {
    DEFAULT_GROUPS
}

#[cfg(feature = "serde")]
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl ModelConfig {
    pub fn new(kind: ModelKind, depth: usize, norm: NormKind) -> Self {
        ModelConfig { kind, depth, hidden: DEFAULT_HIDDEN, norm, groups: DEFAULT_GROUPS, lambda: DEFAULT_LAMBDA }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::param("depth must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::param("hidden width must be at least 1"));
        }
        if self.norm == NormKind::Dgn {
            if self.groups == 0 {
                return Err(Error::param("group normalization needs at least one group"));
            }
            if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                return Err(Error::param(format!("lambda must be finite and non-negative, got {}", self.lambda)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 5e-3, weight_decay: 5e-4, dropout: 0.6, max_epochs: 1000, patience: 100, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param(format!("dropout probability {} outside [0, 1)", self.dropout)));
        }
        if self.patience > self.max_epochs {
            return Err(Error::param(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::new(ModelKind::Gcn, 0, NormKind::None).validate().is_err());
        let mut m = ModelConfig::new(ModelKind::Sgc, 3, NormKind::Dgn);
        m.groups = 0;
        assert!(m.validate().is_err());
        m.groups = 1;
        assert!(m.validate().is_ok());
        let t = TrainConfig { dropout: 1.0, ..TrainConfig::default() };
        assert!(t.validate().is_err());
        let t = TrainConfig { max_epochs: 10, patience: 11, ..TrainConfig::default() };
        assert!(t.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
