use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::layers::{sgc_forward, BatchNorm, Dgn, GatLayer, GcnLayer, Linear, Normalizer};
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::{GroupStats, Param, Tape, Tensor};

use super::config::{ModelConfig, ModelKind, NormKind};

/// Graph-derived inputs shared by every forward pass of a run.
pub struct ModelInput<T> {
    pub adjacency: NormalizedAdjacency<T>,
    pub features: Rc<Matrix<T>>,
    sgc_cache: RefCell<Option<(usize, NormKind, Rc<Matrix<T>>)>>,
}

impl<T: Real> ModelInput<T> {
    pub fn new(g: &Graph) -> Self {
        ModelInput {
            adjacency: normalize_adjacency(g),
            features: Rc::new(g.features().cast()),
            sgc_cache: RefCell::new(None),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone)]
pub enum Conv<T> {
    Gcn(GcnLayer<T>),
    Gat(GatLayer<T>),
}

impl<T: Real> Conv<T> {
    fn forward(&self, tape: &mut Tape<T>, input: &ModelInput<T>, h: Tensor, last: bool) -> Result<Tensor> {
        match self {
            Conv::Gcn(l) => l.forward(tape, &input.adjacency, h, last),
            Conv::Gat(l) => l.forward(tape, input.adjacency.pattern(), h, last),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        match self {
            Conv::Gcn(l) => l.params(),
            Conv::Gat(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Conv::Gcn(l) => l.params_mut(),
            Conv::Gat(l) => l.params_mut(),
        }
    }
}

/// Tensors produced by one forward pass.
pub struct Forward<T> {
    pub logits: Tensor,
    /// Input of the output layer (the last hidden representation).
    pub hidden: Tensor,
    /// Input of each normalizer, in layer order.
    pub norm_inputs: Vec<Tensor>,
    /// Batch statistics from stateful normalizers (training mode only),
    /// tagged with the normalizer index.
    pub stats: Vec<(usize, GroupStats<T>)>,
}

/// A GCN, GAT or SGC stack with a normalizer after every non-final
/// propagation.
///
/// GCN/GAT with depth `K` map `d → hidden → … → hidden → C` (just `d → C`
/// when `K = 1`) with dropout on the input of every layer. SGC runs `K`
/// propagations on the raw features, each followed by the normalizer, then
/// dropout and a linear classifier.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    convs: Vec<Conv<T>>,
    norms: Vec<Normalizer<T>>,
    classifier: Option<Linear<T>>,
    dropout: f64,
}

impl<T: Real> Model<T> {
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        d_in: usize,
        num_classes: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::param(alloc::format!("dropout probability {dropout} outside [0, 1)")));
        }
        if d_in == 0 || num_classes == 0 {
            return Err(Error::param("model needs at least one input feature and one class"));
        }
        let k = config.depth;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut classifier = None;
        match config.kind {
            ModelKind::Gcn | ModelKind::Gat => {
                for layer in 0..k {
                    let d0 = if layer == 0 { d_in } else { config.hidden };
                    let d1 = if layer + 1 == k { num_classes } else { config.hidden };
                    convs.push(match config.kind {
                        ModelKind::Gcn => Conv::Gcn(GcnLayer::new(d0, d1, rng)),
                        _ => Conv::Gat(GatLayer::new(d0, d1, rng)),
                    });
                    if layer + 1 < k {
                        norms.push(make_norm(config, d1, rng)?);
                    }
                }
            }
            ModelKind::Sgc => {
                for _ in 0..k {
                    norms.push(make_norm(config, d_in, rng)?);
                }
                classifier = Some(Linear::new(d_in, num_classes, rng));
            }
        }
        Ok(Model { config: config.clone(), convs, norms, classifier, dropout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn norms(&self) -> &[Normalizer<T>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [Normalizer<T>] {
        &mut self.norms
    }

    pub fn convs(&self) -> &[Conv<T>] {
        &self.convs
    }

    pub fn classifier(&self) -> Option<&Linear<T>> {
        self.classifier.as_ref()
    }

    /// Index of the last DGN normalizer, if any.
    pub fn last_dgn(&self) -> Option<(usize, &Dgn<T>)> {
        self.norms.iter().enumerate().rev().find_map(|(i, n)| match n {
            Normalizer::Dgn(d) => Some((i, d)),
            _ => None,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        input: &ModelInput<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Forward<T>> {
        let mut norm_inputs = Vec::with_capacity(self.norms.len());
        let mut stats = Vec::new();
        match self.config.kind {
            ModelKind::Gcn | ModelKind::Gat => {
                let mut h = tape.constant_shared(Rc::clone(&input.features))?;
                let last = self.convs.len() - 1;
                for (i, conv) in self.convs.iter().enumerate() {
                    let x = tape.dropout(h, self.dropout, training, rng)?;
                    if i == last {
                        let logits = conv.forward(tape, input, x, true)?;
                        return Ok(Forward { logits, hidden: h, norm_inputs, stats });
                    }
                    let z = conv.forward(tape, input, x, false)?;
                    norm_inputs.push(z);
                    let (y, s) = self.norms[i].forward(tape, z, training)?;
                    if let Some(s) = s {
                        stats.push((i, s));
                    }
                    h = y;
                }
                unreachable!("a model has at least one layer")
            }
            ModelKind::Sgc => {
                let h = if self.norms.iter().all(Normalizer::is_stateless) {
                    let cached = self.cached_propagation(tape, input)?;
                    tape.constant_shared(cached)?
                } else {
                    let mut h = tape.constant_shared(Rc::clone(&input.features))?;
                    for (i, norm) in self.norms.iter().enumerate() {
                        let z = sgc_forward(tape, &input.adjacency, h)?;
                        norm_inputs.push(z);
                        let (y, s) = norm.forward(tape, z, training)?;
                        if let Some(s) = s {
                            stats.push((i, s));
                        }
                        h = y;
                    }
                    h
                };
                let x = tape.dropout(h, self.dropout, training, rng)?;
                let classifier = self.classifier.as_ref().expect("SGC models own a classifier");
                let logits = classifier.forward(tape, x)?;
                Ok(Forward { logits, hidden: h, norm_inputs, stats })
            }
        }
    }

    /// Propagation through parameter-free normalizers depends only on the
    /// graph, so it is computed once per input and reused.
    fn cached_propagation(&self, tape: &Tape<T>, input: &ModelInput<T>) -> Result<Rc<Matrix<T>>> {
        let key = (self.config.depth, self.config.norm);
        if let Some((k, n, m)) = input.sgc_cache.borrow().as_ref() {
            if (*k, *n) == key {
                return Ok(Rc::clone(m));
            }
        }
        let mut scratch = Tape::new().with_checks(tape.checked());
        let mut h = scratch.constant_shared(Rc::clone(&input.features))?;
        for norm in &self.norms {
            let z = sgc_forward(&mut scratch, &input.adjacency, h)?;
            h = norm.forward(&mut scratch, z, false)?.0;
        }
        let m = Rc::new(scratch.value(h).clone());
        *input.sgc_cache.borrow_mut() = Some((key.0, key.1, Rc::clone(&m)));
        Ok(m)
    }

    /// Folds batch statistics from a training pass into the running state.
    pub fn update_running(&mut self, stats: &[(usize, GroupStats<T>)]) {
        for (i, s) in stats {
            self.norms[*i].update_running(s);
        }
    }

    /// All trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend(c.params());
        }
        for n in &self.norms {
            out.extend(n.params());
        }
        if let Some(c) = &self.classifier {
            out.extend(c.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.extend(c.params_mut());
        }
        for n in &mut self.norms {
            out.extend(n.params_mut());
        }
        if let Some(c) = &mut self.classifier {
            out.extend(c.params_mut());
        }
        out
    }
}

fn make_norm<T: Real, R: Rng + ?Sized>(config: &ModelConfig, d: usize, rng: &mut R) -> Result<Normalizer<T>> {
    Ok(match config.norm {
        NormKind::None => Normalizer::Identity,
        NormKind::Batch => Normalizer::Batch(BatchNorm::new(d)),
        NormKind::Pair => Normalizer::Pair,
        NormKind::Dgn => Normalizer::Dgn(Dgn::new(d, config.groups, config.lambda, rng)?),
    })
}
