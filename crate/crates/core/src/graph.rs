//! Graph data model, normalized adjacency, seeded splits and the
//! missing-features transform.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Compressed sparse row structure (no values).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsePattern {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl SparsePattern {
    /// Builds a square pattern from per-row sorted, deduplicated column lists.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for (r, cols) in rows.into_iter().enumerate() {
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidGraph(format!(
                        "row {r}: column indices not strictly increasing"
                    )));
                }
            }
            if let Some(&c) = cols.last() {
                if c >= n {
                    return Err(Error::InvalidGraph(format!(
                        "row {r}: column {c} out of range for {n} nodes"
                    )));
                }
            }
            indices.extend(cols);
            indptr.push(indices.len());
        }
        Ok(SparsePattern { n, indptr, indices })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    /// Position range of row `r` inside the flat entry arrays.
    #[inline]
    pub fn row_range(&self, r: usize) -> core::ops::Range<usize> {
        self.indptr[r]..self.indptr[r + 1]
    }

    #[inline]
    pub fn degree(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).iter().all(|&c| self.contains(c, r)))
    }
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` in CSR form. The pattern is the closed
/// neighborhood of every node and is shared with attention layers.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency<T> {
    pattern: Rc<SparsePattern>,
    values: Rc<Vec<T>>,
}

impl<T: Real> NormalizedAdjacency<T> {
    pub fn new(pattern: Rc<SparsePattern>, values: Vec<T>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::shape(
                "NormalizedAdjacency::new",
                format!("{} values for {} entries", values.len(), pattern.nnz()),
            ));
        }
        Ok(NormalizedAdjacency { pattern, values: Rc::new(values) })
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn pattern(&self) -> &Rc<SparsePattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let range = self.pattern.row_range(r);
        match self.pattern.row(r).binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for r in 0..n {
            for (k, &c) in self.pattern.row_range(r).zip(self.pattern.row(r)) {
                m.set(r, c, self.values[k]);
            }
        }
        m
    }

    pub fn cast<U: Real>(&self) -> NormalizedAdjacency<U> {
        NormalizedAdjacency {
            pattern: Rc::clone(&self.pattern),
            values: Rc::new(self.values.iter().map(|&v| U::of(v.as_f64())).collect()),
        }
    }
}

/// Train/validation/test membership, one flag per node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Masks { train: vec![false; n], val: vec![false; n], test: vec![false; n] }
    }

    pub fn from_indices(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut masks = Masks::empty(n);
        for (name, idx, flags) in [
            ("train", train, &mut masks.train),
            ("val", val, &mut masks.val),
            ("test", test, &mut masks.test),
        ] {
            for &i in idx {
                if i >= n {
                    return Err(Error::InvalidGraph(format!(
                        "{name} index {i} out of range for {n} nodes"
                    )));
                }
                flags[i] = true;
            }
        }
        masks.validate(n)?;
        Ok(masks)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(Error::InvalidGraph(format!("mask lengths differ from node count {n}")));
        }
        for v in 0..n {
            let hits = self.train[v] as u8 + self.val[v] as u8 + self.test[v] as u8;
            if hits > 1 {
                return Err(Error::InvalidGraph(format!("node {v} belongs to more than one split")));
            }
        }
        Ok(())
    }

    pub fn train_indices(&self) -> Vec<usize> {
        indices_of(&self.train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        indices_of(&self.val)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices_of(&self.test)
    }
}

fn indices_of(flags: &[bool]) -> Vec<usize> {
    flags.iter().enumerate().filter_map(|(i, &f)| f.then_some(i)).collect()
}

/// An undirected attributed graph with labels and split masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: SparsePattern,
    features: Matrix<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    masks: Masks,
}

impl Graph {
    /// Validates and assembles a graph from a symmetric CSR pattern without
    /// self-loops.
    pub fn new(
        adjacency: SparsePattern,
        features: Matrix<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        masks: Masks,
    ) -> Result<Self> {
        let n = adjacency.n();
        if features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {n} nodes",
                features.rows()
            )));
        }
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some((v, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "node {v} has label {y} outside [0, {num_classes})"
            )));
        }
        if !adjacency.is_symmetric() {
            return Err(Error::InvalidGraph("adjacency is not symmetric".into()));
        }
        if (0..n).any(|v| adjacency.contains(v, v)) {
            return Err(Error::InvalidGraph("adjacency contains self-loops".into()));
        }
        masks.validate(n)?;
        Ok(Graph { adjacency, features, labels, num_classes, masks })
    }

    /// Builds a graph from a possibly directed edge list: self-edges are
    /// dropped, duplicates merged and every edge stored in both directions.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Matrix<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        masks: Masks,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u != v {
                rows[u].push(v);
                rows[v].push(u);
            }
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        Graph::new(SparsePattern::from_rows(rows)?, features, labels, num_classes, masks)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.adjacency.n()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn adjacency(&self) -> &SparsePattern {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn with_masks(mut self, masks: Masks) -> Result<Self> {
        masks.validate(self.num_nodes())?;
        self.masks = masks;
        Ok(self)
    }

    /// Edge list with `u < v`, one entry per undirected edge.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes() {
            out.extend(self.adjacency.row(u).iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }
}

/// Symmetric normalization with self-loops: entry `(v, v')` equals
/// `1/√((|N(v)|+1)(|N(v')|+1))`.
pub fn normalize_adjacency<T: Real>(g: &Graph) -> NormalizedAdjacency<T> {
    let adj = g.adjacency();
    let n = adj.n();
    let closed: Vec<f64> = (0..n).map(|v| (adj.degree(v) + 1) as f64).collect();
    let mut rows = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(adj.nnz() + n);
    for v in 0..n {
        let mut cols: Vec<usize> = adj.row(v).to_vec();
        let pos = cols.partition_point(|&c| c < v);
        cols.insert(pos, v);
        values.extend(cols.iter().map(|&c| T::of(1.0 / num_traits::Float::sqrt(closed[v] * closed[c]))));
        rows.push(cols);
    }
    let pattern = SparsePattern::from_rows(rows).expect("closed neighborhoods of a valid graph");
    NormalizedAdjacency::new(Rc::new(pattern), values).expect("one value per entry")
}

/// Seeded per-class split: after shuffling all nodes, the first `per_class`
/// nodes of every class form the training set, and the remaining nodes in
/// shuffled order fill validation then test.
pub fn generate_split(
    g: &Graph,
    per_class: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Masks> {
    let n = g.num_nodes();
    let c = g.num_classes();
    let mut class_sizes = vec![0usize; c];
    for &y in g.labels() {
        class_sizes[y] += 1;
    }
    if let Some((k, &size)) = class_sizes.iter().enumerate().find(|(_, &s)| s < per_class) {
        return Err(Error::param(format!(
            "class {k} has {size} nodes, fewer than {per_class} requested per class"
        )));
    }
    if per_class * c + n_val + n_test > n {
        return Err(Error::param(format!(
            "split needs {} nodes but the graph has {n}",
            per_class * c + n_val + n_test
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut masks = Masks::empty(n);
    let mut taken = vec![0usize; c];
    let mut rest = Vec::with_capacity(n);
    for v in order {
        let y = g.labels()[v];
        if taken[y] < per_class {
            taken[y] += 1;
            masks.train[v] = true;
        } else {
            rest.push(v);
        }
    }
    for &v in &rest[..n_val] {
        masks.val[v] = true;
    }
    for &v in &rest[n_val..n_val + n_test] {
        masks.test[v] = true;
    }
    Ok(masks)
}

/// Copy of `g` whose validation and test feature rows are zero.
pub fn mask_features(g: &Graph) -> Graph {
    let mut out = g.clone();
    let masks = g.masks();
    for v in 0..g.num_nodes() {
        if masks.val[v] || masks.test[v] {
            out.features.row_mut(v).fill(0.0);
        }
    }
    out
}
