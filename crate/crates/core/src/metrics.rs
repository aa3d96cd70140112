//! Over-smoothing diagnostics.
//!
//! - Group distance ratio: mean inter-class pairwise L2 distance over mean
//!   intra-class pairwise distance. Inter-class means are summed over
//!   ordered class pairs and divided by `(C − 1)²`; intra-class means
//!   include self-pairs and are divided by `C`, where `C` counts nonempty
//!   classes.
//! - Instance information gain: a Gaussian kernel density lower bound on the
//!   mutual information between input features and arg-max-binned
//!   predictions, `Ĥ(X) − Ĥ(X|Z)`, clamped at zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Threshold under which ratio terms count as zero.
pub const RATIO_EPS: f64 = 1e-12;
/// Default cap on the node pairs evaluated per class pair.
pub const DEFAULT_PAIR_CAP: usize = 1_000_000;
pub const DEFAULT_SIGMA2: f64 = 1.0;
/// Largest node count for which kernel values are cached.
const KERNEL_CACHE_NODES: usize = 6000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupDistances {
    /// `(1/(C−1)²) Σ_{i≠j} mean distance between classes i and j`; zero when
    /// only one class is present.
    pub inter: f64,
    /// `(1/C) Σ_i mean distance within class i`.
    pub intra: f64,
    /// Number of nonempty classes.
    pub groups: usize,
    /// Node pairs actually evaluated.
    pub pairs: usize,
}

impl GroupDistances {
    /// Ratio with the degenerate rule: both terms below [`RATIO_EPS`] give
    /// 1.0, a vanishing denominator alone gives `inter / RATIO_EPS`.
    pub fn ratio(&self) -> f64 {
        if self.intra < RATIO_EPS {
            if self.inter < RATIO_EPS {
                1.0
            } else {
                self.inter / RATIO_EPS
            }
        } else {
            self.inter / self.intra
        }
    }
}

/// Inter- and intra-class distance terms over the rows of `h`.
///
/// With `pair_cap`, any class pair whose `|L_i|·|L_j|` ordered node pairs
/// exceed the cap is estimated from `pair_cap` uniformly drawn pairs; the
/// draws for class pair `(i, j)` come from stream `i·C + j` of a ChaCha8
/// generator seeded with `seed`.
pub fn group_distances<T: Real>(h: &Matrix<T>, labels: &[usize], pair_cap: Option<usize>, seed: u64) -> Result<GroupDistances> {
    if labels.len() != h.rows() {
        return Err(Error::shape(
            "group_distances",
            format!("{} labels for {} rows", labels.len(), h.rows()),
        ));
    }
    if pair_cap == Some(0) {
        return Err(Error::param("pair cap must be positive"));
    }
    let groups = partition(labels);
    let c = groups.len();
    if c == 0 {
        return Err(Error::param("no nodes to measure"));
    }
    let rows: Vec<Vec<f64>> = (0..h.rows()).map(|r| h.row(r).iter().map(|x| x.as_f64()).collect()).collect();
    let mut pairs = 0usize;
    let mut intra = 0.0;
    for (i, gi) in groups.iter().enumerate() {
        let (mean, used) = mean_distance(&rows, gi, gi, true, pair_cap, seed, (i * c + i) as u64);
        intra += mean;
        pairs += used;
    }
    intra /= c as f64;
    let mut inter = 0.0;
    for i in 0..c {
        for j in i + 1..c {
            let (mean, used) = mean_distance(&rows, &groups[i], &groups[j], false, pair_cap, seed, (i * c + j) as u64);
            // (i, j) and (j, i) share the same mean.
            inter += 2.0 * mean;
            pairs += used;
        }
    }
    if c > 1 {
        inter /= ((c - 1) * (c - 1)) as f64;
    }
    Ok(GroupDistances { inter, intra, groups: c, pairs })
}

pub fn group_distance_ratio<T: Real>(h: &Matrix<T>, labels: &[usize], pair_cap: Option<usize>, seed: u64) -> Result<f64> {
    let d = group_distances(h, labels, pair_cap, seed)?;
    if d.groups < 2 {
        return Err(Error::param("group distance ratio needs at least two nonempty groups"));
    }
    Ok(d.ratio())
}

pub fn intra_group_distance<T: Real>(h: &Matrix<T>, labels: &[usize], pair_cap: Option<usize>, seed: u64) -> Result<f64> {
    Ok(group_distances(h, labels, pair_cap, seed)?.intra)
}

/// Node indices per label value, skipping empty labels.
fn partition(labels: &[usize]) -> Vec<Vec<usize>> {
    let c = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); c];
    for (v, &y) in labels.iter().enumerate() {
        groups[y].push(v);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance over the ordered pairs `a × b`, and the number of pairs
/// evaluated.
fn mean_distance(
    rows: &[Vec<f64>],
    a: &[usize],
    b: &[usize],
    same: bool,
    pair_cap: Option<usize>,
    seed: u64,
    stream: u64,
) -> (f64, usize) {
    let total = a.len() * b.len();
    match pair_cap {
        Some(cap) if total > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut sum = 0.0;
            for _ in 0..cap {
                let u = a[rng.gen_range(0..a.len())];
                let v = b[rng.gen_range(0..b.len())];
                sum += l2(&rows[u], &rows[v]);
            }
            (sum / cap as f64, cap)
        }
        _ => {
            let mut sum = 0.0;
            if same {
                // Self-pairs contribute zero; every other pair appears twice.
                for (k, &u) in a.iter().enumerate() {
                    for &v in &a[k + 1..] {
                        sum += 2.0 * l2(&rows[u], &rows[v]);
                    }
                }
            } else {
                for &u in a {
                    for &v in b {
                        sum += l2(&rows[u], &rows[v]);
                    }
                }
            }
            (sum / total as f64, total)
        }
    }
}

/// Gaussian kernel `exp(−‖x_i − x_j‖² / (8σ²))` over the rows of a feature
/// matrix. Values are cached for graphs up to a few thousand nodes and
/// recomputed on demand above that.
pub struct FeatureKernel {
    n: usize,
    features: Matrix<f64>,
    scale: f64,
    upper: Option<Vec<f64>>,
}

impl FeatureKernel {
    pub fn new<T: Real>(x: &Matrix<T>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::param(format!("sigma2 must be positive, got {sigma2}")));
        }
        let n = x.rows();
        if n == 0 {
            return Err(Error::param("instance information gain needs at least one node"));
        }
        let features: Matrix<f64> = x.cast();
        let scale = 1.0 / (8.0 * sigma2);
        let mut kernel = FeatureKernel { n, features, scale, upper: None };
        if n <= KERNEL_CACHE_NODES {
            let mut upper = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    upper.push(kernel.compute(i, j));
                }
            }
            kernel.upper = Some(upper);
        }
        Ok(kernel)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    fn compute(&self, i: usize, j: usize) -> f64 {
        let sq: f64 = self
            .features
            .row(i)
            .iter()
            .zip(self.features.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-sq * self.scale).exp()
    }

    /// Calls `f(i, j, k_ij)` once for every unordered pair `i < j`.
    fn for_each_pair(&self, mut f: impl FnMut(usize, usize, f64)) {
        match &self.upper {
            Some(upper) => {
                let mut idx = 0;
                for i in 0..self.n {
                    for j in i + 1..self.n {
                        f(i, j, upper[idx]);
                        idx += 1;
                    }
                }
            }
            None => {
                for i in 0..self.n {
                    for j in i + 1..self.n {
                        f(i, j, self.compute(i, j));
                    }
                }
            }
        }
    }

    /// `Ĥ(X) = −(1/n) Σ_i log((1/n) Σ_j k_ij)`, with `j = i` included.
    pub fn marginal_entropy(&self) -> f64 {
        let bins = vec![0usize; self.n];
        self.entropies(&bins, 1).0
    }

    /// Marginal and bin-conditional entropy estimates in one pass.
    fn entropies(&self, bins: &[usize], num_bins: usize) -> (f64, f64) {
        let n = self.n;
        // k_ii = 1 for every node.
        let mut all = vec![1.0f64; n];
        let mut same = vec![1.0f64; n];
        self.for_each_pair(|i, j, k| {
            all[i] += k;
            all[j] += k;
            if bins[i] == bins[j] {
                same[i] += k;
                same[j] += k;
            }
        });
        let nf = n as f64;
        let marginal = -all.iter().map(|s| (s / nf).ln()).sum::<f64>() / nf;
        let mut sizes = vec![0usize; num_bins];
        for &b in bins {
            sizes[b] += 1;
        }
        let mut per_bin = vec![0.0f64; num_bins];
        for (i, &b) in bins.iter().enumerate() {
            per_bin[b] += (same[i] / sizes[b] as f64).ln();
        }
        // Σ_c (P_c/n) · (−(1/P_c) Σ_{i∈c} log(...)) = −(1/n) Σ_c Σ_{i∈c} log(...)
        let conditional = -per_bin.iter().sum::<f64>() / nf;
        (marginal, conditional)
    }

    /// `max(0, Ĥ(X) − Ĥ(X|Z))` with `Z` the arg-max bin of each logit row.
    pub fn info_gain<T: Real>(&self, logits: &Matrix<T>) -> Result<f64> {
        if logits.rows() != self.n {
            return Err(Error::shape(
                "instance_info_gain",
                format!("{} logit rows for {} feature rows", logits.rows(), self.n),
            ));
        }
        if logits.cols() == 0 {
            return Err(Error::param("logits need at least one column"));
        }
        let bins = logits.argmax_rows();
        let (marginal, conditional) = self.entropies(&bins, logits.cols());
        Ok(Float::max(marginal - conditional, 0.0))
    }
}

/// Instance information gain of `logits` about the input features `x`.
pub fn instance_info_gain<T: Real, U: Real>(x: &Matrix<T>, logits: &Matrix<U>, sigma2: f64) -> Result<f64> {
    FeatureKernel::new(x, sigma2)?.info_gain(logits)
}

/// Per-model diagnostics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub depth: usize,
    pub test_accuracy: f64,
    pub r_group: f64,
    pub g_ins: f64,
    pub intra_group: f64,
    pub pair_sample_size: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Matrix<f64> {
        Matrix::from_fn(values.len(), 1, |r, _| values[r])
    }

    #[test]
    fn hand_evaluated_ratio() {
        let h = column(&[0.0, 2.0, 10.0, 12.0]);
        let labels = [0, 0, 1, 1];
        let d = group_distances(&h, &labels, None, 0).unwrap();
        assert_eq!(d.intra, 1.0);
        assert_eq!(d.inter, 20.0);
        assert_eq!(d.ratio(), 20.0);
    }

    #[test]
    fn collapsed_representations_give_one() {
        let h = Matrix::filled(6, 3, 0.25);
        assert_eq!(group_distance_ratio(&h, &[0, 1, 2, 0, 1, 2], None, 0).unwrap(), 1.0);
        assert_eq!(intra_group_distance(&h, &[0, 1, 2, 0, 1, 2], None, 0).unwrap(), 0.0);
    }

    #[test]
    fn zero_denominator_divides_by_threshold() {
        let h = column(&[1.0, 1.0, 3.0]);
        let r = group_distance_ratio(&h, &[0, 0, 1], None, 0).unwrap();
        // inter = (2 + 2) / 1, intra = 0
        assert_eq!(r, 4.0 / RATIO_EPS);
    }

    #[test]
    fn single_group() {
        let h = column(&[0.0, 2.0]);
        assert_eq!(intra_group_distance(&h, &[0, 0], None, 0).unwrap(), 1.0);
        assert!(matches!(group_distance_ratio(&h, &[0, 0], None, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn empty_label_values_are_not_groups() {
        let h = column(&[0.0, 2.0, 10.0, 12.0]);
        let d = group_distances(&h, &[0, 0, 5, 5], None, 0).unwrap();
        assert_eq!(d.groups, 2);
        assert_eq!(d.ratio(), 20.0);
    }

    #[test]
    fn single_bin_has_no_gain() {
        let x = Matrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64 * 0.3);
        let logits = Matrix::<f64>::zeros(5, 3);
        assert_eq!(instance_info_gain(&x, &logits, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn distinct_bins_recover_marginal_entropy() {
        let x = Matrix::from_fn(4, 2, |r, c| (r * r + c) as f64 * 0.4);
        let logits = Matrix::<f64>::identity(4);
        let k = FeatureKernel::new(&x, 0.5).unwrap();
        let g = k.info_gain(&logits).unwrap();
        assert!((g - k.marginal_entropy()).abs() < 1e-15);
    }

    #[test]
    fn sigma_must_be_positive() {
        let x = Matrix::<f64>::zeros(2, 2);
        assert!(matches!(instance_info_gain(&x, &x, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(FeatureKernel::new(&Matrix::<f64>::zeros(0, 2), 1.0), Err(Error::Parameter(_))));
    }
}
