//! Cartesian sweeps over depth, normalizer, group count and λ.
//!
//! Every finished cell is appended to `results.jsonl` / `results.csv` by a
//! single writer as it completes. At the end `curves.csv` holds one row per
//! successful cell in grid order, and `best_k.csv` the best depth per
//! normalizer with its gain over the unnormalized model, in percentage
//! points (`improvement_abs`) and percent (`improvement_rel`).

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use dgn_core::train::{ModelKind, NormKind};
use dgn_core::Graph;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{append_results, prepare_graph, run_on_graph, ExperimentConfig, ResultRecord};

pub const CURVES_CSV: &str = "curves.csv";
pub const BEST_K_CSV: &str = "best_k.csv";

/// Candidate λ values tried by `--tune-lambda`.
pub const LAMBDA_CANDIDATES: [f64; 9] = [5e-4, 1e-3, 2e-3, 3e-3, 5e-3, 1e-2, 2e-2, 3e-2, 5e-2];

/// Default depths: GCN/GAT 1–10, 15, 20, 25, 30; SGC 1, 5, 10, 20, 30, or
/// up to 120 in steps of ten with `deep`.
pub fn default_depths(kind: ModelKind, deep: bool) -> Vec<usize> {
    match kind {
        ModelKind::Gcn | ModelKind::Gat => (1..=10).chain([15, 20, 25, 30]).collect(),
        ModelKind::Sgc if deep => [1, 5].into_iter().chain((10..=120).step_by(10)).collect(),
        ModelKind::Sgc => vec![1, 5, 10, 20, 30],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub depths: Vec<usize>,
    pub norms: Vec<NormKind>,
    pub groups: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Replace `lambdas` by [`LAMBDA_CANDIDATES`] for DGN cells and keep the
    /// value with the best mean validation accuracy.
    pub tune_lambda: bool,
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub depth: usize,
    pub norm: NormKind,
    pub groups: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: std::result::Result<ResultRecord, String>,
    /// `(λ, mean validation accuracy)` of every tuning candidate.
    pub tuning: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestDepth {
    pub norm: NormKind,
    pub depth: usize,
    pub groups: usize,
    pub lambda: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub improvement_abs: Option<f64>,
    pub improvement_rel: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.norms.is_empty() || self.groups.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Grid in row-major order: depth, then norm, then G, then λ. With
    /// tuning the λ axis collapses to the tuned value.
    pub fn cells(&self) -> Vec<Cell> {
        let lambdas: &[f64] = if self.tune_lambda { &[f64::NAN] } else { &self.lambdas };
        let mut out = Vec::new();
        for &depth in &self.depths {
            for &norm in &self.norms {
                for &groups in &self.groups {
                    for &lambda in lambdas {
                        out.push(Cell { depth, norm, groups, lambda });
                    }
                }
            }
        }
        out
    }
}

pub struct SweepOutcome {
    pub cells: Vec<CellOutcome>,
    pub best: Vec<BestDepth>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }
}

pub fn sweep(base: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepOutcome> {
    base.validate()?;
    spec.validate()?;
    let g = prepare_graph(base)?;
    sweep_on_graph(base, spec, &g)
}

pub fn sweep_on_graph(base: &ExperimentConfig, spec: &SweepSpec, g: &Graph) -> Result<SweepOutcome> {
    let cells = spec.cells();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, CellOutcome)>();
    let mut slots: Vec<Option<CellOutcome>> = vec![None; cells.len()];
    let mut write_error = None;

    std::thread::scope(|scope| {
        for _ in 0..spec.jobs.min(cells.len()) {
            let tx = tx.clone();
            let (cells, next) = (&cells, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let outcome = run_cell(base, spec, g, cell);
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, outcome) in rx {
            match &outcome.result {
                Ok(record) => {
                    if let Err(e) = append_results(&base.output_dir, std::slice::from_ref(record)) {
                        write_error.get_or_insert(e);
                    }
                }
                Err(e) => log::warn!("cell {:?} failed: {e}", outcome.cell),
            }
            slots[i] = Some(outcome);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let cells: Vec<CellOutcome> = slots.into_iter().map(|s| s.expect("every cell reports")).collect();
    let best = best_depths(&cells, &spec.norms);
    write_curves(&base.output_dir, &cells)?;
    write_best(&base.output_dir, &best)?;
    Ok(SweepOutcome { cells, best })
}

fn cell_config(base: &ExperimentConfig, cell: Cell) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.model.depth = cell.depth;
    cfg.model.norm = cell.norm;
    cfg.model.groups = Some(cell.groups);
    cfg.model.lambda = Some(cell.lambda);
    cfg.export = false;
    cfg
}

fn run_cell(base: &ExperimentConfig, spec: &SweepSpec, g: &Graph, cell: Cell) -> CellOutcome {
    let run = |lambda: f64| {
        let cfg = cell_config(base, Cell { lambda, ..cell });
        cfg.validate().and_then(|_| run_on_graph(&cfg, g, None)).map_err(|e| e.to_string())
    };
    if !spec.tune_lambda {
        return CellOutcome { cell, result: run(cell.lambda), tuning: Vec::new() };
    }
    // Non-DGN cells ignore λ; run them once with the first listed value.
    let candidates: &[f64] = if cell.norm == NormKind::Dgn { &LAMBDA_CANDIDATES } else { &spec.lambdas[..1] };
    let mut best: Option<ResultRecord> = None;
    let mut tuning = Vec::new();
    let mut last_error = None;
    for &lambda in candidates {
        match run(lambda) {
            Ok(r) => {
                tuning.push((lambda, r.val_mean));
                if best.as_ref().is_none_or(|b| r.val_mean > b.val_mean) {
                    best = Some(r);
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    let result = best.ok_or_else(|| last_error.unwrap_or_default());
    let lambda = result.as_ref().map_or(f64::NAN, |r| r.model.lambda);
    CellOutcome { cell: Cell { lambda, ..cell }, result, tuning }
}

/// Best successful cell per normalizer, with gains over `none` when it was
/// swept.
pub fn best_depths(cells: &[CellOutcome], norms: &[NormKind]) -> Vec<BestDepth> {
    let best_of = |norm: NormKind| {
        cells
            .iter()
            .filter(|c| c.cell.norm == norm)
            .filter_map(|c| c.result.as_ref().ok().map(|r| (c.cell, r)))
            .fold(None::<(Cell, &ResultRecord)>, |acc, x| match acc {
                Some(a) if a.1.acc_mean >= x.1.acc_mean => Some(a),
                _ => Some(x),
            })
    };
    let baseline = best_of(NormKind::None).map(|(_, r)| r.acc_mean);
    let mut out = Vec::new();
    for &norm in norms {
        if let Some((cell, r)) = best_of(norm) {
            out.push(BestDepth {
                norm,
                depth: cell.depth,
                groups: cell.groups,
                lambda: r.model.lambda,
                acc_mean: r.acc_mean,
                acc_std: r.acc_std,
                improvement_abs: baseline.map(|b| 100.0 * (r.acc_mean - b)),
                improvement_rel: baseline.filter(|&b| b > 0.0).map(|b| 100.0 * (r.acc_mean - b) / b),
            });
        }
    }
    out
}

pub const CURVE_COLUMNS: [&str; 10] =
    ["K", "norm", "G", "lambda", "acc_mean", "acc_std", "g_ins", "r_group", "intra_group", "seconds"];

fn write_curves(dir: &Path, cells: &[CellOutcome]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CURVES_CSV);
    let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(CURVE_COLUMNS).map_err(err)?;
    for c in cells {
        let Ok(r) = &c.result else { continue };
        w.write_record([
            c.cell.depth.to_string(),
            c.cell.norm.name().to_string(),
            c.cell.groups.to_string(),
            r.model.lambda.to_string(),
            r.acc_mean.to_string(),
            r.acc_std.to_string(),
            r.metrics.g_ins.to_string(),
            r.metrics.r_group.to_string(),
            r.metrics.intra_group.to_string(),
            r.seconds.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn write_best(dir: &Path, best: &[BestDepth]) -> Result<()> {
    let path = dir.join(BEST_K_CSV);
    let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(["norm", "K", "G", "lambda", "acc_mean", "acc_std", "improvement_abs", "improvement_rel"])
        .map_err(err)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for b in best {
        w.write_record([
            b.norm.name().to_string(),
            b.depth.to_string(),
            b.groups.to_string(),
            b.lambda.to_string(),
            b.acc_mean.to_string(),
            b.acc_std.to_string(),
            opt(b.improvement_abs),
            opt(b.improvement_rel),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        assert_eq!(default_depths(ModelKind::Gcn, false).len(), 14);
        assert_eq!(default_depths(ModelKind::Sgc, false), [1, 5, 10, 20, 30]);
        let deep = default_depths(ModelKind::Sgc, true);
        assert_eq!((deep[0], deep[2], *deep.last().unwrap(), deep.len()), (1, 10, 120, 14));
    }

    #[test]
    fn grid_size_is_product() {
        let spec = SweepSpec {
            depths: vec![1, 2, 3],
            norms: vec![NormKind::None, NormKind::Dgn],
            groups: vec![5, 10],
            lambdas: vec![0.01, 0.1],
            tune_lambda: false,
            jobs: 1,
        };
        assert_eq!(spec.cells().len(), 24);
        assert_eq!(SweepSpec { tune_lambda: true, ..spec.clone() }.cells().len(), 12);
        assert!(SweepSpec { jobs: 0, ..spec.clone() }.validate().is_err());
        assert!(SweepSpec { norms: vec![], ..spec }.validate().is_err());
    }
}
