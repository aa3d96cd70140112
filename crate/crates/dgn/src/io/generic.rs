//! Directory format for graphs converted from other distributions:
//! `edges.csv`, `features.csv`, `labels.csv` and `splits.json`.
//!
//! CSV files may start with a header row; a first row that does not parse
//! as numbers is skipped.

use std::fs;
use std::path::Path;

use dgn_core::graph::{Graph, Masks};
use dgn_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};

pub const EDGES: &str = "edges.csv";
pub const FEATURES: &str = "features.csv";
pub const LABELS: &str = "labels.csv";
pub const SPLITS: &str = "splits.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn load_generic(dir: &Path) -> Result<Graph> {
    let features = read_numeric::<f32>(&dir.join(FEATURES))?;
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(Error::format(Location::file(&dir.join(FEATURES)), "no feature rows"));
    }
    if let Some((i, row)) = features.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(Error::format(
            Location::line(&dir.join(FEATURES), i + 1),
            format!("{} columns where the first row has {d}", row.len()),
        ));
    }

    let labels_path = dir.join(LABELS);
    let label_rows = read_numeric::<usize>(&labels_path)?;
    if label_rows.len() != n {
        return Err(Error::format(
            Location::file(&labels_path),
            format!("{} labels for {n} feature rows", label_rows.len()),
        ));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, row) in label_rows.iter().enumerate() {
        match row.as_slice() {
            [y] => labels.push(*y),
            _ => return Err(Error::format(Location::line(&labels_path, i + 1), "expected one label")),
        }
    }

    let edges_path = dir.join(EDGES);
    let mut edges = Vec::new();
    for (i, row) in read_numeric::<usize>(&edges_path)?.iter().enumerate() {
        let at = || Location::line(&edges_path, i + 1);
        match row.as_slice() {
            [u, v] if *u < n && *v < n => edges.push((*u, *v)),
            [u, v] => return Err(Error::format(at(), format!("edge ({u}, {v}) out of range for {n} nodes"))),
            _ => return Err(Error::format(at(), "expected two node indices")),
        }
    }

    let splits_path = dir.join(SPLITS);
    let text = fs::read_to_string(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
    let splits: Splits = serde_json::from_str(&text)
        .map_err(|e| Error::format(Location::line(&splits_path, e.line()), e.to_string()))?;
    let masks = Masks::from_indices(n, &splits.train, &splits.val, &splits.test)
        .map_err(|e| Error::format(Location::file(&splits_path), e.to_string()))?;

    let c = labels.iter().max().map_or(0, |&m| m + 1);
    let x = Matrix::from_vec(n, d, features.into_iter().flatten().collect())?;
    Ok(Graph::from_edges(n, &edges, x, labels, c, masks)?)
}

/// Writes `g` so that [`load_generic`] reproduces it.
pub fn save_generic(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(EDGES);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["source", "target"]).map_err(csv_err(&path))?;
    for (u, v) in g.undirected_edges() {
        w.write_record([u.to_string(), v.to_string()]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(FEATURES);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record((0..g.num_features()).map(|j| format!("f{j}"))).map_err(csv_err(&path))?;
    for v in 0..g.num_nodes() {
        w.write_record(g.features().row(v).iter().map(|x| x.to_string())).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(LABELS);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["label"]).map_err(csv_err(&path))?;
    for y in g.labels() {
        w.write_record([y.to_string()]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let masks = g.masks();
    let splits = Splits { train: masks.train_indices(), val: masks.val_indices(), test: masks.test_indices() };
    let path = dir.join(SPLITS);
    let text = serde_json::to_string(&splits).expect("index lists serialize");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(Location::file(path), e.to_string())
}

fn read_numeric<T: std::str::FromStr>(path: &Path) -> Result<Vec<Vec<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(Location::file(path), format!("{other:?}")),
        })?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::format(Location::line(path, line), e.to_string()))?;
        let parsed: std::result::Result<Vec<T>, _> = record.iter().map(str::parse).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::format(Location::line(path, line), "value is not a number")),
        }
    }
    Ok(rows)
}
