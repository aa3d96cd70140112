//! Whitespace-separated `.content` / `.cites` pairs as distributed for the
//! Cora and Citeseer citation graphs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use dgn_core::graph::{Graph, Masks};
use dgn_core::Matrix;

use crate::error::{Error, Location, Result};

#[derive(Debug, Clone)]
pub struct ContentCites {
    pub graph: Graph,
    /// Document ids from the content file, in node order.
    pub node_ids: Vec<String>,
    /// Label strings in first-appearance order; index = class id.
    pub class_names: Vec<String>,
    /// Citation lines naming an id absent from the content file.
    pub skipped_edges: usize,
}

/// Finds the single `*.content` and `*.cites` file in `dir`.
pub fn find_files(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut content = None;
    let mut cites = None;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("content") => content = Some(path),
            Some("cites") => cites = Some(path),
            _ => {}
        }
    }
    match (content, cites) {
        (Some(c), Some(e)) => Ok((c, e)),
        _ => Err(Error::format(Location::file(dir), "expected one .content and one .cites file")),
    }
}

pub fn load_dir(dir: &Path) -> Result<ContentCites> {
    let (content, cites) = find_files(dir)?;
    load_content_cites(&content, &cites)
}

/// Node order follows the content file; masks are left empty.
pub fn load_content_cites(content_path: &Path, cites_path: &Path) -> Result<ContentCites> {
    let mut node_ids = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut features: Vec<f32> = Vec::new();
    let mut width = None;

    for (i, line) in lines(content_path)?.enumerate() {
        let line_no = i + 1;
        let line = line?;
        let at = || Location::line(content_path, line_no);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::format(at(), "expected an id, at least one feature and a label"));
        }
        let d = fields.len() - 2;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::format(at(), format!("{d} features where earlier rows have {w}")));
            }
            _ => {}
        }
        let id = fields[0];
        if index.insert(id.to_string(), node_ids.len()).is_some() {
            return Err(Error::format(at(), format!("duplicate node id {id}")));
        }
        node_ids.push(id.to_string());
        for f in &fields[1..=d] {
            let x: f32 = f.parse().map_err(|_| Error::format(at(), format!("feature {f:?} is not a number")))?;
            features.push(x);
        }
        let label = fields[d + 1];
        let next = class_names.len();
        let y = *class_index.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            next
        });
        labels.push(y);
    }
    let n = node_ids.len();
    let Some(d) = width else {
        return Err(Error::format(Location::file(content_path), "no nodes"));
    };

    let mut edges = Vec::new();
    let mut skipped = 0;
    let mut any_line = false;
    for (i, line) in lines(cites_path)?.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        any_line = true;
        if fields.len() != 2 {
            return Err(Error::format(Location::line(cites_path, i + 1), "expected two ids"));
        }
        match (index.get(fields[0]), index.get(fields[1])) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => skipped += 1,
        }
    }
    if !any_line {
        return Err(Error::format(Location::file(cites_path), "no citation lines"));
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} citations with unknown ids", cites_path.display());
    }

    let x = Matrix::from_vec(n, d, features).map_err(Error::Core)?;
    let graph = Graph::from_edges(n, &edges, x, labels, class_names.len(), Masks::empty(n))?;
    Ok(ContentCites { graph, node_ids, class_names, skipped_edges: skipped })
}

fn lines(path: &Path) -> Result<impl Iterator<Item = Result<String>> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().map(move |l| l.map_err(|e| Error::io(path, e))))
}
