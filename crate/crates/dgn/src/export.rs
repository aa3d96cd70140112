//! Plot-ready dumps of a trained model's representations.
//!
//! * `embeddings.csv`: `node_id,label,h0,…` with the last hidden layer.
//! * `group_means.csv`: `group_id,m0,…` with the running means of the last
//!   DGN layer.
//! * `assignments.csv`: `node_id,s0,…` with that layer's soft assignments.

use std::path::Path;

use dgn_core::train::{Model, ModelInput};
use dgn_core::{Graph, Matrix, Real, Tape};
use rand::SeedableRng;

use crate::error::{Error, Location, Result};

pub const EMBEDDINGS: &str = "embeddings.csv";
pub const GROUP_MEANS: &str = "group_means.csv";
pub const ASSIGNMENTS: &str = "assignments.csv";

/// Writes the files above into `dir`; the group files only when the model
/// has a DGN layer. Eval mode, so repeated exports are byte-identical.
pub fn export_embeddings<T: Real>(model: &Model<T>, input: &ModelInput<T>, g: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tape = Tape::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let fwd = model.forward(&mut tape, input, false, &mut rng)?;
    let hidden = tape.value(fwd.hidden).clone();
    write_rows(&dir.join(EMBEDDINGS), &["node_id", "label"], "h", &hidden, |v| vec![v.to_string(), g.labels()[v].to_string()])?;

    if let Some((i, dgn)) = model.last_dgn() {
        write_rows(&dir.join(GROUP_MEANS), &["group_id"], "m", dgn.running_mean(), |k| vec![k.to_string()])?;
        let s = dgn.assign(&mut tape, fwd.norm_inputs[i])?;
        let s = tape.value(s).clone();
        write_rows(&dir.join(ASSIGNMENTS), &["node_id"], "s", &s, |v| vec![v.to_string()])?;
    }
    Ok(())
}

fn write_rows<T: Real>(
    path: &Path,
    keys: &[&str],
    prefix: &str,
    m: &Matrix<T>,
    key_values: impl Fn(usize) -> Vec<String>,
) -> Result<()> {
    let err = |e: csv::Error| Error::format(Location::file(path), e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let header = keys.iter().map(|k| k.to_string()).chain((0..m.cols()).map(|j| format!("{prefix}{j}")));
    w.write_record(header).map_err(err)?;
    for r in 0..m.rows() {
        let row = key_values(r).into_iter().chain(m.row(r).iter().map(|x| x.as_f64().to_string()));
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
