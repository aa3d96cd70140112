pub mod content_cites;
pub mod generic;

use std::path::Path;

use dgn_core::Graph;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use content_cites::{load_content_cites, ContentCites};
pub use generic::{load_generic, save_generic, Splits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// A directory with one `.content` and one `.cites` file; no split.
    ContentCites,
    /// A directory in the [`generic`] layout, split included.
    Generic,
}

pub fn load(path: &Path, format: DatasetFormat) -> Result<Graph> {
    match format {
        DatasetFormat::ContentCites => Ok(content_cites::load_dir(path)?.graph),
        DatasetFormat::Generic => load_generic(path),
    }
}
