//! Benchmark grid files (TOML).
//!
//! ```toml
//! trials = 10          # optional
//! base_seed = 2024     # optional
//! profile = "fpca"     # optional
//!
//! [[cells]]
//! rows = 40
//! cols = 40
//! samples = 800
//! ranks = [1, 2, 3]    # or: rank = 1
//! ```

use std::path::Path;

use serde::Deserialize;

use super::matrix_io::read_text;
use crate::error::{Error, Result};
use crate::problems::GridCell;
use crate::solvers::Profile;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellSpec {
    rows: usize,
    cols: usize,
    samples: usize,
    rank: Option<usize>,
    ranks: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    trials: Option<usize>,
    base_seed: Option<u64>,
    profile: Option<String>,
    cells: Vec<CellSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub trials: Option<usize>,
    pub base_seed: Option<u64>,
    pub profile: Option<Profile>,
    pub cells: Vec<GridCell>,
}

pub fn parse_grid(text: &str, path: &Path) -> Result<GridFile> {
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    let spec: GridSpec = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    let mut cells = Vec::new();
    for (k, c) in spec.cells.iter().enumerate() {
        let ranks = match (&c.rank, &c.ranks) {
            (Some(r), None) => vec![*r],
            (None, Some(rs)) if !rs.is_empty() => rs.clone(),
            _ => return Err(bad(format!("cell {k}: give exactly one of `rank` or a nonempty `ranks`"))),
        };
        cells.extend(ranks.into_iter().map(|r| GridCell {
            m: c.rows,
            n: c.cols,
            r,
            p: c.samples,
        }));
    }
    if cells.is_empty() {
        return Err(bad("grid has no cells".into()));
    }
    let profile = spec
        .profile
        .map(|p| p.parse::<Profile>())
        .transpose()
        .map_err(|e| bad(e.to_string()))?;
    Ok(GridFile {
        trials: spec.trials,
        base_seed: spec.base_seed,
        profile,
        cells,
    })
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    parse_grid(&read_text(path)?, path)
}
