//! `sweep`: run a cartesian grid of config overrides sequentially.
//!
//! Grid file:
//!
//! ```toml
//! seeds = [0, 1]          # optional; otherwise cell i uses seed base + i
//! [grid]
//! "env.reward.delta" = [0.1, 0.2]
//! "agent.schedule" = ["decay", 1.0, 0.5, 0.0]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, HarnessResult};
use crate::train::{create_dir, train, write_json};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<toml::Value>>,
    pub seeds: Option<Vec<u64>>,
}

impl GridFile {
    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read grid {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("grid {}: {}", path.display(), e.message())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub overrides: BTreeMap<String, String>,
    pub seed: u64,
    pub label: String,
    pub dir: PathBuf,
    pub final_1000: Option<f64>,
}

/// Every combination of the grid values, keys in sorted order.
pub fn expand(grid: &BTreeMap<String, Vec<toml::Value>>) -> HarnessResult<Vec<Vec<(String, toml::Value)>>> {
    if grid.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    if let Some((k, _)) = grid.iter().find(|(_, v)| v.is_empty()) {
        return Err(HarnessError::Config(format!("sweep grid key {k:?} has no values")));
    }
    let mut cells: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for (k, values) in grid {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

/// All cell configs, validated before anything runs.
pub fn plan(base: &RunConfig, grid: &GridFile, out: &Path) -> HarnessResult<Vec<(RunConfig, SweepCell)>> {
    let combos = expand(&grid.grid)?;
    let seeds: Vec<Option<u64>> = match &grid.seeds {
        Some(s) if s.is_empty() => return Err(HarnessError::Config("sweep seeds list is empty".into())),
        Some(s) => s.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut cells = Vec::new();
    for combo in &combos {
        let mut cfg = base.clone();
        for (k, v) in combo {
            cfg = cfg.with_override(k, v)?;
        }
        for seed in &seeds {
            let index = cells.len();
            let mut c = cfg.clone();
            c.run.seed = seed.unwrap_or(base.run.seed.wrapping_add(index as u64));
            let dir = out.join(format!("cell_{index:03}"));
            c.run.out = dir.clone();
            crate::train::prepared(&c)?;
            let cell = SweepCell {
                index,
                overrides: combo.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
                seed: c.run.seed,
                label: c.label(),
                dir,
                final_1000: None,
            };
            cells.push((c, cell));
        }
    }
    Ok(cells)
}

pub fn sweep(base: &RunConfig, grid: &GridFile, out: &Path) -> HarnessResult<Vec<SweepCell>> {
    let planned = plan(base, grid, out)?;
    create_dir(out)?;
    let mut done = Vec::new();
    for (cfg, mut cell) in planned {
        log::info!("sweep cell {} ({}) seed {}", cell.index, cell.label, cell.seed);
        let s = train(&cfg, &cell.dir)?;
        cell.final_1000 = s.final_1000;
        done.push(cell);
        write_json(&out.join("sweep.json"), &done)?;
    }
    Ok(done)
}
