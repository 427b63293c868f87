use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::{write_json, SweepIndex};
use super::{run_experiment, ExperimentConfig, RunMetrics, Schedules};
use crate::error::{Error, Result};

/// Cartesian grid over detector settings, schedules and seeds. Empty axes
/// keep the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub window: Vec<usize>,
    pub schedules: Vec<Schedules>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub alpha: f64,
    pub eta: f64,
    pub window: usize,
    pub schedule_index: usize,
    pub seed: u64,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    pub fn configs(&self, base: &ExperimentConfig) -> Vec<(SweepCell, ExperimentConfig)> {
        let mut out = Vec::new();
        let schedules = axis(&self.schedules, base.schedules.clone());
        for &alpha in &axis(&self.alpha, base.alpha) {
            for &eta in &axis(&self.eta, base.eta) {
                for &window in &axis(&self.window, base.window) {
                    for (si, s) in schedules.iter().enumerate() {
                        for &seed in &axis(&self.seeds, base.seed) {
                            let mut c = base.clone();
                            c.alpha = alpha;
                            c.eta = eta;
                            c.window = window;
                            c.schedules = s.clone();
                            c.seed = seed;
                            let cell = SweepCell {
                                index: out.len(),
                                alpha,
                                eta,
                                window,
                                schedule_index: si,
                                seed,
                                metrics: None,
                                error: None,
                            };
                            out.push((cell, c));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Runs every cell in parallel. A failing cell records its error instead of
/// aborting the sweep; with an output directory each cell writes into
/// `cell_<index>` and `sweep.json` indexes them.
pub fn run_sweep(base: &ExperimentConfig, grid: &SweepGrid, dir: Option<&Path>) -> Result<Vec<SweepCell>> {
    let cells: Vec<SweepCell> = grid
        .configs(base)
        .into_par_iter()
        .map(|(mut cell, mut config)| {
            config.output.dir = dir.map(|d| d.join(format!("cell_{}", cell.index)));
            match run_experiment(&config) {
                Ok(out) => cell.metrics = Some(out.report.metrics),
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect();
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        write_json(&d.join("sweep.json"), &SweepIndex { cells: &cells })?;
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian_with_base_defaults() {
        let base = ExperimentConfig::scalar_network(1);
        let grid = SweepGrid {
            alpha: vec![0.1, 0.2],
            window: vec![2, 3, 4],
            seeds: vec![7, 8],
            ..Default::default()
        };
        let cells = grid.configs(&base);
        assert_eq!(cells.len(), 12);
        assert!(cells.iter().all(|(_, c)| c.eta == base.eta));
        assert_eq!(cells[11].0.index, 11);
        assert_eq!((cells[11].1.alpha, cells[11].1.window, cells[11].1.seed), (0.2, 4, 8));
    }
}
