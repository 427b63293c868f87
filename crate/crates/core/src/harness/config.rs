use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kcf::{CalibrationOptions, RiccatiOptions};
use crate::linalg;
use crate::model::{RandomSystemSpec, System};
use crate::olaad::{AdamConfig, Schedule};

/// Where the plant comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ModelSource {
    File { path: PathBuf },
    Random(RandomSystemSpec),
}

impl ModelSource {
    pub fn load(&self) -> Result<System> {
        match self {
            ModelSource::File { path } => System::load(path),
            ModelSource::Random(spec) => spec.generate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub a: Schedule,
    pub b: Schedule,
    pub c: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Directory for run artifacts; nothing is written when unset.
    pub dir: Option<PathBuf>,
    /// Keep the per-step trace over the measurement window.
    pub record_trace: bool,
    /// Attack parameter snapshot every this many iterations.
    pub checkpoint_interval: Option<u64>,
    /// Block length of the aggregated deviation series.
    pub aggregate_window: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            record_trace: true,
            checkpoint_interval: None,
            aggregate_window: 1000,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_lambda_max() -> f64 {
    1e6
}

fn default_consensus_scale() -> f64 {
    0.1
}

/// A full experiment description. JSON is the canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub x_star: Vec<f64>,
    pub alpha: f64,
    pub eta: f64,
    /// Detector window `J`.
    pub window: usize,
    pub schedules: Schedules,
    pub lambda0: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_true")]
    pub t_fixed: bool,
    /// Route SPSA gradients through adaptive moment normalization.
    #[serde(default)]
    pub adaptive: bool,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub gradient_clip: Option<f64>,
    /// With the attack disabled the attack run applies the identity attack
    /// with frozen parameters.
    #[serde(default = "default_true")]
    pub attack_enabled: bool,
    pub total_iterations: u64,
    /// Start of the measurement window; defaults to half the horizon.
    #[serde(default)]
    pub measure_from: Option<u64>,
    /// Attacked nodes; all nodes when unset.
    #[serde(default)]
    pub attacked_set: Option<Vec<usize>>,
    #[serde(default = "default_consensus_scale")]
    pub consensus_scale: f64,
    #[serde(default)]
    pub riccati: RiccatiOptions,
    #[serde(default)]
    pub calibration: CalibrationOptions,
    /// Covariance of `x(0)`; the process noise covariance when unset.
    #[serde(default)]
    pub initial_covariance: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Three nodes on a line, scalar state, two-dimensional sensors.
    pub fn scalar_network(seed: u64) -> Self {
        Self {
            model: ModelSource::Random(RandomSystemSpec::new(3, 1, 2, seed)),
            x_star: vec![5.0],
            alpha: 0.3,
            eta: 500.0,
            window: 3,
            schedules: Schedules {
                a: Schedule::power_law(0.5, 0.6),
                b: Schedule::power_law(0.5, 0.9),
                c: Schedule::power_law(0.01, 0.1),
            },
            lambda0: 7.0,
            lambda_max: default_lambda_max(),
            t_fixed: true,
            adaptive: true,
            adam: AdamConfig::default(),
            gradient_clip: None,
            attack_enabled: true,
            total_iterations: 1_000_000,
            measure_from: None,
            attacked_set: None,
            consensus_scale: default_consensus_scale(),
            riccati: RiccatiOptions::default(),
            calibration: CalibrationOptions::default(),
            initial_covariance: None,
            seed,
            output: OutputConfig::default(),
        }
    }

    /// Five nodes on a line, two-dimensional state and sensors.
    pub fn vector_network(seed: u64) -> Self {
        Self {
            model: ModelSource::Random(RandomSystemSpec::new(5, 2, 2, seed)),
            x_star: vec![5.0, 5.0],
            alpha: 0.1,
            eta: 200.0,
            window: 2,
            schedules: Schedules {
                a: Schedule::power_law(0.05, 0.6),
                b: Schedule::power_law(0.05, 0.9),
                c: Schedule::power_law(0.01, 0.1),
            },
            ..Self::scalar_network(seed)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn measure_from(&self) -> u64 {
        self.measure_from.unwrap_or(self.total_iterations / 2)
    }

    pub fn attacked_mask(&self, nodes: usize) -> Result<Vec<bool>> {
        match &self.attacked_set {
            None => Ok(vec![true; nodes]),
            Some(set) => {
                let mut mask = vec![false; nodes];
                for &k in set {
                    if k >= nodes {
                        return Err(Error::Config(format!(
                            "attacked node {k} out of range for {nodes} nodes"
                        )));
                    }
                    mask[k] = true;
                }
                Ok(mask)
            }
        }
    }

    pub fn initial_cov(&self, system: &System) -> Result<DMatrix<f64>> {
        match &self.initial_covariance {
            Some(rows) => linalg::from_rows(rows, "initial_covariance"),
            None => Ok(system.process.noise_cov.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let measure_from = self.measure_from();
        if self.total_iterations <= measure_from {
            problems.push(format!(
                "total_iterations ({}) must exceed measure_from ({measure_from})",
                self.total_iterations
            ));
        }
        if measure_from < self.calibration.burn_in as u64 {
            problems.push(format!(
                "measure_from ({measure_from}) must be at least the calibration burn-in ({})",
                self.calibration.burn_in
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            problems.push(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.eta > 0.0) {
            problems.push(format!("eta must be positive, got {}", self.eta));
        }
        if self.window == 0 {
            problems.push("window J must be at least 1".to_string());
        }
        if !(self.lambda0 >= 0.0) || !(self.lambda_max >= self.lambda0) {
            problems.push("need 0 <= lambda0 <= lambda_max".to_string());
        }
        for (name, s) in [
            ("a", &self.schedules.a),
            ("b", &self.schedules.b),
            ("c", &self.schedules.c),
        ] {
            if !s.is_valid() {
                problems.push(format!("schedule {name} must be positive"));
            }
        }
        if self.x_star.is_empty() {
            problems.push("x_star must be nonempty".to_string());
        }
        if self.output.aggregate_window == 0 {
            problems.push("aggregate_window must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
