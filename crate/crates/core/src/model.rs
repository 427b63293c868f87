//! The plant, the per-node sensors and the communication graph.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, GaussianSampler, PSD_TOLERANCE};
use crate::rng::{self, Stream};

/// Linear-Gaussian dynamics `x(t+1) = A x(t) + w(t)`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    pub transition: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
}

impl ProcessModel {
    pub fn new(transition: DMatrix<f64>, noise_cov: DMatrix<f64>) -> Self {
        Self {
            transition,
            noise_cov,
        }
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }
}

/// Observation map of one node: `y_k = H_k x + v_k`, `v_k ~ N(0, R_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub observation: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
}

impl SensorModel {
    pub fn new(observation: DMatrix<f64>, noise_cov: DMatrix<f64>) -> Self {
        Self {
            observation,
            noise_cov,
        }
    }

    pub fn dim(&self) -> usize {
        self.observation.nrows()
    }
}

/// Undirected communication graph given as neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    neighbors: Vec<Vec<usize>>,
}

impl NetworkTopology {
    pub fn new(neighbors: Vec<Vec<usize>>) -> Self {
        Self { neighbors }
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn line(n: usize) -> Self {
        let neighbors = (0..n)
            .map(|k| {
                let mut nb = Vec::with_capacity(2);
                if k > 0 {
                    nb.push(k - 1);
                }
                if k + 1 < n {
                    nb.push(k + 1);
                }
                nb
            })
            .collect();
        Self { neighbors }
    }

    pub fn from_adjacency(adjacency: &[Vec<u8>]) -> Self {
        let neighbors = adjacency
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &a)| a != 0)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Self { neighbors }
    }

    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        self.neighbors
            .iter()
            .map(|nb| {
                let mut row = vec![0u8; n];
                for &j in nb {
                    if j < n {
                        row[j] = 1;
                    }
                }
                row
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for &j in &self.neighbors[k] {
                if j < n && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub x: DVector<f64>,
    pub t: u64,
}

/// A complete plant: process, one sensor per node, and the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub process: ProcessModel,
    pub sensors: Vec<SensorModel>,
    pub topology: NetworkTopology,
    pub seed: u64,
}

impl System {
    pub fn nodes(&self) -> usize {
        self.sensors.len()
    }

    pub fn state_dim(&self) -> usize {
        self.process.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate_model(&self.process, &self.sensors, &self.topology);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(v.iter().map(ToString::to_string).collect()))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelDocument = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let system = doc.into_system()?;
        system.validate()?;
        Ok(system)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&ModelDocument::from_system(self))
            .map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionNotSquare,
    EmptyState,
    NoiseShape,
    NoiseNotSymmetric,
    NoiseNotPsd(f64),
    SensorColumns { node: usize, cols: usize },
    EmptySensor(usize),
    SensorNoiseShape(usize),
    SensorNoiseNotSymmetric(usize),
    SensorNoiseNotPd { node: usize, min_eigenvalue: f64 },
    NodeCount { sensors: usize, nodes: usize },
    NeighborOutOfRange { node: usize, neighbor: usize },
    SelfLoop(usize),
    AsymmetricAdjacency { from: usize, to: usize },
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionNotSquare => write!(f, "A not square"),
            Violation::EmptyState => write!(f, "state dimension is zero"),
            Violation::NoiseShape => write!(f, "Q shape differs from A"),
            Violation::NoiseNotSymmetric => write!(f, "Q not symmetric"),
            Violation::NoiseNotPsd(l) => write!(f, "Q not PSD (min eigenvalue {l:e})"),
            Violation::SensorColumns { node, cols } => {
                write!(f, "H[{node}] has {cols} columns, expected state dimension")
            }
            Violation::EmptySensor(k) => write!(f, "H[{k}] has no rows"),
            Violation::SensorNoiseShape(k) => write!(f, "R[{k}] shape differs from H[{k}] rows"),
            Violation::SensorNoiseNotSymmetric(k) => write!(f, "R[{k}] not symmetric"),
            Violation::SensorNoiseNotPd {
                node,
                min_eigenvalue,
            } => write!(f, "R[{node}] not PD (min eigenvalue {min_eigenvalue:e})"),
            Violation::NodeCount { sensors, nodes } => {
                write!(f, "{sensors} sensors for {nodes} topology nodes")
            }
            Violation::NeighborOutOfRange { node, neighbor } => {
                write!(f, "node {node} lists nonexistent neighbor {neighbor}")
            }
            Violation::SelfLoop(k) => write!(f, "self-loop at node {k}"),
            Violation::AsymmetricAdjacency { from, to } => {
                write!(f, "asymmetric adjacency: {to} is a neighbor of {from} but not vice versa")
            }
            Violation::Disconnected => write!(f, "topology not connected"),
        }
    }
}

const SYMMETRY_TOL: f64 = 1e-9;

/// Checks every structural invariant of a model; an empty list means valid.
pub fn validate_model(
    process: &ProcessModel,
    sensors: &[SensorModel],
    topology: &NetworkTopology,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let a = &process.transition;
    let q = a.nrows();
    if !a.is_square() {
        out.push(Violation::TransitionNotSquare);
    }
    if q == 0 {
        out.push(Violation::EmptyState);
    }
    let qn = &process.noise_cov;
    if qn.nrows() != q || qn.ncols() != a.ncols() {
        out.push(Violation::NoiseShape);
    } else if !linalg::is_symmetric(qn, SYMMETRY_TOL) {
        out.push(Violation::NoiseNotSymmetric);
    } else {
        let l = linalg::min_eigenvalue(qn);
        if l < -PSD_TOLERANCE {
            out.push(Violation::NoiseNotPsd(l));
        }
    }

    for (k, s) in sensors.iter().enumerate() {
        let m = s.dim();
        if m == 0 {
            out.push(Violation::EmptySensor(k));
        }
        if s.observation.ncols() != q {
            out.push(Violation::SensorColumns {
                node: k,
                cols: s.observation.ncols(),
            });
        }
        if s.noise_cov.nrows() != m || s.noise_cov.ncols() != m {
            out.push(Violation::SensorNoiseShape(k));
        } else if !linalg::is_symmetric(&s.noise_cov, SYMMETRY_TOL) {
            out.push(Violation::SensorNoiseNotSymmetric(k));
        } else if m > 0 {
            let l = linalg::min_eigenvalue(&s.noise_cov);
            if l <= 0.0 {
                out.push(Violation::SensorNoiseNotPd {
                    node: k,
                    min_eigenvalue: l,
                });
            }
        }
    }

    let n = topology.len();
    if sensors.len() != n {
        out.push(Violation::NodeCount {
            sensors: sensors.len(),
            nodes: n,
        });
    }
    let mut graph_ok = true;
    for k in 0..n {
        for &j in topology.neighbors(k) {
            if j >= n {
                out.push(Violation::NeighborOutOfRange {
                    node: k,
                    neighbor: j,
                });
                graph_ok = false;
            } else if j == k {
                out.push(Violation::SelfLoop(k));
            } else if !topology.neighbors(j).contains(&k) {
                out.push(Violation::AsymmetricAdjacency { from: k, to: j });
            }
        }
    }
    if graph_ok && n > 0 && !topology.is_connected() {
        out.push(Violation::Disconnected);
    }
    out
}

/// One plant step with a prebuilt noise sampler for `Q`.
pub fn step_process_with<R: Rng + ?Sized>(
    state: &ProcessState,
    model: &ProcessModel,
    noise: &GaussianSampler,
    rng: &mut R,
) -> Result<ProcessState> {
    if state.x.len() != model.dim() || noise.dim() != model.dim() {
        return Err(Error::dim("step_process", model.dim(), state.x.len()));
    }
    let w = noise.sample(rng);
    Ok(ProcessState {
        x: &model.transition * &state.x + w,
        t: state.t + 1,
    })
}

/// `x(t+1) = A x(t) + w`, `w ~ N(0, Q)`.
pub fn step_process<R: Rng + ?Sized>(
    state: &ProcessState,
    model: &ProcessModel,
    rng: &mut R,
) -> Result<ProcessState> {
    let noise = GaussianSampler::new(&model.noise_cov, "Q")?;
    step_process_with(state, model, &noise, rng)
}

pub fn observe_with<R: Rng + ?Sized>(
    x: &DVector<f64>,
    sensor: &SensorModel,
    noise: &GaussianSampler,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if sensor.observation.ncols() != x.len() || noise.dim() != sensor.dim() {
        return Err(Error::dim("observe", sensor.observation.ncols(), x.len()));
    }
    Ok(&sensor.observation * x + noise.sample(rng))
}

/// `y_k = H_k x + v_k`, `v_k ~ N(0, R_k)`.
pub fn observe<R: Rng + ?Sized>(
    k: usize,
    x: &DVector<f64>,
    sensor: &SensorModel,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let noise = GaussianSampler::new(&sensor.noise_cov, &format!("R[{k}]"))?;
    observe_with(x, sensor, &noise, rng)
}

/// The true process together with cached noise samplers, advanced in lock
/// step with the filters.
#[derive(Debug, Clone)]
pub struct Plant {
    state: ProcessState,
    process_noise: GaussianSampler,
    sensor_noise: Vec<GaussianSampler>,
}

impl Plant {
    /// Draws `x(0) ~ N(0, initial_cov)` from `rng`.
    pub fn new<R: Rng + ?Sized>(
        system: &System,
        initial_cov: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let q = system.state_dim();
        if initial_cov.shape() != (q, q) {
            return Err(Error::dim(
                "initial covariance",
                format!("{q}x{q}"),
                format!("{}x{}", initial_cov.nrows(), initial_cov.ncols()),
            ));
        }
        let x0 = GaussianSampler::new(initial_cov, "initial covariance")?.sample(rng);
        let sensor_noise = system
            .sensors
            .iter()
            .enumerate()
            .map(|(k, s)| GaussianSampler::new(&s.noise_cov, &format!("R[{k}]")))
            .collect::<Result<_>>()?;
        Ok(Self {
            state: ProcessState { x: x0, t: 0 },
            process_noise: GaussianSampler::new(&system.process.noise_cov, "Q")?,
            sensor_noise,
        })
    }

    pub fn state(&self) -> &ProcessState {
        &self.state
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, system: &System, rng: &mut R) -> Result<()> {
        self.state = step_process_with(&self.state, &system.process, &self.process_noise, rng)?;
        Ok(())
    }

    /// True observations of every node at the current time, in node order.
    pub fn observe_all<R: Rng + ?Sized>(
        &self,
        system: &System,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        system
            .sensors
            .iter()
            .zip(&self.sensor_noise)
            .map(|(s, noise)| observe_with(&self.state.x, s, noise, rng))
            .collect()
    }
}

/// Parameters for drawing a random system instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSystemSpec {
    pub nodes: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    #[serde(default = "default_spectral_radius")]
    pub spectral_radius: f64,
    /// Sensor covariances with a smaller eigenvalue are redrawn.
    #[serde(default = "default_min_noise_eigenvalue")]
    pub min_noise_eigenvalue: f64,
    pub seed: u64,
}

fn default_spectral_radius() -> f64 {
    0.95
}

fn default_min_noise_eigenvalue() -> f64 {
    1e-3
}

impl RandomSystemSpec {
    pub fn new(nodes: usize, state_dim: usize, obs_dim: usize, seed: u64) -> Self {
        Self {
            nodes,
            state_dim,
            obs_dim,
            spectral_radius: default_spectral_radius(),
            min_noise_eigenvalue: default_min_noise_eigenvalue(),
            seed,
        }
    }

    /// `A` has i.i.d. `U[-1, 1]` entries rescaled to the requested spectral
    /// radius; `Q = ρρᵀ`, `R_k = ρρᵀ` and `H_k` with `U[0, 1]` entries. The
    /// graph is a line.
    pub fn generate(&self) -> Result<System> {
        if self.nodes == 0 || self.state_dim == 0 || self.obs_dim == 0 {
            return Err(Error::Config("random system dimensions must be positive".into()));
        }
        if !(self.spectral_radius > 0.0) {
            return Err(Error::Config("spectral radius must be positive".into()));
        }
        let mut rng = rng::stream(self.seed, Stream::Model);
        let q = self.state_dim;
        let m = self.obs_dim;

        let transition = loop {
            let a = DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..=1.0));
            let r = linalg::spectral_radius(&a);
            if r > 1e-6 {
                break a * (self.spectral_radius / r);
            }
        };
        let rho = DMatrix::from_fn(q, q, |_, _| rng.random_range(0.0..=1.0));
        let noise_cov = linalg::symmetrize(&(&rho * rho.transpose()));

        let mut sensors = Vec::with_capacity(self.nodes);
        for _ in 0..self.nodes {
            let observation = DMatrix::from_fn(m, q, |_, _| rng.random_range(0.0..=1.0));
            let cov = loop {
                let rho = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.0..=1.0));
                let r = linalg::symmetrize(&(&rho * rho.transpose()));
                if linalg::min_eigenvalue(&r) >= self.min_noise_eigenvalue {
                    break r;
                }
            };
            sensors.push(SensorModel::new(observation, cov));
        }

        let system = System {
            process: ProcessModel::new(transition, noise_cov),
            sensors,
            topology: NetworkTopology::line(self.nodes),
            seed: self.seed,
        };
        system.validate()?;
        Ok(system)
    }
}

/// JSON form of a [`System`]; matrices are arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<Vec<f64>>>,
    pub adjacency: Vec<Vec<u8>>,
    pub seed: u64,
}

impl ModelDocument {
    pub fn from_system(system: &System) -> Self {
        Self {
            a: linalg::to_rows(&system.process.transition),
            q: linalg::to_rows(&system.process.noise_cov),
            h: system.sensors.iter().map(|s| linalg::to_rows(&s.observation)).collect(),
            r: system.sensors.iter().map(|s| linalg::to_rows(&s.noise_cov)).collect(),
            adjacency: system.topology.adjacency(),
            seed: system.seed,
        }
    }

    pub fn into_system(self) -> Result<System> {
        if self.h.len() != self.r.len() {
            return Err(Error::Config(format!(
                "{} observation maps but {} noise covariances",
                self.h.len(),
                self.r.len()
            )));
        }
        let process = ProcessModel::new(
            linalg::from_rows(&self.a, "A")?,
            linalg::from_rows(&self.q, "Q")?,
        );
        let sensors = self
            .h
            .iter()
            .zip(&self.r)
            .map(|(h, r)| Ok(SensorModel::new(linalg::from_rows(h, "H")?, linalg::from_rows(r, "R")?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(System {
            process,
            sensors,
            topology: NetworkTopology::from_adjacency(&self.adjacency),
            seed: self.seed,
        })
    }
}
