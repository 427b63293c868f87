//! Kalman-consensus filtering at each node.
//!
//! Every round is synchronous: all nodes predict and broadcast `x̄^(k)(t)`
//! before any node corrects, so a correction always sees same-time
//! neighbour predictions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NetworkTopology, Plant, SensorModel, System};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct KcfGains {
    /// Kalman gains `G_k`, `q x m_k`.
    pub kalman: Vec<DMatrix<f64>>,
    /// Consensus gains `C_k`, `q x q`.
    pub consensus: Vec<DMatrix<f64>>,
    /// Neighbour counts `N_k` the gains were built for.
    pub degrees: Vec<usize>,
    /// Local steady-state prediction covariances, when synthesized.
    pub prediction_cov: Vec<DMatrix<f64>>,
    /// Spectral radius of the joint noiseless error dynamics.
    pub error_radius: f64,
}

impl KcfGains {
    pub fn new(kalman: Vec<DMatrix<f64>>, consensus: Vec<DMatrix<f64>>, degrees: Vec<usize>) -> Self {
        Self {
            kalman,
            consensus,
            degrees,
            prediction_cov: Vec::new(),
            error_radius: f64::NAN,
        }
    }

    pub fn len(&self) -> usize {
        self.kalman.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kalman.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-13,
        }
    }
}

/// Steady-state prediction covariance of a single node's local Kalman filter.
pub fn local_riccati(
    system: &System,
    node: usize,
    opts: RiccatiOptions,
) -> Result<DMatrix<f64>> {
    let a = &system.process.transition;
    let q = &system.process.noise_cov;
    let h = &system.sensors[node].observation;
    let r = &system.sensors[node].noise_cov;
    let mut p = q.clone();
    for _ in 0..opts.max_iterations {
        let s = h * &p * h.transpose() + r;
        let s_inv = linalg::inverse_spd(&s, "H P Hᵀ + R")?;
        let posterior = &p - &p * h.transpose() * s_inv * h * &p;
        let next = linalg::symmetrize(&(a * posterior * a.transpose() + q));
        let delta = (&next - &p).amax();
        p = next;
        if delta <= opts.tolerance * (1.0 + p.amax()) {
            return Ok(p);
        }
    }
    Err(Error::RiccatiDiverged {
        node,
        iterations: opts.max_iterations,
    })
}

/// Stacked matrix of `e(t) = F e(t-1) + noise`, `e_k = x̂^(k) - x`, with
/// diagonal blocks `A - G_k H_k A - N_k C_k A` and off-diagonal blocks
/// `C_k A` for each neighbour.
pub fn error_dynamics(system: &System, gains: &KcfGains) -> DMatrix<f64> {
    let q = system.state_dim();
    let n = system.nodes();
    let a = &system.process.transition;
    let mut f = DMatrix::zeros(n * q, n * q);
    for k in 0..n {
        let h = &system.sensors[k].observation;
        let g = &gains.kalman[k];
        let c = &gains.consensus[k];
        let nk = system.topology.degree(k) as f64;
        let ca = c * a;
        let diag = a - g * h * a - &ca * nk;
        f.view_mut((k * q, k * q), (q, q)).copy_from(&diag);
        for &j in system.topology.neighbors(k) {
            f.view_mut((k * q, j * q), (q, q)).copy_from(&ca);
        }
    }
    f
}

/// Local steady-state Kalman gains plus Frobenius-normalized consensus gains
/// `C_k = scale * P̄_k / (1 + ‖P̄_k‖_F)`.
pub fn synthesize_gains(
    system: &System,
    consensus_scale: f64,
    opts: RiccatiOptions,
) -> Result<KcfGains> {
    if !(consensus_scale >= 0.0) {
        return Err(Error::Config(format!(
            "consensus scale must be nonnegative, got {consensus_scale}"
        )));
    }
    let n = system.nodes();
    let mut kalman = Vec::with_capacity(n);
    let mut consensus = Vec::with_capacity(n);
    let mut prediction_cov = Vec::with_capacity(n);
    for k in 0..n {
        let p = local_riccati(system, k, opts)?;
        let h = &system.sensors[k].observation;
        let s = h * &p * h.transpose() + &system.sensors[k].noise_cov;
        let g = &p * h.transpose() * linalg::inverse_spd(&s, "H P Hᵀ + R")?;
        kalman.push(g);
        consensus.push(&p * (consensus_scale / (1.0 + p.norm())));
        prediction_cov.push(p);
    }
    let mut gains = KcfGains {
        kalman,
        consensus,
        degrees: (0..n).map(|k| system.topology.degree(k)).collect(),
        prediction_cov,
        error_radius: f64::NAN,
    };
    let radius = linalg::spectral_radius(&error_dynamics(system, &gains));
    if !(radius < 1.0) {
        return Err(Error::UnstableGains { radius });
    }
    gains.error_radius = radius;
    Ok(gains)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KcfNodeState {
    pub x_hat: DVector<f64>,
    pub x_bar: DVector<f64>,
}

impl KcfNodeState {
    pub fn new(x_hat: DVector<f64>) -> Self {
        let x_bar = x_hat.clone();
        Self { x_hat, x_bar }
    }
}

/// `x̄^(k)(t) = A x̂^(k)(t-1)`, stored in the state and returned.
pub fn kcf_predict(state: &mut KcfNodeState, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    if a.ncols() != state.x_hat.len() || !a.is_square() {
        return Err(Error::dim("kcf_predict", state.x_hat.len(), a.ncols()));
    }
    state.x_bar = a * &state.x_hat;
    Ok(state.x_bar.clone())
}

/// `x̂ = x̄ + G_k (y - H_k x̄) + C_k Σ_j (x̄^(j) - x̄)`.
pub fn kcf_correct(
    k: usize,
    y: &DVector<f64>,
    neighbor_bars: &[&DVector<f64>],
    state: &mut KcfNodeState,
    gains: &KcfGains,
    sensor: &SensorModel,
) -> Result<DVector<f64>> {
    if neighbor_bars.len() != gains.degrees[k] {
        return Err(Error::dim(
            "kcf_correct neighbour list",
            gains.degrees[k],
            neighbor_bars.len(),
        ));
    }
    if y.len() != sensor.dim() {
        return Err(Error::dim("kcf_correct observation", sensor.dim(), y.len()));
    }
    let x_bar = &state.x_bar;
    let mut spread = DVector::zeros(x_bar.len());
    for xj in neighbor_bars {
        spread += *xj - x_bar;
    }
    let residual = y - &sensor.observation * x_bar;
    state.x_hat = x_bar + &gains.kalman[k] * residual + &gains.consensus[k] * spread;
    Ok(state.x_hat.clone())
}

/// `z_k(t) = y_k(t) - H_k A x̂^(k)(t-1)`.
pub fn innovation(
    y: &DVector<f64>,
    x_hat_prev: &DVector<f64>,
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if a.ncols() != x_hat_prev.len() || h.ncols() != a.nrows() || h.nrows() != y.len() {
        return Err(Error::dim("innovation", h.nrows(), y.len()));
    }
    // Same association as the correction step (`H (A x̂)`), so the two agree bitwise.
    Ok(y - h * (a * x_hat_prev))
}

/// One synchronous round over the whole network: every node predicts, then
/// every node corrects with its delivered observation.
pub fn kcf_round(
    states: &mut [KcfNodeState],
    observations: &[DVector<f64>],
    system: &System,
    gains: &KcfGains,
) -> Result<()> {
    let n = system.nodes();
    if states.len() != n || observations.len() != n {
        return Err(Error::dim("kcf_round", n, states.len().min(observations.len())));
    }
    for s in states.iter_mut() {
        kcf_predict(s, &system.process.transition)?;
    }
    let bars: Vec<DVector<f64>> = states.iter().map(|s| s.x_bar.clone()).collect();
    for (k, s) in states.iter_mut().enumerate() {
        let nb: Vec<&DVector<f64>> = neighbor_refs(&system.topology, k, &bars);
        kcf_correct(k, &observations[k], &nb, s, gains, &system.sensors[k])?;
    }
    Ok(())
}

fn neighbor_refs<'a>(
    topology: &NetworkTopology,
    k: usize,
    bars: &'a [DVector<f64>],
) -> Vec<&'a DVector<f64>> {
    topology.neighbors(k).iter().map(|&j| &bars[j]).collect()
}

/// Steady-state innovation covariances with precomputed inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationStats {
    pub sigma: Vec<DMatrix<f64>>,
    pub sigma_inv: Vec<DMatrix<f64>>,
    pub sigma_inv_sqrt: Vec<DMatrix<f64>>,
}

impl InnovationStats {
    pub fn from_covariances(sigma: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut sigma_inv = Vec::with_capacity(sigma.len());
        let mut sigma_inv_sqrt = Vec::with_capacity(sigma.len());
        for (k, s) in sigma.iter().enumerate() {
            let name = format!("Sigma[{k}]");
            sigma_inv.push(linalg::inverse_spd(s, &name)?);
            sigma_inv_sqrt.push(linalg::inv_sqrt_spd(s, &name)?);
        }
        Ok(Self {
            sigma,
            sigma_inv,
            sigma_inv_sqrt,
        })
    }

    /// `zᵀ Σ_k⁻¹ z`.
    pub fn normalized(&self, k: usize, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.sigma_inv[k] * z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub steps: usize,
    pub burn_in: usize,
    pub mean_normalized_stat: Vec<f64>,
}

impl CalibrationReport {
    pub fn to_stats(&self) -> Result<InnovationStats> {
        let sigma = self
            .sigma
            .iter()
            .map(|s| linalg::from_rows(s, "Sigma"))
            .collect::<Result<Vec<_>>>()?;
        InnovationStats::from_covariances(sigma)
    }
}

/// `(Σ + Σᵀ)/2 + ε I` with `ε = max(1e-9 tr Σ / m, 1e-12)`.
pub fn regularize(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let m = sigma.nrows();
    let eps = (1e-9 * sigma.trace() / m as f64).max(1e-12);
    linalg::symmetrize(sigma) + DMatrix::identity(m, m) * eps
}

/// No-attack closed loop: plant, sensors and network filter.
pub struct NoAttackLoop<'a> {
    system: &'a System,
    gains: &'a KcfGains,
    plant: Plant,
    nodes: Vec<KcfNodeState>,
}

impl<'a> NoAttackLoop<'a> {
    /// Starts from `x(0) ~ N(0, initial_cov)` and `x̂^(k)(0) = 0`.
    pub fn new<R: Rng + ?Sized>(
        system: &'a System,
        gains: &'a KcfGains,
        initial_cov: &DMatrix<f64>,
        process_rng: &mut R,
    ) -> Result<Self> {
        let plant = Plant::new(system, initial_cov, process_rng)?;
        let q = system.state_dim();
        Ok(Self {
            system,
            gains,
            plant,
            nodes: vec![KcfNodeState::new(DVector::zeros(q)); system.nodes()],
        })
    }

    pub fn nodes(&self) -> &[KcfNodeState] {
        &self.nodes
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    /// Advances one time step and returns every node's innovation `z_k(t)`.
    pub fn step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        process_rng: &mut R1,
        observation_rng: &mut R2,
    ) -> Result<Vec<DVector<f64>>> {
        self.plant.advance(self.system, process_rng)?;
        let ys = self.plant.observe_all(self.system, observation_rng)?;
        let a = &self.system.process.transition;
        let zs = ys
            .iter()
            .zip(&self.nodes)
            .zip(&self.system.sensors)
            .map(|((y, s), sensor)| innovation(y, &s.x_hat, a, &sensor.observation))
            .collect::<Result<Vec<_>>>()?;
        kcf_round(&mut self.nodes, &ys, self.system, self.gains)?;
        Ok(zs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub steps: usize,
    pub burn_in: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            steps: 100_000,
            burn_in: 2_000,
        }
    }
}

/// Estimates `Σ_k` as the sample covariance of `z_k(t)` over `steps`
/// post-burn-in steps of the unattacked loop.
pub fn calibrate_innovation_covariance(
    system: &System,
    gains: &KcfGains,
    opts: CalibrationOptions,
    initial_cov: &DMatrix<f64>,
    seed: u64,
) -> Result<(InnovationStats, CalibrationReport)> {
    if opts.steps < 2 || opts.burn_in == 0 {
        return Err(Error::Config(
            "calibration needs at least 2 steps and a positive burn-in".into(),
        ));
    }
    let mut prng = rng::stream(seed, Stream::CalibrationProcess);
    let mut orng = rng::stream(seed, Stream::CalibrationObservation);
    let mut sim = NoAttackLoop::new(system, gains, initial_cov, &mut prng)?;
    for _ in 0..opts.burn_in {
        sim.step(&mut prng, &mut orng)?;
    }

    let n = system.nodes();
    let mut samples: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(opts.steps); n];
    for _ in 0..opts.steps {
        for (k, z) in sim.step(&mut prng, &mut orng)?.into_iter().enumerate() {
            samples[k].push(z);
        }
    }

    let sigma: Vec<DMatrix<f64>> = samples.iter().map(|zs| regularize(&sample_covariance(zs))).collect();
    let stats = InnovationStats::from_covariances(sigma)?;
    let mean_normalized_stat = samples
        .iter()
        .enumerate()
        .map(|(k, zs)| zs.iter().map(|z| stats.normalized(k, z)).sum::<f64>() / zs.len() as f64)
        .collect();
    let report = CalibrationReport {
        sigma: stats.sigma.iter().map(linalg::to_rows).collect(),
        steps: opts.steps,
        burn_in: opts.burn_in,
        mean_normalized_stat,
    };
    Ok((stats, report))
}

/// Unbiased sample covariance of a set of equal-length vectors.
pub fn sample_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let m = samples.first().map_or(0, DVector::len);
    let n = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(m), |acc, z| acc + z) / n;
    let mut cov = DMatrix::zeros(m, m);
    for z in samples {
        let d = z - &mean;
        cov += &d * d.transpose();
    }
    cov / (n - 1.0)
}
