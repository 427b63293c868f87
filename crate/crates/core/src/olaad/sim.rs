use nalgebra::{DMatrix, DVector};

use super::{
    apply_attack, draw_perturbations, sample_node_bias, spsa_step, AttackParams,
    CentralKf, OlaadState, SurrogateContext,
};
use crate::detection::DetectorState;
use crate::error::{Error, Result};
use crate::kcf::{innovation, kcf_round, InnovationStats, KcfGains, KcfNodeState};
use crate::model::{Plant, System};
use crate::rng::{self, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    /// Observations reach the nodes untouched.
    None,
    /// The attack is applied with parameters held at their initial values.
    Frozen,
    /// Full online learning of the parameters and the multiplier.
    Learning,
}

/// Independent random streams of one run.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub process: SimRng,
    pub observation: SimRng,
    pub attack: SimRng,
}

impl RunStreams {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            process: rng::stream(seed, Stream::Process),
            observation: rng::stream(seed, Stream::Observation),
            attack: rng::stream(seed, Stream::Attack),
        }
    }
}

/// What happened in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: u64,
    pub x_hat: Vec<DVector<f64>>,
    /// `ζ_kᵀ Σ_k⁻¹ ζ_k` of the innovation each node computes from what it received.
    pub node_stats: Vec<f64>,
    /// Detector window sums.
    pub window_stats: Vec<f64>,
    pub alarms: Vec<bool>,
    /// `Σ_k z̃_kᵀ Σ_k⁻¹ z̃_k` as computed by the attacker.
    pub attack_stat: f64,
    /// `λ(t)` after this iteration's update.
    pub lambda: f64,
    pub skipped: bool,
}

/// Closed loop of plant, network filter, detectors and attacker.
pub struct AttackRun<'a> {
    system: &'a System,
    gains: &'a KcfGains,
    stats: &'a InnovationStats,
    mode: AttackMode,
    alpha: f64,
    plant: Plant,
    nodes: Vec<KcfNodeState>,
    detectors: Vec<DetectorState>,
    central: CentralKf,
    params: AttackParams,
    olaad: OlaadState,
    streams: RunStreams,
    t: u64,
}

impl<'a> AttackRun<'a> {
    /// Starts at `t = 0` with `x(0) ~ N(0, initial_cov)` drawn from the
    /// process stream and every node estimate at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: &'a System,
        gains: &'a KcfGains,
        stats: &'a InnovationStats,
        detectors: Vec<DetectorState>,
        alpha: f64,
        mode: AttackMode,
        params: AttackParams,
        olaad: OlaadState,
        initial_cov: &DMatrix<f64>,
        mut streams: RunStreams,
    ) -> Result<Self> {
        let n = system.nodes();
        let q = system.state_dim();
        if detectors.len() != n || params.len() != n || params.attacked.len() != n {
            return Err(Error::dim("attack run node count", n, params.len()));
        }
        if olaad.x_star.len() != q {
            return Err(Error::dim("attack target", q, olaad.x_star.len()));
        }
        for (k, (p, s)) in params.nodes.iter().zip(&system.sensors).enumerate() {
            let m = s.dim();
            if p.t.shape() != (m, m) || p.u.shape() != (m, m) || p.m.shape() != (m, q) || p.d.len() != m {
                return Err(Error::dim("attack parameters", format!("node {k} shapes for m = {m}"), "mismatch"));
            }
        }
        let plant = Plant::new(system, initial_cov, &mut streams.process)?;
        Ok(Self {
            system,
            gains,
            stats,
            mode,
            alpha,
            plant,
            nodes: vec![KcfNodeState::new(DVector::zeros(q)); n],
            detectors,
            central: CentralKf::new(system, DVector::zeros(q), initial_cov.clone()),
            params,
            olaad,
            streams,
            t: 0,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn params(&self) -> &AttackParams {
        &self.params
    }

    pub fn olaad(&self) -> &OlaadState {
        &self.olaad
    }

    pub fn nodes(&self) -> &[KcfNodeState] {
        &self.nodes
    }

    pub fn central(&self) -> &CentralKf {
        &self.central
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    /// One iteration: perturb and score (1-3), update parameters (4), observe
    /// (5), compute and substitute innovations (6-7), update λ (8), and run
    /// the network filter on what was delivered (9).
    pub fn step(&mut self) -> Result<IterationRecord> {
        let t = self.t + 1;
        let sys = self.system;
        let a = &sys.process.transition;
        let n = sys.nodes();
        let x_star = self.olaad.x_star.clone();
        let theta_prev: Vec<DVector<f64>> = self.nodes.iter().map(|s| &s.x_hat - &x_star).collect();

        let mut skipped = false;
        if self.mode == AttackMode::Learning {
            let draw = draw_perturbations(&self.params, &mut self.streams.attack);
            let ctx = SurrogateContext {
                system: sys,
                gains: self.gains,
                stats: self.stats,
                theta_prev: &theta_prev,
                central_mean: &self.central.mean,
                central_cov: &self.central.cov,
                target: &x_star,
            };
            let out = spsa_step(&mut self.olaad, &self.params, &draw, &ctx)?;
            skipped = out.skipped;
            self.params = out.params;
        }

        self.plant.advance(sys, &mut self.streams.process)?;
        let ys = self.plant.observe_all(sys, &mut self.streams.observation)?;

        let mut delivered = Vec::with_capacity(n);
        let mut attack_stat = 0.0;
        for k in 0..n {
            let h = &sys.sensors[k].observation;
            let z = innovation(&ys[k], &self.nodes[k].x_hat, a, h)?;
            if self.mode != AttackMode::None && self.params.attacked[k] {
                let p = &self.params.nodes[k];
                let b = sample_node_bias(p, &theta_prev[k], &mut self.streams.attack);
                let z_tilde = apply_attack(&z, &p.t, &b)?;
                attack_stat += self.stats.normalized(k, &z_tilde);
                // Same observation as z̃ + H A x̂(t-1), written as an injected
                // error so that an identity attack delivers y bit for bit.
                delivered.push(&ys[k] + (z_tilde - &z));
            } else {
                attack_stat += self.stats.normalized(k, &z);
                delivered.push(ys[k].clone());
            }
        }

        if self.mode == AttackMode::Learning {
            let window = self.detectors[0].window_len();
            let eta = self.detectors[0].threshold();
            self.olaad.update_lambda(t, attack_stat, self.alpha, eta, window);
        }

        let mut node_stats = Vec::with_capacity(n);
        let mut window_stats = Vec::with_capacity(n);
        let mut alarms = Vec::with_capacity(n);
        for (k, y) in delivered.iter().enumerate() {
            let zeta = innovation(y, &self.nodes[k].x_hat, a, &sys.sensors[k].observation)?;
            let out = self.detectors[k].push(self.stats.normalized(k, &zeta));
            node_stats.push(out.value);
            window_stats.push(out.stat);
            alarms.push(out.alarm);
        }

        kcf_round(&mut self.nodes, &delivered, sys, self.gains)?;
        if self.mode == AttackMode::Learning {
            self.central.step(&ys, sys)?;
        }
        self.olaad.t = t;
        self.t = t;

        Ok(IterationRecord {
            t,
            x_hat: self.nodes.iter().map(|s| s.x_hat.clone()).collect(),
            node_stats,
            window_stats,
            alarms,
            attack_stat,
            lambda: self.olaad.lambda,
            skipped,
        })
    }
}
