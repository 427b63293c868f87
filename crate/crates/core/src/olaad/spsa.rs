use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{detection_budget, lambda_step, surrogate_total, AttackParams, Schedule, SurrogateContext};
use crate::error::{Error, Result};

/// Rademacher draws with the shapes of `T_k`, `U_k`, `M_k`, `d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDraw {
    pub delta: Vec<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub pi: Vec<DMatrix<f64>>,
    pub beta: Vec<DVector<f64>>,
}

fn sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Independent `±1` entries for every node, shaped like `params`.
pub fn draw_perturbations<R: Rng + ?Sized>(params: &AttackParams, rng: &mut R) -> PerturbationDraw {
    let mut draw = PerturbationDraw {
        delta: Vec::with_capacity(params.len()),
        gamma: Vec::with_capacity(params.len()),
        pi: Vec::with_capacity(params.len()),
        beta: Vec::with_capacity(params.len()),
    };
    for n in &params.nodes {
        let (tr, tc) = n.t.shape();
        draw.delta.push(DMatrix::from_fn(tr, tc, |_, _| sign(rng)));
        let (ur, uc) = n.u.shape();
        draw.gamma.push(DMatrix::from_fn(ur, uc, |_, _| sign(rng)));
        let (mr, mc) = n.m.shape();
        draw.pi.push(DMatrix::from_fn(mr, mc, |_, _| sign(rng)));
        draw.beta.push(DVector::from_fn(n.d.len(), |_, _| sign(rng)));
    }
    draw
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, one per free parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl AdamMoments {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    /// Bias-corrected `m̂ / (√v̂ + ε)` for each entry of `grad`.
    fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.steps += 1;
        let c1 = 1.0 - beta1.powi(self.steps.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.steps.min(i32::MAX as u64) as i32);
        grad.iter()
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                (*m / c1) / ((*v / c2).sqrt() + epsilon)
            })
            .collect()
    }
}

/// Attacker-side learning state.
#[derive(Debug, Clone, PartialEq)]
pub struct OlaadState {
    pub lambda: f64,
    pub lambda_max: f64,
    /// Index of the last completed iteration.
    pub t: u64,
    pub a: Schedule,
    pub b: Schedule,
    pub c: Schedule,
    pub adam: Option<AdamMoments>,
    /// Adaptive moments of the multiplier's ascent direction, if λ steps
    /// are normalized too.
    pub lambda_adam: Option<AdamMoments>,
    /// Entrywise bound on the raw gradient estimate, if any.
    pub clip: Option<f64>,
    pub x_star: DVector<f64>,
    /// Iterations whose update was skipped for a non-finite cost.
    pub skipped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsaOutcome {
    pub params: AttackParams,
    pub kappa_plus: f64,
    pub kappa_minus: f64,
    /// Set when either cost was non-finite and the update was skipped.
    pub skipped: bool,
}

impl OlaadState {
    /// Projected ascent on λ with slack `detection_stat - αη/J` at step
    /// size `b(t)`, normalized by `lambda_adam` when present.
    pub fn update_lambda(&mut self, t: u64, detection_stat: f64, alpha: f64, eta: f64, window: usize) -> f64 {
        let step = self.b.at(t);
        self.lambda = match &mut self.lambda_adam {
            None => lambda_step(self.lambda, detection_stat, step, alpha, eta, window, self.lambda_max),
            Some(moments) => {
                let slack = detection_stat - detection_budget(alpha, eta, window);
                let dir = moments.direction(&[slack])[0];
                (self.lambda + step * dir).clamp(0.0, self.lambda_max)
            }
        };
        self.lambda
    }
}

/// One simultaneous-perturbation step on the free attack parameters at
/// iteration `state.t + 1`.
pub fn spsa_step(
    state: &mut OlaadState,
    params: &AttackParams,
    draw: &PerturbationDraw,
    ctx: &SurrogateContext<'_>,
) -> Result<SpsaOutcome> {
    let t = state.t + 1;
    let c = state.c.at(t);
    if !(c >= 1e-12) {
        return Err(Error::DegeneratePerturbation(c));
    }
    let a = state.a.at(t);
    let base = params.free_values();
    let dirs = params.free_perturbation(draw);

    let mut plus = params.clone();
    let shifted: Vec<f64> = base.iter().zip(&dirs).map(|(x, s)| x + c * s).collect();
    plus.set_free_values(&shifted)?;
    let mut minus = params.clone();
    let shifted: Vec<f64> = base.iter().zip(&dirs).map(|(x, s)| x - c * s).collect();
    minus.set_free_values(&shifted)?;

    let kappa_plus = surrogate_total(&plus, state.lambda, ctx);
    let kappa_minus = surrogate_total(&minus, state.lambda, ctx);
    if !kappa_plus.is_finite() || !kappa_minus.is_finite() {
        state.skipped += 1;
        return Ok(SpsaOutcome {
            params: params.clone(),
            kappa_plus,
            kappa_minus,
            skipped: true,
        });
    }

    let quotient = (kappa_plus - kappa_minus) / (2.0 * c);
    let mut grad: Vec<f64> = dirs.iter().map(|s| quotient / s).collect();
    if let Some(bound) = state.clip {
        for g in &mut grad {
            *g = g.clamp(-bound, bound);
        }
    }
    let step = match state.adam.as_mut() {
        Some(adam) => adam.direction(&grad),
        None => grad,
    };
    let updated: Vec<f64> = base.iter().zip(&step).map(|(x, g)| x - a * g).collect();
    let mut next = params.clone();
    next.set_free_values(&updated)?;
    Ok(SpsaOutcome {
        params: next,
        kappa_plus,
        kappa_minus,
        skipped: false,
    })
}
