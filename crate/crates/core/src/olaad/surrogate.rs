//! Closed-form one-step costs conditioned on the attacker's information at
//! `t - 1`.
//!
//! With `θ^(k) = x̂^(k) - x*` and `φ = x - x* ~ N(x̂ - x*, R)` given the past,
//! node `k`'s next deviation is
//!
//! ```text
//! θ^(k)(t) = D_k + G T H A φ(t-1) + G T H w + G T v + G (b - E b)
//! D_k      = (A - G T H A - N_k C A) θ^(k) + C A Σ_j θ^(j) - (I - A) x* + G (M θ^(k) + d)
//! ```
//!
//! and its attacked innovation is Gaussian with mean
//! `T H A x̂ - T H A x̂^(k) + M θ^(k) + d` and covariance
//! `T H Q Hᵀ Tᵀ + T R_k Tᵀ + S + T H A R Aᵀ Hᵀ Tᵀ`.

use nalgebra::{DMatrix, DVector};

use super::{AttackParams, NodeAttack};
use crate::kcf::{InnovationStats, KcfGains};
use crate::model::System;

/// Everything the attacker knows at `t - 1` that the costs depend on.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateContext<'a> {
    pub system: &'a System,
    pub gains: &'a KcfGains,
    pub stats: &'a InnovationStats,
    /// `θ^(j)(t-1)` for every node.
    pub theta_prev: &'a [DVector<f64>],
    /// Central estimate `x̂(t-1)`.
    pub central_mean: &'a DVector<f64>,
    /// Central error covariance `R(t-1)`.
    pub central_cov: &'a DMatrix<f64>,
    pub target: &'a DVector<f64>,
}

/// `E[‖θ^(k)(t)‖² | F_{t-1}]` for node `k` under `params`.
pub fn surrogate_theta_cost(params: &NodeAttack, k: usize, ctx: &SurrogateContext<'_>) -> f64 {
    let sys = ctx.system;
    let a = &sys.process.transition;
    let q = a.nrows();
    let sensor = &sys.sensors[k];
    let h = &sensor.observation;
    let g = &ctx.gains.kalman[k];
    let c = &ctx.gains.consensus[k];
    let t = &params.t;
    let nk = sys.topology.degree(k) as f64;
    let theta_k = &ctx.theta_prev[k];

    let gt = g * t;
    let gtha = &gt * h * a;
    let ca = c * a;
    let mut neighbor_sum = DVector::zeros(q);
    for &j in sys.topology.neighbors(k) {
        neighbor_sum += &ctx.theta_prev[j];
    }
    let drift = (a - &gtha - &ca * nk) * theta_k + &ca * neighbor_sum
        - (DMatrix::identity(q, q) - a) * ctx.target
        + g * params.bias_mean(theta_k);

    let gth = &gt * h;
    let noise = (&gth * &sys.process.noise_cov * gth.transpose()).trace()
        + (g * params.s() * g.transpose()).trace()
        + (&gt * &sensor.noise_cov * gt.transpose()).trace();

    let phi_mean = ctx.central_mean - ctx.target;
    let cross = 2.0 * drift.dot(&(&gtha * &phi_mean));
    let second = ctx.central_cov + &phi_mean * phi_mean.transpose();
    let phi_term = (&gtha * second * gtha.transpose()).trace();

    drift.norm_squared() + noise + cross + phi_term
}

/// `E[z̃_kᵀ Σ_k⁻¹ z̃_k | F_{t-1}]` for node `k` under `params`.
pub fn surrogate_detection_cost(params: &NodeAttack, k: usize, ctx: &SurrogateContext<'_>) -> f64 {
    let sys = ctx.system;
    let a = &sys.process.transition;
    let sensor = &sys.sensors[k];
    let h = &sensor.observation;
    let t = &params.t;
    let theta_k = &ctx.theta_prev[k];
    let x_hat_k = theta_k + ctx.target;

    let th = t * h;
    let tha = &th * a;
    let mean = &tha * ctx.central_mean - &tha * x_hat_k + params.bias_mean(theta_k);
    let cov = &th * &sys.process.noise_cov * th.transpose()
        + t * &sensor.noise_cov * t.transpose()
        + params.s()
        + &tha * ctx.central_cov * tha.transpose();
    let inner = cov + &mean * mean.transpose();
    let root = &ctx.stats.sigma_inv_sqrt[k];
    (root * inner * root).trace()
}

/// `Σ_j E[‖θ^(j)(t)‖² + λ z̃_jᵀ Σ_j⁻¹ z̃_j | F_{t-1}]`.
pub fn surrogate_total(params: &AttackParams, lambda: f64, ctx: &SurrogateContext<'_>) -> f64 {
    params
        .nodes
        .iter()
        .enumerate()
        .map(|(k, p)| surrogate_theta_cost(p, k, ctx) + lambda * surrogate_detection_cost(p, k, ctx))
        .sum()
}
