//! The attacker: linear innovation substitution learned online.
//!
//! Each iteration the attacker perturbs its parameters, scores both
//! perturbed points with closed-form conditional expectations of the
//! next-step deviation and detection statistic, takes an SPSA step, and
//! then prices the detection budget through a slowly moving Lagrange
//! multiplier.

mod central;
mod schedule;
mod sim;
mod spsa;
mod surrogate;

pub use central::{central_kf_step, CentralKf};
pub use schedule::Schedule;
pub use sim::{AttackMode, AttackRun, IterationRecord, RunStreams};
pub use spsa::{
    draw_perturbations, spsa_step, AdamConfig, AdamMoments, OlaadState, PerturbationDraw,
    SpsaOutcome,
};
pub use surrogate::{
    surrogate_detection_cost, surrogate_theta_cost, surrogate_total, SurrogateContext,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, GaussianSampler};

/// Attack parameters of one node: `z̃ = T z + b`, `b ~ N(M θ + d, UᵀU)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAttack {
    pub t: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl NodeAttack {
    /// `T = I`, `U = 0`, `M = 0`, `d = 0`: the attack that changes nothing.
    pub fn identity(obs_dim: usize, state_dim: usize) -> Self {
        Self {
            t: DMatrix::identity(obs_dim, obs_dim),
            u: DMatrix::zeros(obs_dim, obs_dim),
            m: DMatrix::zeros(obs_dim, state_dim),
            d: DVector::zeros(obs_dim),
        }
    }

    /// Bias covariance `S = UᵀU`.
    pub fn s(&self) -> DMatrix<f64> {
        self.u.transpose() * &self.u
    }

    pub fn bias_mean(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.m * theta + &self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackParams {
    pub nodes: Vec<NodeAttack>,
    /// Membership of each node in the attacked set.
    pub attacked: Vec<bool>,
    /// Keep every `T_k` at its current value.
    pub t_fixed: bool,
}

impl AttackParams {
    pub fn identity(obs_dims: &[usize], state_dim: usize, attacked: Vec<bool>, t_fixed: bool) -> Self {
        Self {
            nodes: obs_dims
                .iter()
                .map(|&m| NodeAttack::identity(m, state_dim))
                .collect(),
            attacked,
            t_fixed,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn free_blocks(&self, k: usize) -> impl Iterator<Item = Block> + '_ {
        let t_free = !self.t_fixed;
        [
            (Block::T, t_free),
            (Block::U, true),
            (Block::M, true),
            (Block::D, true),
        ]
        .into_iter()
        .filter(move |&(_, free)| free && self.attacked[k])
        .map(|(b, _)| b)
    }

    /// Number of entries SPSA updates.
    pub fn free_len(&self) -> usize {
        (0..self.len())
            .map(|k| {
                self.free_blocks(k)
                    .map(|b| b.slice(&self.nodes[k]).len())
                    .sum::<usize>()
            })
            .sum()
    }

    /// Free entries flattened node by node in `T, U, M, d` order
    /// (column-major within each matrix).
    pub fn free_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_len());
        for k in 0..self.len() {
            for b in self.free_blocks(k) {
                out.extend_from_slice(b.slice(&self.nodes[k]));
            }
        }
        out
    }

    pub fn set_free_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.free_len() {
            return Err(Error::dim("attack parameter vector", self.free_len(), values.len()));
        }
        let mut offset = 0;
        for k in 0..self.len() {
            let blocks: Vec<Block> = self.free_blocks(k).collect();
            for b in blocks {
                let dst = b.slice_mut(&mut self.nodes[k]);
                let n = dst.len();
                dst.copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    /// Draw entries aligned with [`Self::free_values`].
    pub fn free_perturbation(&self, draw: &PerturbationDraw) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_len());
        for k in 0..self.len() {
            for b in self.free_blocks(k) {
                let src: &[f64] = match b {
                    Block::T => draw.delta[k].as_slice(),
                    Block::U => draw.gamma[k].as_slice(),
                    Block::M => draw.pi[k].as_slice(),
                    Block::D => draw.beta[k].as_slice(),
                };
                out.extend_from_slice(src);
            }
        }
        out
    }

    pub fn snapshot(&self, lambda: f64, t: u64) -> AttackSnapshot {
        AttackSnapshot {
            t_mats: self.nodes.iter().map(|n| linalg::to_rows(&n.t)).collect(),
            u_mats: self.nodes.iter().map(|n| linalg::to_rows(&n.u)).collect(),
            m_mats: self.nodes.iter().map(|n| linalg::to_rows(&n.m)).collect(),
            d_vecs: self.nodes.iter().map(|n| n.d.iter().copied().collect()).collect(),
            lambda,
            t,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    T,
    U,
    M,
    D,
}

impl Block {
    fn slice(self, n: &NodeAttack) -> &[f64] {
        match self {
            Block::T => n.t.as_slice(),
            Block::U => n.u.as_slice(),
            Block::M => n.m.as_slice(),
            Block::D => n.d.as_slice(),
        }
    }

    fn slice_mut(self, n: &mut NodeAttack) -> &mut [f64] {
        match self {
            Block::T => n.t.as_mut_slice(),
            Block::U => n.u.as_mut_slice(),
            Block::M => n.m.as_mut_slice(),
            Block::D => n.d.as_mut_slice(),
        }
    }
}

/// Serialized attack parameters at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSnapshot {
    #[serde(rename = "T")]
    pub t_mats: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "U")]
    pub u_mats: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "M")]
    pub m_mats: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "d")]
    pub d_vecs: Vec<Vec<f64>>,
    pub lambda: f64,
    pub t: u64,
}

impl AttackSnapshot {
    pub fn into_params(self, attacked: Vec<bool>, t_fixed: bool) -> Result<AttackParams> {
        let n = self.t_mats.len();
        if [self.u_mats.len(), self.m_mats.len(), self.d_vecs.len(), attacked.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Config("attack snapshot has inconsistent node counts".into()));
        }
        let nodes = (0..n)
            .map(|k| {
                Ok(NodeAttack {
                    t: linalg::from_rows(&self.t_mats[k], "T")?,
                    u: linalg::from_rows(&self.u_mats[k], "U")?,
                    m: linalg::from_rows(&self.m_mats[k], "M")?,
                    d: DVector::from_vec(self.d_vecs[k].clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttackParams {
            nodes,
            attacked,
            t_fixed,
        })
    }
}

/// `z̃ = T z + b`.
pub fn apply_attack(z: &DVector<f64>, t: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if t.ncols() != z.len() || t.nrows() != b.len() {
        return Err(Error::dim("apply_attack", t.ncols(), z.len()));
    }
    Ok(t * z + b)
}

/// `b ~ N(M θ + d, S)`.
pub fn sample_bias<R: Rng + ?Sized>(
    m: &DMatrix<f64>,
    theta: &DVector<f64>,
    d: &DVector<f64>,
    s: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if m.ncols() != theta.len() || m.nrows() != d.len() || s.nrows() != d.len() {
        return Err(Error::dim("sample_bias", d.len(), m.nrows()));
    }
    let sampler = GaussianSampler::new(s, "S")?;
    Ok(m * theta + d + sampler.sample(rng))
}

/// `b ~ N(M θ + d, UᵀU)`, drawn as `M θ + d + Uᵀ ξ`.
pub fn sample_node_bias<R: Rng + ?Sized>(
    node: &NodeAttack,
    theta: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let xi = linalg::standard_normal(node.u.nrows(), rng);
    node.bias_mean(theta) + node.u.tr_mul(&xi)
}

/// `ỹ_k = z̃_k + H_k A x̂^(k)(t-1)`.
pub fn reconstruct_observation(
    z_tilde: &DVector<f64>,
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    x_hat_prev: &DVector<f64>,
) -> Result<DVector<f64>> {
    if h.nrows() != z_tilde.len() || h.ncols() != a.nrows() || a.ncols() != x_hat_prev.len() {
        return Err(Error::dim("reconstruct_observation", h.nrows(), z_tilde.len()));
    }
    Ok(z_tilde + h * (a * x_hat_prev))
}

/// Projected multiplier update
/// `λ ← clamp(λ + b_t (Σ_k z̃_kᵀ Σ_k⁻¹ z̃_k - αη/J), 0, λ_max)`.
pub fn lambda_step(
    lambda: f64,
    detection_stat: f64,
    step: f64,
    alpha: f64,
    eta: f64,
    window: usize,
    lambda_max: f64,
) -> f64 {
    let budget = detection_budget(alpha, eta, window);
    (lambda + step * (detection_stat - budget)).clamp(0.0, lambda_max)
}

/// Per-slot bound on the summed detection statistic, `αη/J`.
pub fn detection_budget(alpha: f64, eta: f64, window: usize) -> f64 {
    alpha * eta / window as f64
}
