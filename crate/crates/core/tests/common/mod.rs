#![allow(dead_code)]

use kcf_fdi::kcf::{synthesize_gains, InnovationStats, KcfGains, RiccatiOptions};
use kcf_fdi::linalg::{standard_normal, GaussianSampler};
use kcf_fdi::model::{RandomSystemSpec, System};
use kcf_fdi::olaad::{
    draw_perturbations, spsa_step, surrogate_total, AttackParams, NodeAttack, OlaadState, Schedule,
    SurrogateContext,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Owned data behind a [`SurrogateContext`].
pub struct ContextData {
    pub system: System,
    pub gains: KcfGains,
    pub stats: InnovationStats,
    pub theta_prev: Vec<DVector<f64>>,
    pub central_mean: DVector<f64>,
    pub central_cov: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl ContextData {
    pub fn ctx(&self) -> SurrogateContext<'_> {
        SurrogateContext {
            system: &self.system,
            gains: &self.gains,
            stats: &self.stats,
            theta_prev: &self.theta_prev,
            central_mean: &self.central_mean,
            central_cov: &self.central_cov,
            target: &self.target,
        }
    }
}

pub fn gaussian_matrix(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn gaussian_vector(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    standard_normal(n, rng) * scale
}

fn random_spd(m: usize, floor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let r = gaussian_matrix(m, m, 0.7, rng);
    &r * r.transpose() + DMatrix::identity(m, m) * floor
}

/// Random context with the given shape; the system is drawn from the
/// generator with `seed` and the rest from `rng`.
pub fn random_context(nodes: usize, q: usize, m: usize, seed: u64, rng: &mut ChaCha8Rng) -> ContextData {
    let system = RandomSystemSpec::new(nodes, q, m, seed).generate().unwrap();
    let gains = synthesize_gains(&system, 0.1, RiccatiOptions::default()).unwrap();
    let stats = InnovationStats::from_covariances((0..nodes).map(|_| random_spd(m, 0.3, rng)).collect()).unwrap();
    let target = DVector::from_fn(q, |_, _| rng.random_range(-5.0..5.0));
    ContextData {
        theta_prev: (0..nodes).map(|_| gaussian_vector(q, 2.0, rng)).collect(),
        central_mean: &target + gaussian_vector(q, 2.0, rng),
        central_cov: random_spd(q, 0.05, rng) * 0.3,
        target,
        system,
        gains,
        stats,
    }
}

pub fn random_attack(m: usize, q: usize, rng: &mut ChaCha8Rng) -> NodeAttack {
    NodeAttack {
        t: DMatrix::identity(m, m) + gaussian_matrix(m, m, 0.3, rng),
        u: gaussian_matrix(m, m, 0.5, rng),
        m: gaussian_matrix(m, q, 0.5, rng),
        d: gaussian_vector(m, 1.0, rng),
    }
}

pub struct MonteCarlo {
    pub theta_mean: f64,
    pub theta_se: f64,
    pub detection_mean: f64,
    pub detection_se: f64,
}

fn mean_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Simulates the one-step transition from the primitive definitions:
/// `x(t-1) ~ N(x̂, R)`, plant step, sensor noise, bias draw, attacked
/// innovation, delivered observation, and the node's consensus correction.
pub fn one_step_monte_carlo(
    data: &ContextData,
    k: usize,
    attack: &NodeAttack,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> MonteCarlo {
    let sys = &data.system;
    let a = &sys.process.transition;
    let sensor = &sys.sensors[k];
    let h = &sensor.observation;
    let x_prev = GaussianSampler::new(&data.central_cov, "R(t-1)").unwrap();
    let w = GaussianSampler::new(&sys.process.noise_cov, "Q").unwrap();
    let v = GaussianSampler::new(&sensor.noise_cov, "R_k").unwrap();
    let b_noise = GaussianSampler::new(&(attack.u.transpose() * &attack.u), "S").unwrap();

    let x_hat: Vec<DVector<f64>> = data.theta_prev.iter().map(|th| th + &data.target).collect();
    let bars: Vec<DVector<f64>> = x_hat.iter().map(|x| a * x).collect();
    let mut spread = DVector::zeros(a.nrows());
    for &j in sys.topology.neighbors(k) {
        spread += &bars[j] - &bars[k];
    }
    let g = &data.gains.kalman[k];
    let consensus = &data.gains.consensus[k] * spread;
    let bias_mean = &attack.m * &data.theta_prev[k] + &attack.d;
    let sigma_inv = &data.stats.sigma_inv[k];

    let (mut t_sum, mut t_sq, mut d_sum, mut d_sq) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let x0 = &data.central_mean + x_prev.sample(rng);
        let x1 = a * x0 + w.sample(rng);
        let y = h * x1 + v.sample(rng);
        let z = &y - h * &bars[k];
        let z_tilde = &attack.t * z + &bias_mean + b_noise.sample(rng);
        let y_tilde = &z_tilde + h * &bars[k];
        let x_new = &bars[k] + g * (y_tilde - h * &bars[k]) + &consensus;
        let th = (x_new - &data.target).norm_squared();
        let det = z_tilde.dot(&(sigma_inv * &z_tilde));
        t_sum += th;
        t_sq += th * th;
        d_sum += det;
        d_sq += det * det;
    }
    let (theta_mean, theta_se) = mean_se(t_sum, t_sq, samples);
    let (detection_mean, detection_se) = mean_se(d_sum, d_sq, samples);
    MonteCarlo {
        theta_mean,
        theta_se,
        detection_mean,
        detection_se,
    }
}

pub fn olaad_state(a: f64, c: f64, lambda: f64, q: usize) -> OlaadState {
    OlaadState {
        lambda,
        lambda_max: 1e6,
        t: 0,
        a: Schedule::power_law(a, 0.0),
        b: Schedule::power_law(0.1, 0.0),
        c: Schedule::power_law(c, 0.0),
        adam: None,
        lambda_adam: None,
        clip: None,
        x_star: DVector::zeros(q),
        skipped: 0,
    }
}

/// Mean of the raw SPSA gradient estimate over `draws` perturbations,
/// recovered from plain updates with unit step size.
pub fn mean_spsa_gradient(
    params: &AttackParams,
    ctx: &SurrogateContext<'_>,
    lambda: f64,
    c: f64,
    draws: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = params.free_values();
    let mut acc = vec![0.0; base.len()];
    for _ in 0..draws {
        let mut state = olaad_state(1.0, c, lambda, ctx.target.len());
        let draw = draw_perturbations(params, &mut rng);
        let out = spsa_step(&mut state, params, &draw, ctx).unwrap();
        for ((g, x0), x1) in acc.iter_mut().zip(&base).zip(out.params.free_values()) {
            *g += x0 - x1;
        }
    }
    acc.iter().map(|g| g / draws as f64).collect()
}

/// Central finite differences of the total surrogate over the free entries.
pub fn finite_difference_gradient(params: &AttackParams, ctx: &SurrogateContext<'_>, lambda: f64) -> Vec<f64> {
    let base = params.free_values();
    (0..base.len())
        .map(|i| {
            let h = 1e-4 * base[i].abs().max(1.0);
            let mut p = params.clone();
            let mut v = base.clone();
            v[i] = base[i] + h;
            p.set_free_values(&v).unwrap();
            let plus = surrogate_total(&p, lambda, ctx);
            v[i] = base[i] - h;
            p.set_free_values(&v).unwrap();
            let minus = surrogate_total(&p, lambda, ctx);
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// An alternative check that a value lies within `k` standard errors.
pub fn within_se(formula: f64, mean: f64, se: f64, k: f64) -> bool {
    (formula - mean).abs() <= k * se
}
