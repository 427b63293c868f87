mod common;

use common::*;
use kcf_fdi::detection::DetectorState;
use kcf_fdi::harness::compute_deviations;
use kcf_fdi::linalg::min_eigenvalue;
use kcf_fdi::olaad::{
    apply_attack, detection_budget, draw_perturbations, lambda_step, spsa_step, surrogate_total, AdamConfig,
    AdamMoments, AttackParams,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_strategy(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0..10.0f64, n).prop_map(DVector::from_vec)
}

fn mat_strategy(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

/// Random attack parameters over a context with every node attacked.
fn random_params(data: &ContextData, t_fixed: bool, rng: &mut ChaCha8Rng) -> AttackParams {
    let q = data.system.state_dim();
    let obs: Vec<usize> = data.system.sensors.iter().map(|s| s.dim()).collect();
    let mut p = AttackParams::identity(&obs, q, vec![true; obs.len()], t_fixed);
    for (node, &m) in p.nodes.iter_mut().zip(&obs) {
        *node = random_attack(m, q, rng);
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attack_map_is_affine(z1 in vec_strategy(2), z2 in vec_strategy(2), b1 in vec_strategy(2),
                            b2 in vec_strategy(2), t in mat_strategy(2, 2), s in -2.0..2.0f64) {
        let lhs = apply_attack(&(&z1 * s + &z2), &t, &(&b1 * s + &b2)).unwrap();
        let rhs = apply_attack(&z1, &t, &b1).unwrap() * s + apply_attack(&z2, &t, &b2).unwrap();
        prop_assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn bias_covariance_is_psd(u in mat_strategy(3, 3)) {
        let s = u.transpose() * &u;
        prop_assert!(min_eigenvalue(&s) >= -1e-9 * (1.0 + s.amax()));
    }

    #[test]
    fn detector_alarms_are_monotone(values in prop::collection::vec(0.0..20.0f64, 1..40),
                                    bumps in prop::collection::vec(0.0..5.0f64, 40),
                                    window in 1usize..5, eta in 1.0..40.0f64) {
        let mut low = DetectorState::new(window, eta).unwrap();
        let mut high = DetectorState::new(window, eta).unwrap();
        for (v, b) in values.iter().zip(&bumps) {
            let a = low.push(*v);
            let c = high.push(v + b);
            prop_assert!(c.stat >= a.stat - 1e-12);
            prop_assert!(!a.alarm || c.alarm);
        }
    }

    #[test]
    fn lambda_stays_in_box(lambda in 0.0..100.0f64, stat in 0.0..1e4f64, step in 0.0..10.0f64,
                           alpha in 0.01..1.0f64, eta in 1.0..500.0f64, window in 1usize..6) {
        let next = lambda_step(lambda, stat, step, alpha, eta, window, 50.0);
        prop_assert!((0.0..=50.0).contains(&next));
        if stat <= detection_budget(alpha, eta, window) {
            prop_assert!(next <= lambda.min(50.0) + 1e-12);
        }
    }

    #[test]
    fn adaptive_lambda_stays_in_box(stats in prop::collection::vec(0.0..200.0f64, 1..50)) {
        let mut s = olaad_state(0.1, 0.01, 1.0, 1);
        s.lambda_max = 4.0;
        s.lambda_adam = Some(AdamMoments::new(AdamConfig::default(), 1));
        for (t, stat) in stats.iter().enumerate() {
            let l = s.update_lambda(t as u64 + 1, *stat, 0.3, 500.0, 3);
            prop_assert!((0.0..=4.0).contains(&l));
        }
    }

    #[test]
    fn deviations_are_nonnegative(xs in prop::collection::vec(vec_strategy(2), 1..20), x_star in vec_strategy(2)) {
        let traj: Vec<Vec<DVector<f64>>> = xs.chunks(2).map(|c| c.to_vec()).collect();
        let (dt, d0) = compute_deviations(&traj, &x_star);
        prop_assert!(dt >= 0.0 && d0 >= 0.0);
        let (dt0, d00) = compute_deviations(&traj, &DVector::zeros(2));
        prop_assert!((dt0 - d00).abs() <= 1e-12 * (1.0 + d00));
    }

    #[test]
    fn spsa_leaves_unattacked_nodes_alone(seed in 0u64..40, mask in 0usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_context(3, 1 + (seed % 2) as usize, 2, seed, &mut rng);
        let mut params = random_params(&data, false, &mut rng);
        params.attacked = (0..3).map(|k| mask >> k & 1 == 1).collect();
        let draw = draw_perturbations(&params, &mut rng);
        let mut state = olaad_state(0.1, 0.01, 2.0, data.system.state_dim());
        let out = spsa_step(&mut state, &params, &draw, &data.ctx()).unwrap();
        for k in 0..3 {
            if !params.attacked[k] {
                prop_assert_eq!(&out.params.nodes[k], &params.nodes[k]);
            }
        }
    }

    #[test]
    fn fixed_t_is_never_updated(seed in 0u64..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_context(2, 2, 2, seed, &mut rng);
        let params = random_params(&data, true, &mut rng);
        let draw = draw_perturbations(&params, &mut rng);
        let mut state = olaad_state(0.1, 0.01, 2.0, 2);
        let out = spsa_step(&mut state, &params, &draw, &data.ctx()).unwrap();
        for k in 0..2 {
            prop_assert_eq!(&out.params.nodes[k].t, &params.nodes[k].t);
        }
    }
}

/// The total surrogate is convex in the attack parameters for `λ ≥ 0`.
#[test]
fn surrogate_is_convex_along_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..20 {
        let data = random_context(1 + i % 3, 1 + i % 2, 1 + (i / 2) % 2, 200 + i as u64, &mut rng);
        let a = random_params(&data, false, &mut rng);
        let b = random_params(&data, false, &mut rng);
        let lambda = (i as f64) * 0.5;
        let (va, vb) = (a.free_values(), b.free_values());
        let at = |s: f64| {
            let mut p = a.clone();
            let v: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| (1.0 - s) * x + s * y).collect();
            p.set_free_values(&v).unwrap();
            surrogate_total(&p, lambda, &data.ctx())
        };
        let (fa, fb) = (at(0.0), at(1.0));
        for s in [0.25, 0.5, 0.75] {
            let chord = (1.0 - s) * fa + s * fb;
            assert!(at(s) <= chord + 1e-9 * (1.0 + chord.abs()), "segment {i} at {s}");
        }
    }
}

#[test]
fn perturbations_are_balanced_and_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut data_rng = ChaCha8Rng::seed_from_u64(6);
    let data = random_context(2, 2, 2, 6, &mut data_rng);
    let params = random_params(&data, false, &mut data_rng);
    let n = params.free_len();
    let draws = 10_000;
    let mut mean = vec![0.0; n];
    let mut cross = DMatrix::<f64>::zeros(n, n);
    for _ in 0..draws {
        let d = params.free_perturbation(&draw_perturbations(&params, &mut rng));
        assert!(d.iter().all(|x| x.abs() == 1.0));
        for i in 0..n {
            mean[i] += d[i] / draws as f64;
            for j in 0..n {
                cross[(i, j)] += d[i] * d[j] / draws as f64;
            }
        }
    }
    assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
    for i in 0..n {
        for j in 0..n {
            if i != j {
                assert!(cross[(i, j)].abs() < 0.05, "({i}, {j}) = {}", cross[(i, j)]);
            }
        }
    }
}

/// With all free entries of comparable gradient the averaged SPSA estimate
/// agrees with finite differences.
#[test]
fn averaged_spsa_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let data = random_context(1, 1, 1, 41, &mut rng);
    let mut params = AttackParams::identity(&[1], 1, vec![true], true);
    params.nodes[0].d[0] = 0.5;
    params.nodes[0].m[(0, 0)] = 0.2;
    params.nodes[0].u[(0, 0)] = 1.0;
    let ctx = data.ctx();
    let fd = finite_difference_gradient(&params, &ctx, 0.5);
    let spsa = mean_spsa_gradient(&params, &ctx, 0.5, 1e-3, 40_000, 1);
    let scale = fd.iter().map(|g| g.abs()).fold(0.0, f64::max);
    for (g, s) in fd.iter().zip(&spsa) {
        assert!((g - s).abs() < 0.05 * scale, "{fd:?} vs {spsa:?}");
    }
}

/// With the constraint slack negative throughout, a multiplier that starts at
/// zero stays there.
#[test]
fn multiplier_stays_at_zero_under_slack() {
    let mut lambda = 0.0;
    for t in 1..1000u64 {
        lambda = lambda_step(lambda, 10.0, 0.5 / (t as f64).powf(0.9), 0.3, 500.0, 3, 1e6);
        assert_eq!(lambda, 0.0);
    }
}
