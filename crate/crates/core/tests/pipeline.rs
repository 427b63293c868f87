use kcf_fdi::detection::DetectorState;
use kcf_fdi::harness::{self, ExperimentConfig, ModelSource, RunReport};
use kcf_fdi::kcf::{InnovationStats, KcfGains};
use kcf_fdi::model::{NetworkTopology, ProcessModel, SensorModel, System};
use kcf_fdi::olaad::{AttackMode, AttackParams, AttackRun, NodeAttack, OlaadState, RunStreams, Schedule};
use nalgebra::{dvector, DMatrix};

fn one(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn small_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::scalar_network(seed);
    c.total_iterations = 3_000;
    c.calibration.steps = 5_000;
    c.calibration.burn_in = 500;
    c.output.aggregate_window = 500;
    c
}

/// Noiseless single node, `A = H = 1`, `G = 1/2`, frozen attack
/// `T = 2, M = 1/2, d = 1, U = 0` with target 5. Two iterations by hand:
///
/// t = 1: θ = -5, z = 0, z̃ = 2·0 + (-2.5 + 1) = -1.5, x̂ = 0.5·(-1.5) = -0.75.
/// t = 2: θ = -5.75, z = 0.75, z̃ = 1.5 - 2.875 + 1 = -0.375,
///        ỹ = z̃ + x̄ = -1.125, x̂ = -0.75 + 0.5·(-0.375) = -0.9375.
#[test]
fn frozen_attack_matches_hand_trace() {
    let sys = System {
        process: ProcessModel::new(one(1.0), one(0.0)),
        sensors: vec![SensorModel::new(one(1.0), one(0.0))],
        topology: NetworkTopology::line(1),
        seed: 0,
    };
    let gains = KcfGains::new(vec![one(0.5)], vec![one(0.0)], vec![0]);
    let stats = InnovationStats::from_covariances(vec![one(1.0)]).unwrap();
    let mut params = AttackParams::identity(&[1], 1, vec![true], true);
    params.nodes[0] = NodeAttack {
        t: one(2.0),
        u: one(0.0),
        m: one(0.5),
        d: dvector![1.0],
    };
    let olaad = OlaadState {
        lambda: 7.0,
        lambda_max: 1e6,
        t: 0,
        a: Schedule::power_law(0.5, 0.6),
        b: Schedule::power_law(0.5, 0.9),
        c: Schedule::power_law(0.01, 0.1),
        adam: None,
        lambda_adam: None,
        clip: None,
        x_star: dvector![5.0],
        skipped: 0,
    };
    let detectors = vec![DetectorState::new(2, 0.5).unwrap()];
    let mut run = AttackRun::new(
        &sys,
        &gains,
        &stats,
        detectors,
        0.3,
        AttackMode::Frozen,
        params,
        olaad,
        &one(0.0),
        RunStreams::from_seed(0),
    )
    .unwrap();

    let r1 = run.step().unwrap();
    assert_eq!(r1.x_hat[0][0], -0.75);
    assert_eq!(r1.attack_stat, 2.25);
    assert_eq!(r1.node_stats[0], 2.25);
    assert!(!r1.alarms[0], "window not yet full");
    assert_eq!(r1.lambda, 7.0, "frozen runs keep λ");

    let r2 = run.step().unwrap();
    assert!((r2.x_hat[0][0] + 0.9375).abs() < 1e-15);
    assert!((r2.attack_stat - 0.140625).abs() < 1e-15);
    assert!((r2.window_stats[0] - 2.390625).abs() < 1e-15);
    assert!(r2.alarms[0]);
}

/// Two nodes on a line: the correction `x̂ = x̄ + G (y - H x̄) + C Σ_j (x̄_j - x̄)`
/// traced by hand from `x̂ = [2, -4]` and fixed observations.
#[test]
fn consensus_round_matches_hand_trace() {
    use kcf_fdi::kcf::{kcf_round, KcfNodeState};
    let sys = System {
        process: ProcessModel::new(one(0.5), one(0.0)),
        sensors: vec![SensorModel::new(one(1.0), one(0.0)), SensorModel::new(one(2.0), one(0.0))],
        topology: NetworkTopology::line(2),
        seed: 0,
    };
    let gains = KcfGains::new(vec![one(0.4), one(0.2)], vec![one(0.1), one(0.3)], vec![1, 1]);
    let mut states = vec![KcfNodeState::new(dvector![2.0]), KcfNodeState::new(dvector![-4.0])];
    kcf_round(&mut states, &[dvector![1.0], dvector![3.0]], &sys, &gains).unwrap();
    // x̄ = [1, -2]; node 0: 1 + 0.4 (1 - 1) + 0.1 (-2 - 1) = 0.7
    // node 1: -2 + 0.2 (3 + 4) + 0.3 (1 + 2) = 0.3
    assert!((states[0].x_hat[0] - 0.7).abs() < 1e-15);
    assert!((states[1].x_hat[0] - 0.3).abs() < 1e-15);
    assert_eq!(states[1].x_bar, dvector![-2.0]);
}

#[test]
fn outputs_replay_to_reported_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(3);
    c.output.dir = Some(dir.path().to_path_buf());
    c.output.checkpoint_interval = Some(1_000);
    let out = harness::run_experiment(&c).unwrap();
    let m = &out.report.metrics;
    let measured = c.total_iterations - c.measure_from();
    assert_eq!(m.measured_slots, measured);

    let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count() as u64, 1 + measured * 3);
    assert!(steps.starts_with("t,node,x_hat_0,theta_norm,stat,alarm,lambda\n"));
    let alarms = std::fs::read_to_string(dir.path().join("alarms.csv")).unwrap();
    assert_eq!(alarms.lines().count() as u64, 1 + measured * 3);
    let aggregate = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 1 + 6);
    let checkpoints: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("checkpoints.json")).unwrap()).unwrap();
    assert_eq!(checkpoints.as_array().unwrap().len(), 3);

    let summary: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(&summary, &out.report);

    let fdi = harness::replay(&dir.path().join("steps.csv"), &c.x_star).unwrap();
    let base = harness::replay(&dir.path().join("baseline_steps.csv"), &c.x_star).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    assert!(close(fdi.deviation_from_target, m.deviation_from_target.fdi));
    assert!(close(fdi.deviation_from_origin, m.deviation_from_origin.fdi));
    assert!(close(base.deviation_from_target, m.deviation_from_target.no_attack));
    assert!(close(base.deviation_from_origin, m.deviation_from_origin.no_attack));
    assert_eq!(fdi.detection_probability, m.detection_probability);
    assert_eq!(base.detection_probability, m.baseline_detection_probability);
    assert_eq!((fdi.slots as u64, fdi.nodes), (measured, 3));
}

#[test]
fn runs_are_deterministic_per_seed() {
    let a = harness::run_experiment(&small_config(9)).unwrap();
    let b = harness::run_experiment(&small_config(9)).unwrap();
    assert_eq!(a.report.metrics, b.report.metrics);
    assert_eq!(a.trace, b.trace);
    let c = harness::run_experiment(&small_config(10)).unwrap();
    assert_ne!(a.report.metrics.deviation_from_target, c.report.metrics.deviation_from_target);
}

#[test]
fn model_and_config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(4);
    let system = c.model.load().unwrap();
    let model_path = dir.path().join("model.json");
    system.save(&model_path).unwrap();
    assert_eq!(System::load(&model_path).unwrap(), system);

    let mut from_file = c.clone();
    from_file.model = ModelSource::File { path: model_path };
    let cfg_path = dir.path().join("config.json");
    from_file.save(&cfg_path).unwrap();
    let loaded = ExperimentConfig::load(&cfg_path).unwrap();
    assert_eq!(loaded, from_file);

    let direct = harness::run_experiment(&c).unwrap();
    let via_file = harness::run_experiment(&loaded).unwrap();
    assert_eq!(direct.report.metrics, via_file.report.metrics);
}

#[test]
fn sweep_reports_each_cell_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small_config(1);
    base.total_iterations = 1_200;
    let grid = harness::SweepGrid {
        alpha: vec![0.1, 0.3],
        window: vec![0, 3],
        ..Default::default()
    };
    let cells = harness::run_sweep(&base, &grid, Some(dir.path())).unwrap();
    assert_eq!(cells.len(), 4);
    for cell in &cells {
        assert_eq!(cell.error.is_some(), cell.window == 0, "{cell:?}");
        assert_eq!(cell.metrics.is_some(), cell.window == 3);
    }
    assert!(dir.path().join("sweep.json").exists());
    assert!(dir.path().join("cell_1/summary.json").exists());
}

#[test]
fn vector_instance_runs_end_to_end() {
    let mut c = ExperimentConfig::vector_network(2);
    c.total_iterations = 1_000;
    c.calibration.steps = 5_000;
    c.calibration.burn_in = 500;
    c.initial_covariance = Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let out = harness::run_experiment(&c).unwrap();
    assert_eq!(out.state_dim, 2);
    assert_eq!(out.trace.len(), 500 * 5);
    assert!(out.trace.iter().all(|r| r.x_hat.len() == 2));
    let snap = &out.report.metrics.final_attack;
    assert_eq!(snap.lambda, out.report.metrics.lambda.final_value);
}
