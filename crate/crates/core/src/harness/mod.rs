//! Experiment orchestration: configuration, paired baseline and attack runs,
//! metrics, and file output.

mod config;
mod output;
mod steps;
mod sweep;

pub use config::{ExperimentConfig, ModelSource, OutputConfig, Schedules};
pub use output::{emit_outputs, read_trace_csv, replay, write_trace_csv, ReplayReport, TRACE_FILE};
pub use steps::{validate_step_sizes, ConditionCheck, Verdict};
pub use sweep::{run_sweep, SweepCell, SweepGrid};

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::detection::{AlarmCounter, AlarmRecord, DetectorState};
use crate::error::{Result, StageExt};
use crate::kcf::{calibrate_innovation_covariance, synthesize_gains, CalibrationReport, InnovationStats, KcfGains};
use crate::model::System;
use crate::olaad::{
    detection_budget, AdamMoments, AttackMode, AttackParams, AttackRun, AttackSnapshot, IterationRecord, OlaadState,
    RunStreams,
};

/// `(1/|W|) Σ_t Σ_k ‖x̂^(k)(t) - x*‖²` and the same against the origin, over
/// every slot of `trajectory`.
pub fn compute_deviations(trajectory: &[Vec<DVector<f64>>], x_star: &DVector<f64>) -> (f64, f64) {
    let mut acc = DeviationAccumulator::default();
    for slot in trajectory {
        acc.record(slot, x_star);
    }
    acc.means()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeviationAccumulator {
    pub slots: u64,
    pub target_sum: f64,
    pub origin_sum: f64,
}

impl DeviationAccumulator {
    pub fn record(&mut self, estimates: &[DVector<f64>], x_star: &DVector<f64>) {
        self.slots += 1;
        for x in estimates {
            self.target_sum += (x - x_star).norm_squared();
            self.origin_sum += x.norm_squared();
        }
    }

    /// Time averages; zero for an empty window.
    pub fn means(&self) -> (f64, f64) {
        if self.slots == 0 {
            return (0.0, 0.0);
        }
        let n = self.slots as f64;
        (self.target_sum / n, self.origin_sum / n)
    }
}

/// One row of the per-step trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub node: usize,
    pub x_hat: Vec<f64>,
    pub theta_norm: f64,
    /// Detector input `ζᵀ Σ⁻¹ ζ` for the innovation the node saw.
    pub stat: f64,
    pub alarm: bool,
    pub lambda: f64,
}

/// Block-averaged deviations of both runs, ending at `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t_end: u64,
    pub dev_target_fdi: f64,
    pub dev_target_no_attack: f64,
    pub dev_origin_fdi: f64,
    pub dev_origin_no_attack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDeviation {
    pub fdi: f64,
    pub no_attack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub initial: f64,
    pub final_value: f64,
    pub min: f64,
    pub max: f64,
    /// Mean over the measurement window.
    pub mean: f64,
}

/// Everything in a report that is a function of (config, seed) alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub detection_probability: f64,
    pub node_alarm_rates: Vec<f64>,
    pub baseline_detection_probability: f64,
    pub deviation_from_target: PairedDeviation,
    pub deviation_from_origin: PairedDeviation,
    pub lambda: LambdaSummary,
    /// Mean of `Σ_k z̃_kᵀ Σ_k⁻¹ z̃_k` over the window, against the budget `α η / J`.
    pub mean_attack_stat: f64,
    pub detection_budget: f64,
    pub skipped_updates: u64,
    pub measured_slots: u64,
    pub step_size_checks: Vec<ConditionCheck>,
    pub calibration: CalibrationReport,
    pub gain_error_radius: f64,
    pub final_attack: AttackSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub wall_clock_secs: f64,
}

/// A finished experiment with its traces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: RunReport,
    pub state_dim: usize,
    pub trace: Vec<TraceRow>,
    pub baseline_trace: Vec<TraceRow>,
    pub aggregate: Vec<AggregateRow>,
    pub alarms: Vec<AlarmRecord>,
    pub checkpoints: Vec<AttackSnapshot>,
}

/// Calibrated, ready-to-run instance.
pub struct Prepared {
    pub system: System,
    pub gains: KcfGains,
    pub stats: InnovationStats,
    pub calibration: CalibrationReport,
}

/// Model, gains and innovation covariance for `config`.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate().stage("config")?;
    let system = config.model.load().stage("model")?;
    system.validate().stage("model")?;
    if config.x_star.len() != system.state_dim() {
        return Err(crate::Error::dim("x_star", system.state_dim(), config.x_star.len())).stage("config");
    }
    let gains = synthesize_gains(&system, config.consensus_scale, config.riccati).stage("gains")?;
    let p0 = config.initial_cov(&system).stage("config")?;
    let (stats, calibration) =
        calibrate_innovation_covariance(&system, &gains, config.calibration, &p0, config.seed).stage("calibration")?;
    Ok(Prepared {
        system,
        gains,
        stats,
        calibration,
    })
}

struct SideResult {
    acc: DeviationAccumulator,
    alarms: AlarmCounter,
    trace: Vec<TraceRow>,
    blocks: Vec<(u64, f64, f64)>,
    alarm_records: Vec<AlarmRecord>,
    checkpoints: Vec<AttackSnapshot>,
    attack_stat_sum: f64,
    lambda: LambdaSummary,
    skipped: u64,
    final_attack: AttackSnapshot,
}

fn trace_rows<'a>(rec: &'a IterationRecord, x_star: &DVector<f64>) -> impl Iterator<Item = TraceRow> + 'a {
    let x_star = x_star.clone();
    rec.x_hat.iter().enumerate().map(move |(k, x)| TraceRow {
        t: rec.t,
        node: k,
        x_hat: x.iter().copied().collect(),
        theta_norm: (x - &x_star).norm(),
        stat: rec.node_stats[k],
        alarm: rec.alarms[k],
        lambda: rec.lambda,
    })
}

fn run_side(config: &ExperimentConfig, prep: &Prepared, mode: AttackMode) -> Result<SideResult> {
    let sys = &prep.system;
    let n = sys.nodes();
    let x_star = DVector::from_vec(config.x_star.clone());
    let obs_dims: Vec<usize> = sys.sensors.iter().map(|s| s.dim()).collect();
    let params = AttackParams::identity(&obs_dims, sys.state_dim(), config.attacked_mask(n)?, config.t_fixed);
    let adam = config
        .adaptive
        .then(|| AdamMoments::new(config.adam, params.free_len()));
    let lambda_adam = config.adaptive.then(|| AdamMoments::new(config.adam, 1));
    let olaad = OlaadState {
        lambda: config.lambda0,
        lambda_max: config.lambda_max,
        t: 0,
        a: config.schedules.a.clone(),
        b: config.schedules.b.clone(),
        c: config.schedules.c.clone(),
        adam,
        lambda_adam,
        clip: config.gradient_clip,
        x_star: x_star.clone(),
        skipped: 0,
    };
    let detectors = (0..n)
        .map(|_| DetectorState::new(config.window, config.eta))
        .collect::<Result<Vec<_>>>()?;
    let p0 = config.initial_cov(sys)?;
    let mut run = AttackRun::new(
        sys,
        &prep.gains,
        &prep.stats,
        detectors,
        config.alpha,
        mode,
        params,
        olaad,
        &p0,
        RunStreams::from_seed(config.seed),
    )?;

    let measure_from = config.measure_from();
    let block = config.output.aggregate_window;
    let record = config.output.record_trace;
    let mut out = SideResult {
        acc: DeviationAccumulator::default(),
        alarms: AlarmCounter::new(n),
        trace: Vec::new(),
        blocks: Vec::new(),
        alarm_records: Vec::new(),
        checkpoints: Vec::new(),
        attack_stat_sum: 0.0,
        lambda: LambdaSummary {
            initial: config.lambda0,
            final_value: config.lambda0,
            min: config.lambda0,
            max: config.lambda0,
            mean: 0.0,
        },
        skipped: 0,
        final_attack: run.params().snapshot(config.lambda0, 0),
    };
    let mut block_acc = DeviationAccumulator::default();
    let mut lambda_sum = 0.0;
    for _ in 0..config.total_iterations {
        let rec = run.step()?;
        out.lambda.min = out.lambda.min.min(rec.lambda);
        out.lambda.max = out.lambda.max.max(rec.lambda);
        out.skipped += rec.skipped as u64;
        block_acc.record(&rec.x_hat, &x_star);
        if rec.t % block == 0 || rec.t == config.total_iterations {
            let (dt, d0) = block_acc.means();
            out.blocks.push((rec.t, dt, d0));
            block_acc = DeviationAccumulator::default();
        }
        if let Some(every) = config.output.checkpoint_interval {
            if every > 0 && rec.t % every == 0 && mode == AttackMode::Learning {
                out.checkpoints.push(run.params().snapshot(rec.lambda, rec.t));
            }
        }
        if rec.t <= measure_from {
            continue;
        }
        out.acc.record(&rec.x_hat, &x_star);
        out.alarms.record(&rec.alarms);
        out.attack_stat_sum += rec.attack_stat;
        lambda_sum += rec.lambda;
        if record {
            out.trace.extend(trace_rows(&rec, &x_star));
            out.alarm_records.extend(rec.window_stats.iter().zip(&rec.alarms).enumerate().map(
                |(k, (&stat, &alarm))| AlarmRecord {
                    t: rec.t,
                    node: k,
                    stat,
                    alarm,
                },
            ));
        }
    }
    out.lambda.final_value = run.olaad().lambda;
    out.lambda.mean = lambda_sum / out.acc.slots.max(1) as f64;
    out.final_attack = run.params().snapshot(run.olaad().lambda, run.t());
    Ok(out)
}

/// Runs the no-attack baseline and the attack run on the same process and
/// observation streams and reports metrics over `(measure_from, total]`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let step_size_checks = validate_step_sizes(&config.schedules).stage("schedules")?;
    let prep = prepare(config)?;
    let attack_mode = if config.attack_enabled {
        AttackMode::Learning
    } else {
        AttackMode::Frozen
    };
    let (base, atk) = rayon::join(
        || run_side(config, &prep, AttackMode::None).stage("baseline"),
        || run_side(config, &prep, attack_mode).stage("attack"),
    );
    let (base, atk) = (base?, atk?);

    let (dt_fdi, d0_fdi) = atk.acc.means();
    let (dt_none, d0_none) = base.acc.means();
    let slots = atk.acc.slots;
    let metrics = RunMetrics {
        detection_probability: atk.alarms.union_rate().stage("metrics")?,
        node_alarm_rates: atk.alarms.node_rates(),
        baseline_detection_probability: base.alarms.union_rate().stage("metrics")?,
        deviation_from_target: PairedDeviation {
            fdi: dt_fdi,
            no_attack: dt_none,
        },
        deviation_from_origin: PairedDeviation {
            fdi: d0_fdi,
            no_attack: d0_none,
        },
        lambda: atk.lambda,
        mean_attack_stat: atk.attack_stat_sum / slots.max(1) as f64,
        detection_budget: detection_budget(config.alpha, config.eta, config.window),
        skipped_updates: atk.skipped,
        measured_slots: slots,
        step_size_checks,
        calibration: prep.calibration.clone(),
        gain_error_radius: prep.gains.error_radius,
        final_attack: atk.final_attack,
    };
    let aggregate = atk
        .blocks
        .iter()
        .zip(&base.blocks)
        .map(|(&(t_end, dt_f, d0_f), &(_, dt_n, d0_n))| AggregateRow {
            t_end,
            dev_target_fdi: dt_f,
            dev_target_no_attack: dt_n,
            dev_origin_fdi: d0_f,
            dev_origin_no_attack: d0_n,
        })
        .collect();
    let output = ExperimentOutput {
        state_dim: prep.system.state_dim(),
        report: RunReport {
            seed: config.seed,
            metrics,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
        trace: atk.trace,
        baseline_trace: base.trace,
        aggregate,
        alarms: atk.alarm_records,
        checkpoints: atk.checkpoints,
    };
    if let Some(dir) = &config.output.dir {
        emit_outputs(&output, dir).stage("output")?;
    }
    Ok(output)
}
