use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kcf_fdi::harness::{self, ExperimentConfig, ModelSource, SweepGrid};
use kcf_fdi::kcf::{calibrate_innovation_covariance, synthesize_gains};
use kcf_fdi::model::RandomSystemSpec;
use kcf_fdi::{Error, Result, StageExt};

/// Fallback output directory when neither the config nor `--out-dir` sets one.
const OUT_DIR_ENV: &str = "KCF_FDI_OUT_DIR";

#[derive(Parser)]
#[command(name = "kcf-fdi", version, about = "Attacks on Kalman consensus filtering networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random system and write it as JSON.
    Generate(GenerateArgs),
    /// Estimate the no-attack innovation covariances of a system.
    Calibrate(CalibrateArgs),
    /// Run the paired no-attack and attack experiment.
    Run(RunArgs),
    /// Run a grid of experiments in parallel.
    Sweep(SweepArgs),
    /// Recompute deviation and detection metrics from a step trace.
    Replay(ReplayArgs),
    /// Check the step-size schedules of a configuration.
    Schedules(ConfigArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 3)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    state_dim: usize,
    #[arg(long, default_value_t = 2)]
    obs_dim: usize,
    #[arg(long, default_value_t = 0.95)]
    spectral_radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Three nodes, scalar state.
    Scalar,
    /// Five nodes, two-dimensional state.
    Vector,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value = "scalar")]
    preset: Preset,
    /// Model JSON replacing the configured model source.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    total_iterations: Option<u64>,
    #[arg(long)]
    measure_from: Option<u64>,
    #[arg(long)]
    calibration_steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    consensus_scale: Option<f64>,
    #[arg(long)]
    attack_enabled: Option<bool>,
    #[arg(long)]
    adaptive: Option<bool>,
    #[arg(long)]
    t_fixed: Option<bool>,
    /// Comma-separated attacked node indices.
    #[arg(long, value_delimiter = ',')]
    attacked: Option<Vec<usize>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    record_trace: Option<bool>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON grid file with optional `alpha`, `eta`, `window`, `schedules`, `seeds` arrays.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    etas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    windows: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Step trace CSV written by `run`.
    trace: PathBuf,
    /// Comma-separated target state.
    #[arg(long, value_delimiter = ',', required = true)]
    x_star: Vec<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path).stage("config")?,
            None => match self.preset {
                Preset::Scalar => ExperimentConfig::scalar_network(self.seed.unwrap_or(0)),
                Preset::Vector => ExperimentConfig::vector_network(self.seed.unwrap_or(0)),
            },
        };
        if let Some(p) = &self.model {
            c.model = ModelSource::File { path: p.clone() };
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            alpha => c.alpha,
            eta => c.eta,
            window => c.window,
            lambda0 => c.lambda0,
            total_iterations => c.total_iterations,
            calibration_steps => c.calibration.steps,
            burn_in => c.calibration.burn_in,
            consensus_scale => c.consensus_scale,
            attack_enabled => c.attack_enabled,
            adaptive => c.adaptive,
            t_fixed => c.t_fixed,
            record_trace => c.output.record_trace,
        }
        if self.measure_from.is_some() {
            c.measure_from = self.measure_from;
        }
        if self.attacked.is_some() {
            c.attacked_set = self.attacked.clone();
        }
        if self.checkpoint_interval.is_some() {
            c.output.checkpoint_interval = self.checkpoint_interval;
        }
        if let Some(d) = &self.out_dir {
            c.output.dir = Some(d.clone());
        } else if c.output.dir.is_none() {
            c.output.dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
        }
        Ok(c)
    }
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                // A closed pipe (`| head`) is not an error worth reporting.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let spec = RandomSystemSpec {
                spectral_radius: a.spectral_radius,
                ..RandomSystemSpec::new(a.nodes, a.state_dim, a.obs_dim, a.seed)
            };
            let system = spec.generate().stage("model")?;
            match &a.out {
                Some(path) => system.save(path).stage("output"),
                None => print_json(&kcf_fdi::model::ModelDocument::from_system(&system), None),
            }
        }
        Command::Calibrate(a) => {
            let c = a.config.resolve()?;
            let system = c.model.load().stage("model")?;
            system.validate().stage("model")?;
            let gains = synthesize_gains(&system, c.consensus_scale, c.riccati).stage("gains")?;
            let p0 = c.initial_cov(&system).stage("config")?;
            let (_, report) = calibrate_innovation_covariance(&system, &gains, c.calibration, &p0, c.seed)
                .stage("calibration")?;
            print_json(&report, a.out.as_deref()).stage("output")
        }
        Command::Run(a) => {
            let c = a.config.resolve()?;
            let out = harness::run_experiment(&c)?;
            print_json(&out.report, None)
        }
        Command::Sweep(a) => {
            let base = a.config.resolve()?;
            let mut grid = match &a.grid {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    });
                    let text = text.stage("config")?;
                    serde_json::from_str::<SweepGrid>(&text)
                        .map_err(|e| Error::Json {
                            path: path.clone(),
                            source: e,
                        })
                        .stage("config")?
                }
                None => SweepGrid::default(),
            };
            grid.alpha.extend(a.alphas);
            grid.eta.extend(a.etas);
            grid.window.extend(a.windows);
            grid.seeds.extend(a.seeds);
            let cells = harness::run_sweep(&base, &grid, base.output.dir.as_deref())?;
            print_json(&cells, None)?;
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            if failed > 0 {
                return Err(Error::Config(format!("{failed} of {} sweep cells failed", cells.len()))).stage("sweep");
            }
            Ok(())
        }
        Command::Replay(a) => {
            let report = harness::replay(&a.trace, &a.x_star).stage("replay")?;
            print_json(&report, None)
        }
        Command::Schedules(a) => {
            let c = a.resolve()?;
            let checks = harness::validate_step_sizes(&c.schedules).stage("schedules")?;
            print_json(&checks, None)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
