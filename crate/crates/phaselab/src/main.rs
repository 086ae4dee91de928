//! Command-line interface: simulation, estimation on count files, the sweep
//! scenarios, theory evaluation, and jitter calibration. Data goes to files
//! or stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error,
//! 3 numerical failure (e.g. an empty valid-estimate set).

use clap::{Args, Parser, Subcommand, ValueEnum};
use phaselab::estimators::{nfm_estimate, poisson_ml_estimate, single_param_ml_estimate};
use phaselab::harness::{
    self,
    config::{self, ConfigFile, GridSpec},
    EstimatorChoice, HarnessError, MetricRow,
};
use phaselab::metrics::{self, BootstrapConfig, MetricsError};
use phaselab::model::simulate_counts;
use phaselab::theory::{self, Formula};
use std::path::{Path, PathBuf};

const SEED_ENV: &str = "PHASELAB_SEED";

#[derive(Parser)]
#[command(
    name = "phaselab",
    version,
    about = "Monte Carlo laboratory for four-channel interferometric phase estimation"
)]
struct Cli {
    /// Worker threads for frame-parallel simulation (default: all cores).
    /// Never affects the outputs, only the wall time.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate count frames and write the counts CSV
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output counts CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one estimator to a counts CSV
    Estimate {
        /// Estimator: nfm, ml (constrained), or ml1 (visibility fixed at 1)
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Input counts CSV
        #[arg(long = "in")]
        input: PathBuf,
        /// Output estimates CSV (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        /// True phase for summary metrics; pi fractions accepted
        #[arg(long)]
        true_phase: Option<String>,
        /// Phase window half-width for the summary hit frequency
        #[arg(long)]
        window: Option<String>,
        /// Write dispersion/bias/hit-frequency metrics CSV here
        #[arg(long)]
        summary_out: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        replicates: usize,
        #[arg(long, default_value_t = 0.68)]
        ci_level: f64,
        /// Bootstrap seed for the summary (fallback: PHASELAB_SEED, then 0)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dispersion difference of NFM and constrained ML across intensities
    SweepIntensity {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hit-frequency difference across phase-window widths
    Efficiency {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Asymptotic dispersions across true phases, with theory baselines
    SweepPhase {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias of the single-parameter estimator across actual visibilities
    Bias {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a closed-form theory baseline
    Theory {
        #[arg(long, value_enum)]
        formula: FormulaArg,
        #[arg(long)]
        intensity: f64,
        #[arg(long, default_value_t = 1.0)]
        visibility: f64,
        /// Phase in radians; pi fractions accepted
        #[arg(long, default_value = "0")]
        phase: String,
        /// Also write a one-row theory CSV here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a phase sweep and fit the per-frame phase jitter
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Estimator whose dispersions drive the fit
        #[arg(long, value_enum, default_value_t = CalibratorArg::Nfm)]
        estimator: CalibratorArg,
        /// Output metrics CSV (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Nfm,
    Ml,
    Ml1,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(alias = "direct_poisson")]
    DirectPoisson,
    #[value(alias = "weak_pulse")]
    WeakPulse,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulaArg {
    Nfm,
    MlUnconstr,
    MlConstr,
    Crlb,
    Fisher,
    SingleParam,
}

impl FormulaArg {
    fn formula(self) -> Formula {
        match self {
            FormulaArg::Nfm => Formula::NfmAsym,
            FormulaArg::MlUnconstr => Formula::MlUnconstrAsym,
            FormulaArg::MlConstr => Formula::MlConstrAsym,
            FormulaArg::Crlb => Formula::CrlbAsym,
            FormulaArg::Fisher => Formula::FisherExact,
            FormulaArg::SingleParam => Formula::SingleParamAsym,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum CalibratorArg {
    Nfm,
    MlUnconstr,
}

/// Experiment parameters: a config file plus flag overrides. Flags win.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines, `#` comments)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mean photons per frame per quadrature pair (N)
    #[arg(long)]
    intensity: Option<f64>,
    /// Fringe visibility in [0, 1]
    #[arg(long)]
    visibility: Option<f64>,
    /// True phase in radians; pi fractions accepted (e.g. pi/3)
    #[arg(long)]
    true_phase: Option<String>,
    /// Frames to simulate
    #[arg(long)]
    frames: Option<u64>,
    /// RNG seed (fallback: config file, then PHASELAB_SEED)
    #[arg(long)]
    seed: Option<u64>,
    /// Std. deviation of per-frame Gaussian phase jitter, radians
    #[arg(long)]
    jitter_sigma: Option<f64>,
    #[arg(long, value_enum)]
    sampling_mode: Option<ModeArg>,
    /// Pulses accumulated per frame in weak-pulse mode
    #[arg(long)]
    pulses_per_frame: Option<u64>,
    /// Intensity grid: `lo:hi:count[:log]` or a comma list
    #[arg(long)]
    grid_intensity: Option<String>,
    /// Window grid for the efficiency scenario
    #[arg(long)]
    grid_window: Option<String>,
    /// Phase grid for the phase-sweep/bias/calibrate scenarios
    #[arg(long)]
    grid_phase: Option<String>,
    /// Actual-visibility grid for the bias scenario
    #[arg(long)]
    grid_visibility: Option<String>,
    /// Bootstrap replicates per confidence interval
    #[arg(long, default_value_t = 400)]
    replicates: usize,
    /// Bootstrap confidence level in (0, 1)
    #[arg(long, default_value_t = 0.68)]
    ci_level: f64,
}

enum AppError {
    Usage(String),
    Config(String),
    Numerical(String),
}

impl AppError {
    fn code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Config(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Config(m) | AppError::Numerical(m) => m,
        }
    }
}

impl From<config::ConfigFileError> for AppError {
    fn from(e: config::ConfigFileError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<phaselab::ConfigError> for AppError {
    fn from(e: phaselab::ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<theory::TheoryError> for AppError {
    fn from(e: theory::TheoryError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<MetricsError> for AppError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Empty | MetricsError::ZeroResultant => AppError::Numerical(e.to_string()),
            _ => AppError::Config(e.to_string()),
        }
    }
}

impl From<HarnessError> for AppError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::NoValidEstimates(_) => AppError::Numerical(e.to_string()),
            HarnessError::Metrics(m) => m.into(),
            other => AppError::Config(other.to_string()),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            e.print().expect("write clap error");
            std::process::exit(code);
        }
    };
    let workers = cli.workers;
    match harness::with_workers(workers, || dispatch(cli.command)) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), AppError> {
    match cmd {
        Cmd::Simulate { cfg, out } => simulate_cmd(&cfg, &out),
        Cmd::Estimate {
            method,
            input,
            out,
            true_phase,
            window,
            summary_out,
            replicates,
            ci_level,
            seed,
        } => estimate_cmd(
            method,
            &input,
            out.as_deref(),
            true_phase.as_deref(),
            window.as_deref(),
            summary_out.as_deref(),
            replicates,
            ci_level,
            seed,
        ),
        Cmd::SweepIntensity { cfg, out } => {
            let (exp, boot) = cfg.resolve()?;
            let grid = cfg.grid(&cfg.grid_intensity, |f| f.grid_intensity.clone(), || {
                config::default_intensity_grid()
            })?;
            let result = harness::run_intensity_sweep(&exp, &grid.points(), &boot)?;
            harness::write_results(&result, &out)?;
            eprintln!(
                "intensity sweep: {} points written to {}",
                result.rows.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Efficiency { cfg, out } => {
            let (exp, boot) = cfg.resolve()?;
            let grid = cfg.grid(&cfg.grid_window, |f| f.grid_window.clone(), || {
                config::default_window_grid()
            })?;
            let result = harness::run_window_sweep(&exp, &grid.points(), &boot)?;
            harness::write_results(&result, &out)?;
            eprintln!(
                "efficiency sweep: {} windows written to {}",
                result.rows.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::SweepPhase { cfg, out } => {
            let (exp, boot) = cfg.resolve()?;
            let grid = cfg.grid(&cfg.grid_phase, |f| f.grid_phase.clone(), || {
                config::default_phase_grid()
            })?;
            let result = harness::run_phase_sweep(&exp, &grid.points(), &boot)?;
            harness::write_results(&result, &out)?;
            eprintln!(
                "phase sweep: {} points written to {}",
                result.rows.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Bias { cfg, out } => {
            let (exp, boot) = cfg.resolve()?;
            let v_grid = cfg.grid(&cfg.grid_visibility, |f| f.grid_visibility.clone(), || {
                config::default_visibility_grid()
            })?;
            let p_grid = cfg.grid(&cfg.grid_phase, |f| f.grid_phase.clone(), || {
                config::default_phase_grid()
            })?;
            let result =
                harness::run_bias_sweep(&exp, &v_grid.points(), &p_grid.points(), &boot)?;
            harness::write_results(&result, &out)?;
            eprintln!(
                "bias sweep: {} grid points written to {}",
                result.rows.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Theory {
            formula,
            intensity,
            visibility,
            phase,
            out,
        } => {
            let phase = parse_phase_flag(&phase)?;
            let point = theory::evaluate(formula.formula(), intensity, visibility, phase)?;
            println!("{}", point.value);
            if let Some(path) = out {
                write_or_config_err(&path, &harness::theory_to_csv(&[point]))?;
            }
            Ok(())
        }
        Cmd::Calibrate {
            cfg,
            estimator,
            out,
        } => {
            let (exp, boot) = cfg.resolve()?;
            let grid = cfg.grid(&cfg.grid_phase, |f| f.grid_phase.clone(), || {
                config::default_phase_grid()
            })?;
            let sweep = harness::run_phase_sweep(&exp, &grid.points(), &boot)?;
            let which = match estimator {
                CalibratorArg::Nfm => EstimatorChoice::Nfm,
                CalibratorArg::MlUnconstr => EstimatorChoice::MlUnconstrained,
            };
            let fit = harness::calibrate_jitter(&sweep, which, &boot)?;
            if fit.clipped_negative {
                eprintln!("warning: mean dispersion excess is negative; no jitter resolvable");
            }
            eprintln!(
                "jitter_sigma = {} +- {} rad ({} estimator)",
                fit.sigma,
                fit.uncertainty,
                which.name()
            );
            let rows = vec![MetricRow {
                key: "jitter_sigma".into(),
                value: fit.sigma,
                ci_low: (fit.sigma - fit.uncertainty).max(0.0),
                ci_high: fit.sigma + fit.uncertainty,
                n_valid: sweep.rows.len() as u64,
                n_invalid: 0,
            }];
            match out {
                Some(path) => harness::write_metrics_csv(&rows, &path)?,
                None => print!("{}", harness::metrics_to_csv(&rows)),
            }
            Ok(())
        }
    }
}

fn simulate_cmd(cfg: &ConfigArgs, out: &Path) -> Result<(), AppError> {
    let (exp, _) = cfg.resolve()?;
    let counts = simulate_counts(&exp);
    harness::write_counts_csv(&counts, out)?;
    eprintln!("simulated {} frames to {}", counts.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn estimate_cmd(
    method: MethodArg,
    input: &Path,
    out: Option<&Path>,
    true_phase: Option<&str>,
    window: Option<&str>,
    summary_out: Option<&Path>,
    replicates: usize,
    ci_level: f64,
    seed: Option<u64>,
) -> Result<(), AppError> {
    let counts = harness::read_counts_csv(input)?;
    let apply = match method {
        MethodArg::Nfm => nfm_estimate,
        MethodArg::Ml => poisson_ml_estimate,
        MethodArg::Ml1 => single_param_ml_estimate,
    };
    let rows: Vec<_> = counts.iter().map(|(f, c)| (*f, apply(c))).collect();
    let text = harness::estimates_to_csv(&rows);
    match out {
        Some(path) => write_or_config_err(path, &text)?,
        None => print!("{text}"),
    }

    if let Some(summary_path) = summary_out {
        let phases: Vec<f64> = rows
            .iter()
            .filter(|(_, e)| e.valid)
            .map(|(_, e)| e.theta)
            .collect();
        let n_invalid = (rows.len() - phases.len()) as u64;
        let seed = match seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        let boot = BootstrapConfig {
            replicates,
            level: ci_level,
            seed,
        };
        let stat = metrics::circular_dispersion(&phases, n_invalid, &boot)?;
        let mut summary = vec![MetricRow {
            key: format!("dispersion_{}", method_tag(method)),
            value: stat.sigma2,
            ci_low: stat.ci_low,
            ci_high: stat.ci_high,
            n_valid: stat.n_valid,
            n_invalid: stat.n_invalid,
        }];
        if let Some(tp_text) = true_phase {
            let tp = parse_phase_flag(tp_text)?;
            let bias = metrics::circular_bias(&phases, tp)?;
            let (blo, bhi) = metrics::bootstrap_interval(
                &phases,
                |v| metrics::circular_bias(v, tp).unwrap_or(f64::NAN),
                &boot,
            )?;
            summary.push(MetricRow {
                key: format!("bias_{}", method_tag(method)),
                value: bias,
                ci_low: blo,
                ci_high: bhi,
                n_valid: stat.n_valid,
                n_invalid: stat.n_invalid,
            });
            if let Some(w_text) = window {
                let w = parse_phase_flag(w_text)?;
                let f = metrics::hit_frequency(&phases, tp, w)?;
                let (flo, fhi) = metrics::bootstrap_interval(
                    &phases,
                    |v| metrics::hit_frequency(v, tp, w).unwrap_or(f64::NAN),
                    &boot,
                )?;
                summary.push(MetricRow {
                    key: format!("hit_frequency_{}", method_tag(method)),
                    value: f,
                    ci_low: flo,
                    ci_high: fhi,
                    n_valid: stat.n_valid,
                    n_invalid: stat.n_invalid,
                });
            }
        }
        harness::write_metrics_csv(&summary, summary_path)?;
        eprintln!("summary metrics written to {}", summary_path.display());
    }
    Ok(())
}

fn method_tag(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Nfm => "nfm",
        MethodArg::Ml => "ml",
        MethodArg::Ml1 => "ml1",
    }
}

fn parse_phase_flag(text: &str) -> Result<f64, AppError> {
    config::parse_number(text).map_err(AppError::Usage)
}

fn env_seed() -> Result<Option<u64>, AppError> {
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse::<u64>().map(Some).map_err(|_| {
            AppError::Config(format!("{SEED_ENV} must be an unsigned 64-bit integer"))
        }),
        Err(_) => Ok(None),
    }
}

fn write_or_config_err(path: &Path, text: &str) -> Result<(), AppError> {
    std::fs::write(path, text)
        .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

impl ConfigArgs {
    /// Merge config file, flags, and the environment seed fallback.
    fn resolve(&self) -> Result<(phaselab::ExperimentConfig, BootstrapConfig), AppError> {
        let (mut file, label) = match &self.config {
            Some(path) => (ConfigFile::read(path)?, path.display().to_string()),
            None => (ConfigFile::default(), "<flags>".to_string()),
        };
        if let Some(v) = self.intensity {
            file.intensity = Some(v);
        }
        if let Some(v) = self.visibility {
            file.visibility = Some(v);
        }
        if let Some(text) = &self.true_phase {
            file.true_phase = Some(parse_phase_flag(text)?);
        }
        if let Some(v) = self.frames {
            file.frames = Some(v);
        }
        if let Some(v) = self.seed {
            file.seed = Some(v);
        }
        if let Some(v) = self.jitter_sigma {
            file.jitter_sigma = Some(v);
        }
        if let Some(mode) = self.sampling_mode {
            file.sampling_mode = Some(match mode {
                ModeArg::DirectPoisson => phaselab::SamplingMode::DirectPoisson,
                ModeArg::WeakPulse => phaselab::SamplingMode::WeakPulse,
            });
        }
        if let Some(v) = self.pulses_per_frame {
            file.pulses_per_frame = Some(v);
        }
        if file.seed.is_none() {
            file.seed = env_seed()?;
        }
        let exp = file.experiment(&label)?;
        let boot = BootstrapConfig {
            replicates: self.replicates,
            level: self.ci_level,
            seed: exp.seed,
        };
        boot.validate().map_err(|e| AppError::Config(e.to_string()))?;
        Ok((exp, boot))
    }

    /// Grid precedence: flag text, then config file, then scenario default.
    fn grid(
        &self,
        flag: &Option<String>,
        from_file: impl Fn(&ConfigFile) -> Option<GridSpec>,
        default: impl Fn() -> GridSpec,
    ) -> Result<GridSpec, AppError> {
        if let Some(text) = flag {
            return GridSpec::parse(text).map_err(AppError::Usage);
        }
        if let Some(path) = &self.config {
            let file = ConfigFile::read(path)?;
            if let Some(g) = from_file(&file) {
                return Ok(g);
            }
        }
        Ok(default())
    }
}
