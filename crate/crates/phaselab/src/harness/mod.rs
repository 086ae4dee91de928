//! Experiment scenarios: parameter sweeps driving model -> estimators ->
//! metrics, jitter calibration, and CSV persistence.
//!
//! Every sweep point simulates its frames from substreams of a seed derived
//! from `(base seed, point index)`, and all reductions run in a fixed
//! order, so identical configurations produce byte-identical CSVs for any
//! worker count.

pub mod config;

use crate::estimators::{
    nfm_estimate, poisson_ml_estimate, single_param_ml_estimate, unconstrained_ml_phase,
    PhaseEstimate,
};
use crate::metrics::{
    bootstrap_replicates, bootstrap_stderr, dispersion, percentile_interval, BootstrapConfig,
    DispersionStat, EfficiencyPoint, MetricsError,
};
use crate::model::{derive_seed, frame_counts, wrap_phase, CountSample, ExperimentConfig};
use crate::theory::{self, TheoryPoint};
use rayon::prelude::*;
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub use config::{read_config, ConfigFile, ConfigFileError, GridSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] crate::model::ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Theory(#[from] crate::theory::TheoryError),
    #[error("empty {0} grid")]
    EmptyGrid(&'static str),
    #[error("no valid estimates ({0})")]
    NoValidEstimates(String),
    #[error("jitter calibration needs a phase-sweep result")]
    WrongScenario,
    #[error("estimator `{0}` carries no theory baseline to calibrate against")]
    NoBaseline(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Estimator variants the harness can run side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    Nfm,
    MlConstrained,
    MlUnconstrained,
    MlSingle,
}

impl EstimatorChoice {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorChoice::Nfm => "nfm",
            EstimatorChoice::MlConstrained => "ml",
            EstimatorChoice::MlUnconstrained => "ml_unconstr",
            EstimatorChoice::MlSingle => "ml1",
        }
    }
}

/// Per-frame phase estimates of all variants; NaN marks an invalid frame.
#[derive(Debug, Clone)]
pub struct FrameEstimates {
    pub nfm: Vec<f64>,
    pub ml_constrained: Vec<f64>,
    pub ml_unconstrained: Vec<f64>,
    pub ml_single: Vec<f64>,
}

impl FrameEstimates {
    pub fn by(&self, which: EstimatorChoice) -> &[f64] {
        match which {
            EstimatorChoice::Nfm => &self.nfm,
            EstimatorChoice::MlConstrained => &self.ml_constrained,
            EstimatorChoice::MlUnconstrained => &self.ml_unconstrained,
            EstimatorChoice::MlSingle => &self.ml_single,
        }
    }

    pub fn frames(&self) -> usize {
        self.nfm.len()
    }
}

fn theta_or_nan(e: PhaseEstimate) -> f64 {
    if e.valid {
        e.theta
    } else {
        f64::NAN
    }
}

/// Simulate all frames of a configuration and estimate each one with every
/// variant. Parallel over frames, bit-reproducible for any worker count.
pub fn simulate_estimates(cfg: &ExperimentConfig) -> FrameEstimates {
    let per_frame: Vec<[f64; 4]> = (0..cfg.frames)
        .into_par_iter()
        .map(|i| {
            let counts = frame_counts(cfg, i);
            [
                theta_or_nan(nfm_estimate(&counts)),
                theta_or_nan(poisson_ml_estimate(&counts)),
                unconstrained_ml_phase(&counts).unwrap_or(f64::NAN),
                theta_or_nan(single_param_ml_estimate(&counts)),
            ]
        })
        .collect();
    FrameEstimates {
        nfm: per_frame.iter().map(|f| f[0]).collect(),
        ml_constrained: per_frame.iter().map(|f| f[1]).collect(),
        ml_unconstrained: per_frame.iter().map(|f| f[2]).collect(),
        ml_single: per_frame.iter().map(|f| f[3]).collect(),
    }
}

// ---------------------------------------------------------------------------
// Shared bootstrap machinery over frame resamples
// ---------------------------------------------------------------------------

/// Unit vectors of a phase series, `(NaN, NaN)` for invalid frames.
fn unit_vectors(phases: &[f64]) -> Vec<(f64, f64)> {
    phases
        .iter()
        .map(|t| {
            if t.is_nan() {
                (f64::NAN, f64::NAN)
            } else {
                (t.cos(), t.sin())
            }
        })
        .collect()
}

fn dispersion_over(units: &[(f64, f64)], idx: &[usize]) -> f64 {
    let mut c = 0.0;
    let mut s = 0.0;
    let mut n = 0u64;
    for &i in idx {
        let (uc, us) = units[i];
        if uc.is_nan() {
            continue;
        }
        c += uc;
        s += us;
        n += 1;
    }
    if n == 0 {
        return f64::NAN;
    }
    let cm = c / n as f64;
    let sm = s / n as f64;
    (1.0 - (cm * cm + sm * sm)).clamp(0.0, 1.0)
}

/// Dispersion replicates for several estimators over shared frame
/// resamples; one index draw per replicate keeps the statistics paired.
fn paired_dispersion_replicates(
    units: &[Vec<(f64, f64)>],
    n_frames: usize,
    boot: &BootstrapConfig,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(boot.replicates); units.len()];
    bootstrap_replicates(
        n_frames,
        |idx| {
            for (k, u) in units.iter().enumerate() {
                out[k].push(dispersion_over(u, idx));
            }
            0.0
        },
        boot,
    )?;
    Ok(out)
}

fn finite(values: &[f64]) -> Vec<f64> {
    values.iter().copied().filter(|x| x.is_finite()).collect()
}

fn interval(reps: &[f64], point: f64, level: f64) -> (f64, f64) {
    let reps = finite(reps);
    if reps.is_empty() {
        return (point, point);
    }
    percentile_interval(&reps, point, level)
}

/// Dispersion statistic of one estimator series from its replicate set.
fn stat_from(
    phases: &[f64],
    reps: &[f64],
    level: f64,
    context: &str,
) -> Result<DispersionStat, HarnessError> {
    let valid = finite(phases);
    if valid.is_empty() {
        return Err(HarnessError::NoValidEstimates(context.to_string()));
    }
    let point = dispersion(&valid)?;
    let (ci_low, ci_high) = interval(reps, point, level);
    Ok(DispersionStat {
        sigma2: point,
        n_valid: valid.len() as u64,
        n_invalid: (phases.len() - valid.len()) as u64,
        ci_low,
        ci_high,
    })
}

// ---------------------------------------------------------------------------
// Sweep results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    IntensitySweep,
    WindowSweep,
    PhaseSweep,
    BiasSweep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Float(v) if v.is_nan() => write!(f, "nan"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Int(v) => write!(f, "{v}"),
        }
    }
}

impl Cell {
    pub fn as_f64(&self) -> f64 {
        match self {
            Cell::Float(v) => *v,
            Cell::Int(v) => *v as f64,
        }
    }
}

/// One sweep's table of results plus the base configuration that produced
/// it. Per-row parameters (the independent variable, frames, point seed)
/// are columns of the table itself.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub scenario: Scenario,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub config_echo: ExperimentConfig,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_f64()).collect())
    }
}

/// Write a sweep result as CSV.
pub fn write_results(result: &SweepResult, path: &Path) -> Result<(), HarnessError> {
    write_text(path, &result.to_csv())
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn push_stat(row: &mut Vec<Cell>, stat: &DispersionStat) {
    row.push(Cell::Float(stat.sigma2));
    row.push(Cell::Float(stat.ci_low));
    row.push(Cell::Float(stat.ci_high));
    row.push(Cell::Int(stat.n_invalid));
}

fn stat_header(header: &mut Vec<String>, prefix: &str) {
    for suffix in ["sigma2", "ci_low", "ci_high", "n_invalid"] {
        header.push(format!("{prefix}_{suffix}"));
    }
}

const POINT_SEED_TAG: u64 = 0x5EED_0001;
const BOOT_SEED_TAG: u64 = 0xB007_0001;

fn point_config(base: &ExperimentConfig, index: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed: derive_seed(base.seed, POINT_SEED_TAG ^ index),
        ..base.clone()
    }
}

fn point_bootstrap(boot: &BootstrapConfig, point_seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        seed: derive_seed(point_seed, BOOT_SEED_TAG),
        ..*boot
    }
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// Dispersion difference of the NFM and constrained-ML estimators across
/// input intensities. Frame counts scale like `1/N` below unit intensity
/// (floored at the base frame count) to keep the statistical error even.
pub fn run_intensity_sweep(
    base: &ExperimentConfig,
    intensity_grid: &[f64],
    boot: &BootstrapConfig,
) -> Result<SweepResult, HarnessError> {
    if intensity_grid.is_empty() {
        return Err(HarnessError::EmptyGrid("intensity"));
    }
    let mut header = vec!["intensity".to_string()];
    stat_header(&mut header, "nfm");
    stat_header(&mut header, "ml");
    header.extend(
        [
            "diff_sigma2",
            "diff_ci_low",
            "diff_ci_high",
            "diff_n_invalid",
            "rel_diff",
            "rel_diff_ci_low",
            "rel_diff_ci_high",
            "theory_nfm_asym",
            "theory_ml_unconstr_asym",
            "frames",
            "point_seed",
        ]
        .map(String::from),
    );

    let mut rows = Vec::with_capacity(intensity_grid.len());
    for (i, &n) in intensity_grid.iter().enumerate() {
        let mut cfg = point_config(base, i as u64);
        cfg.intensity = n;
        cfg.frames = base
            .frames
            .max((base.frames as f64 / n).round() as u64)
            .max(1);
        cfg.validate()?;
        let boot_i = point_bootstrap(boot, cfg.seed);
        let est = simulate_estimates(&cfg);

        // The difference statistics compare the estimators on the frames
        // valid for both; at very low intensity the valid sets diverge
        // (single-photon frames carry an NFM phase but no ML one) and
        // per-estimator dispersions would measure different populations.
        let mask = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| if y.is_nan() { f64::NAN } else { *x })
                .collect()
        };
        let common_nfm = mask(&est.nfm, &est.ml_constrained);
        let common_ml = mask(&est.ml_constrained, &est.nfm);
        let units = [
            unit_vectors(&est.nfm),
            unit_vectors(&est.ml_constrained),
            unit_vectors(&common_nfm),
            unit_vectors(&common_ml),
        ];
        let reps = paired_dispersion_replicates(&units, est.frames(), &boot_i)?;
        let nfm = stat_from(&est.nfm, &reps[0], boot_i.level, &format!("nfm at N={n}"))?;
        let ml = stat_from(
            &est.ml_constrained,
            &reps[1],
            boot_i.level,
            &format!("ml at N={n}"),
        )?;
        let nfm_common = stat_from(
            &common_nfm,
            &reps[2],
            boot_i.level,
            &format!("paired nfm at N={n}"),
        )?;
        let ml_common = stat_from(
            &common_ml,
            &reps[3],
            boot_i.level,
            &format!("paired ml at N={n}"),
        )?;

        let diff_point = nfm_common.sigma2 - ml_common.sigma2;
        let diff_reps: Vec<f64> = reps[2].iter().zip(&reps[3]).map(|(a, b)| a - b).collect();
        let (diff_lo, diff_hi) = interval(&diff_reps, diff_point, boot_i.level);
        let rel_point = diff_point / nfm_common.sigma2;
        let rel_reps: Vec<f64> = reps[2]
            .iter()
            .zip(&reps[3])
            .map(|(a, b)| (a - b) / a)
            .collect();
        let (rel_lo, rel_hi) = interval(&rel_reps, rel_point, boot_i.level);
        let either_invalid = nfm_common.n_invalid;

        let th_nfm = theory::nfm_asymptotic(n, cfg.visibility).unwrap_or(f64::NAN);
        let th_ml = theory::unconstrained_ml_asymptotic(n, cfg.visibility, cfg.true_phase)
            .unwrap_or(f64::NAN);

        let mut row = vec![Cell::Float(n)];
        push_stat(&mut row, &nfm);
        push_stat(&mut row, &ml);
        row.extend([
            Cell::Float(diff_point),
            Cell::Float(diff_lo),
            Cell::Float(diff_hi),
            Cell::Int(either_invalid),
            Cell::Float(rel_point),
            Cell::Float(rel_lo),
            Cell::Float(rel_hi),
            Cell::Float(th_nfm),
            Cell::Float(th_ml),
            Cell::Int(cfg.frames),
            Cell::Int(cfg.seed),
        ]);
        rows.push(row);
    }
    Ok(SweepResult {
        scenario: Scenario::IntensitySweep,
        header,
        rows,
        config_echo: base.clone(),
    })
}

/// Window-efficiency study: one frame set, hit frequencies of the NFM and
/// constrained-ML estimators and their difference per window width.
pub fn run_window_sweep(
    cfg: &ExperimentConfig,
    window_grid: &[f64],
    boot: &BootstrapConfig,
) -> Result<SweepResult, HarnessError> {
    if window_grid.is_empty() {
        return Err(HarnessError::EmptyGrid("window"));
    }
    cfg.validate()?;
    let est = simulate_estimates(cfg);
    // circular distances to the true phase, NaN for invalid frames
    let dist = |phases: &[f64]| -> Vec<f64> {
        phases
            .iter()
            .map(|t| {
                if t.is_nan() {
                    f64::NAN
                } else {
                    wrap_phase(t - cfg.true_phase).abs()
                }
            })
            .collect()
    };
    let d_g = dist(&est.nfm);
    let d_p = dist(&est.ml_constrained);
    let valid_g = finite(&d_g);
    let valid_p = finite(&d_p);
    if valid_g.is_empty() || valid_p.is_empty() {
        return Err(HarnessError::NoValidEstimates("window sweep".into()));
    }
    let hit = |dists: &[f64], idx: &[usize], w: f64| -> f64 {
        let mut hits = 0u64;
        let mut n = 0u64;
        for &i in idx {
            let d = dists[i];
            if d.is_nan() {
                continue;
            }
            n += 1;
            if d <= w {
                hits += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            hits as f64 / n as f64
        }
    };

    let header: Vec<String> = ["window", "f_g", "f_p", "delta_e", "stderr"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::with_capacity(window_grid.len());
    for (i, &w) in window_grid.iter().enumerate() {
        if !(w > 0.0 && w <= std::f64::consts::PI) {
            return Err(HarnessError::Metrics(MetricsError::BadWindow(w)));
        }
        let f_g = valid_g.iter().filter(|&&d| d <= w).count() as f64 / valid_g.len() as f64;
        let f_p = valid_p.iter().filter(|&&d| d <= w).count() as f64 / valid_p.len() as f64;
        let boot_i = point_bootstrap(boot, derive_seed(cfg.seed, i as u64));
        let reps = bootstrap_replicates(
            est.frames(),
            |idx| hit(&d_p, idx, w) - hit(&d_g, idx, w),
            &boot_i,
        )?;
        let point = EfficiencyPoint::new(w, f_g, f_p, bootstrap_stderr(&finite(&reps)));
        rows.push(vec![
            Cell::Float(point.window),
            Cell::Float(point.f_g),
            Cell::Float(point.f_p),
            Cell::Float(point.delta_e),
            Cell::Float(point.stderr),
        ]);
    }
    Ok(SweepResult {
        scenario: Scenario::WindowSweep,
        header,
        rows,
        config_echo: cfg.clone(),
    })
}

/// Asymptotic-regime comparison across true phases: dispersions of the NFM,
/// unconstrained-ML, and constrained-ML estimators with theory baselines.
pub fn run_phase_sweep(
    base: &ExperimentConfig,
    phase_grid: &[f64],
    boot: &BootstrapConfig,
) -> Result<SweepResult, HarnessError> {
    if phase_grid.is_empty() {
        return Err(HarnessError::EmptyGrid("phase"));
    }
    let mut header = vec!["phase".to_string()];
    stat_header(&mut header, "nfm");
    stat_header(&mut header, "ml_unconstr");
    stat_header(&mut header, "ml_constr");
    header.extend(
        [
            "constr_minus_unconstr",
            "constr_minus_unconstr_ci_low",
            "constr_minus_unconstr_ci_high",
            "theory_nfm_asym",
            "theory_ml_unconstr_asym",
            "frames",
            "point_seed",
        ]
        .map(String::from),
    );

    let mut rows = Vec::with_capacity(phase_grid.len());
    for (i, &theta) in phase_grid.iter().enumerate() {
        let mut cfg = point_config(base, i as u64);
        cfg.true_phase = theta;
        cfg.validate()?;
        let boot_i = point_bootstrap(boot, cfg.seed);
        let est = simulate_estimates(&cfg);

        let units = [
            unit_vectors(&est.nfm),
            unit_vectors(&est.ml_unconstrained),
            unit_vectors(&est.ml_constrained),
        ];
        let reps = paired_dispersion_replicates(&units, est.frames(), &boot_i)?;
        let ctx = |name: &str| format!("{name} at theta={theta}");
        let nfm = stat_from(&est.nfm, &reps[0], boot_i.level, &ctx("nfm"))?;
        let unc = stat_from(
            &est.ml_unconstrained,
            &reps[1],
            boot_i.level,
            &ctx("ml_unconstr"),
        )?;
        let con = stat_from(
            &est.ml_constrained,
            &reps[2],
            boot_i.level,
            &ctx("ml_constr"),
        )?;

        let excess_point = con.sigma2 - unc.sigma2;
        let excess_reps: Vec<f64> = reps[2].iter().zip(&reps[1]).map(|(c, u)| c - u).collect();
        let (ex_lo, ex_hi) = interval(&excess_reps, excess_point, boot_i.level);

        let th_nfm = theory::nfm_asymptotic(cfg.intensity, cfg.visibility).unwrap_or(f64::NAN);
        let th_unc = theory::unconstrained_ml_asymptotic(cfg.intensity, cfg.visibility, theta)
            .unwrap_or(f64::NAN);

        let mut row = vec![Cell::Float(theta)];
        push_stat(&mut row, &nfm);
        push_stat(&mut row, &unc);
        push_stat(&mut row, &con);
        row.extend([
            Cell::Float(excess_point),
            Cell::Float(ex_lo),
            Cell::Float(ex_hi),
            Cell::Float(th_nfm),
            Cell::Float(th_unc),
            Cell::Int(cfg.frames),
            Cell::Int(cfg.seed),
        ]);
        rows.push(row);
    }
    Ok(SweepResult {
        scenario: Scenario::PhaseSweep,
        header,
        rows,
        config_echo: base.clone(),
    })
}

/// Bias of the single-parameter estimator (which assumes unit visibility)
/// when the actual visibility differs, over a (visibility, phase) grid.
pub fn run_bias_sweep(
    base: &ExperimentConfig,
    visibility_grid: &[f64],
    phase_grid: &[f64],
    boot: &BootstrapConfig,
) -> Result<SweepResult, HarnessError> {
    if visibility_grid.is_empty() {
        return Err(HarnessError::EmptyGrid("visibility"));
    }
    if phase_grid.is_empty() {
        return Err(HarnessError::EmptyGrid("phase"));
    }
    let header: Vec<String> = [
        "visibility",
        "phase",
        "ml1_bias",
        "ml1_ci_low",
        "ml1_ci_high",
        "ml1_n_invalid",
        "frames",
        "point_seed",
    ]
    .map(String::from)
    .to_vec();

    let mut rows = Vec::new();
    let mut point_index = 0u64;
    for &v in visibility_grid {
        for &theta in phase_grid {
            let mut cfg = point_config(base, point_index);
            point_index += 1;
            cfg.visibility = v;
            cfg.true_phase = theta;
            cfg.validate()?;
            let boot_i = point_bootstrap(boot, cfg.seed);
            let est = simulate_estimates(&cfg);
            let valid = finite(&est.ml_single);
            if valid.is_empty() {
                return Err(HarnessError::NoValidEstimates(format!(
                    "ml1 at V={v}, theta={theta}"
                )));
            }
            let bias = crate::metrics::circular_bias(&valid, theta)?;
            let units = unit_vectors(&est.ml_single);
            let reps = bootstrap_replicates(
                est.frames(),
                |idx| {
                    let mut c = 0.0;
                    let mut s = 0.0;
                    let mut n = 0u64;
                    for &i in idx {
                        let (uc, us) = units[i];
                        if uc.is_nan() {
                            continue;
                        }
                        c += uc;
                        s += us;
                        n += 1;
                    }
                    if n == 0 || c.hypot(s) == 0.0 {
                        f64::NAN
                    } else {
                        wrap_phase(s.atan2(c) - theta)
                    }
                },
                &boot_i,
            )?;
            let (lo, hi) = interval(&reps, bias, boot_i.level);
            let n_invalid = (est.frames() - valid.len()) as u64;
            rows.push(vec![
                Cell::Float(v),
                Cell::Float(theta),
                Cell::Float(bias),
                Cell::Float(lo),
                Cell::Float(hi),
                Cell::Int(n_invalid),
                Cell::Int(cfg.frames),
                Cell::Int(cfg.seed),
            ]);
        }
    }
    Ok(SweepResult {
        scenario: Scenario::BiasSweep,
        header,
        rows,
        config_echo: base.clone(),
    })
}

// ---------------------------------------------------------------------------
// Jitter calibration
// ---------------------------------------------------------------------------

/// Result of the jitter fit. `clipped_negative` flags a grid whose mean
/// observed-minus-theory excess came out negative (no jitter resolvable).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterCalibration {
    pub sigma: f64,
    pub uncertainty: f64,
    pub clipped_negative: bool,
}

/// Estimate the per-frame phase jitter from a phase sweep.
///
/// Dispersion contributions add for small angles, so the fit is
/// `sigma = sqrt(mean over the grid of max(0, observed - theory))`, with the
/// uncertainty from a bootstrap over grid points.
pub fn calibrate_jitter(
    observed: &SweepResult,
    estimator: EstimatorChoice,
    boot: &BootstrapConfig,
) -> Result<JitterCalibration, HarnessError> {
    if observed.scenario != Scenario::PhaseSweep {
        return Err(HarnessError::WrongScenario);
    }
    let (obs_col, th_col) = match estimator {
        EstimatorChoice::Nfm => ("nfm_sigma2", "theory_nfm_asym"),
        EstimatorChoice::MlUnconstrained => ("ml_unconstr_sigma2", "theory_ml_unconstr_asym"),
        other => return Err(HarnessError::NoBaseline(other.name())),
    };
    let obs = observed
        .column(obs_col)
        .ok_or(HarnessError::WrongScenario)?;
    let th = observed.column(th_col).ok_or(HarnessError::WrongScenario)?;
    let excess: Vec<f64> = obs.iter().zip(&th).map(|(o, t)| o - t).collect();
    if excess.iter().any(|x| !x.is_finite()) {
        return Err(HarnessError::NoValidEstimates(
            "calibration needs finite theory baselines".into(),
        ));
    }
    let fit = |values: &[f64]| -> f64 {
        let m = values.iter().map(|x| x.max(0.0)).sum::<f64>() / values.len() as f64;
        m.sqrt()
    };
    let raw_mean = excess.iter().sum::<f64>() / excess.len() as f64;
    let boot_cfg = BootstrapConfig {
        seed: derive_seed(observed.config_echo.seed, BOOT_SEED_TAG ^ 0xCA11),
        ..*boot
    };
    let reps = bootstrap_replicates(
        excess.len(),
        |idx| {
            let resampled: Vec<f64> = idx.iter().map(|&i| excess[i]).collect();
            fit(&resampled)
        },
        &boot_cfg,
    )?;
    let uncertainty = bootstrap_stderr(&finite(&reps));
    if raw_mean < 0.0 {
        return Ok(JitterCalibration {
            sigma: 0.0,
            uncertainty,
            clipped_negative: true,
        });
    }
    Ok(JitterCalibration {
        sigma: fit(&excess),
        uncertainty,
        clipped_negative: false,
    })
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

const COUNTS_HEADER: &str = "frame,n3,n4,n5,n6";
const ESTIMATES_HEADER: &str = "frame,method,theta,visibility,valid,boundary";
const METRICS_HEADER: &str = "key,value,ci_low,ci_high,n_valid,n_invalid";
const THEORY_HEADER: &str = "formula,intensity,visibility,phase,value";

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Scientific notation with 13 significant digits, for phase columns.
fn fmt_phase(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.12e}")
    }
}

pub fn counts_to_csv(counts: &[CountSample]) -> String {
    let mut out = String::with_capacity(counts.len() * 16 + 24);
    out.push_str(COUNTS_HEADER);
    out.push('\n');
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{}\n", c.n3, c.n4, c.n5, c.n6));
    }
    out
}

pub fn write_counts_csv(counts: &[CountSample], path: &Path) -> Result<(), HarnessError> {
    write_text(path, &counts_to_csv(counts))
}

/// Strict counts reader: exact header, five fields per row, 0-based
/// strictly increasing frame indices.
pub fn read_counts_csv(path: &Path) -> Result<Vec<(u64, CountSample)>, HarnessError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: display.clone(),
        source,
    })?;
    let err = |line: usize, reason: String| HarnessError::Csv {
        path: display.clone(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == COUNTS_HEADER => {}
        Some((_, h)) => {
            return Err(err(
                1,
                format!("bad header `{h}` (expected `{COUNTS_HEADER}`)"),
            ))
        }
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    let mut last_frame: Option<u64> = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 5 {
            return Err(err(
                line,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let parsed: Result<Vec<u64>, _> = fields.iter().map(|f| f.trim().parse::<u64>()).collect();
        let v = parsed.map_err(|_| err(line, format!("non-integer field in `{raw}`")))?;
        match last_frame {
            None if v[0] != 0 => return Err(err(line, "frame indices must start at 0".into())),
            Some(prev) if v[0] <= prev => {
                return Err(err(line, "frame indices must be strictly increasing".into()))
            }
            _ => {}
        }
        last_frame = Some(v[0]);
        rows.push((
            v[0],
            CountSample {
                n3: v[1],
                n4: v[2],
                n5: v[3],
                n6: v[4],
            },
        ));
    }
    Ok(rows)
}

pub fn estimates_to_csv(rows: &[(u64, PhaseEstimate)]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + 48);
    out.push_str(ESTIMATES_HEADER);
    out.push('\n');
    for (frame, e) in rows {
        let vis = e.visibility_hat.map_or("nan".to_string(), fmt_float);
        out.push_str(&format!(
            "{frame},{},{},{vis},{},{}\n",
            e.method.tag(),
            fmt_phase(e.theta),
            u8::from(e.valid),
            u8::from(e.on_boundary),
        ));
    }
    out
}

pub fn write_estimates_csv(
    rows: &[(u64, PhaseEstimate)],
    out: &mut dyn std::io::Write,
) -> std::io::Result<()> {
    out.write_all(estimates_to_csv(rows).as_bytes())
}

/// One row of the generic metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub key: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_valid: u64,
    pub n_invalid: u64,
}

pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.key,
            fmt_float(r.value),
            fmt_float(r.ci_low),
            fmt_float(r.ci_high),
            r.n_valid,
            r.n_invalid
        ));
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<(), HarnessError> {
    write_text(path, &metrics_to_csv(rows))
}

pub fn theory_to_csv(points: &[TheoryPoint]) -> String {
    let mut out = String::from(THEORY_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.formula.tag(),
            fmt_float(p.intensity),
            fmt_float(p.visibility),
            fmt_float(p.phase),
            fmt_float(p.value)
        ));
    }
    out
}

/// Run a closure inside a dedicated rayon pool of the requested size.
/// Outputs do not depend on the worker count; this only controls resources.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("worker pool")
            .install(f),
    }
}
