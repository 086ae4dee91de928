//! Circular statistics over sets of phase estimates.
//!
//! Dispersion is `1 - |<e^{i theta}>|^2`, the compact circular analogue of
//! variance. Resultant-vector sums for point estimates use compensated
//! (Neumaier) summation so that reductions are reproducible regardless of
//! how the caller chunks the work.

use crate::model::wrap_phase;
use crate::model::{derive_seed, substream};
use rand::Rng;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty phase sequence")]
    Empty,
    #[error("resultant vector vanishes; circular mean undefined")]
    ZeroResultant,
    #[error("phase window {0} outside (0, pi]")]
    BadWindow(f64),
    #[error("bootstrap needs at least 200 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
}

/// Monte Carlo dispersion with bootstrap confidence bounds and
/// invalid-sample accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionStat {
    pub sigma2: f64,
    pub n_valid: u64,
    pub n_invalid: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Window width with the two hit frequencies and their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyPoint {
    pub window: f64,
    pub f_g: f64,
    pub f_p: f64,
    pub delta_e: f64,
    pub stderr: f64,
}

impl EfficiencyPoint {
    pub fn new(window: f64, f_g: f64, f_p: f64, stderr: f64) -> Self {
        EfficiencyPoint {
            window,
            f_g,
            f_p,
            delta_e: efficiency_difference(f_p, f_g),
            stderr,
        }
    }
}

/// Compensated (Neumaier) summation.
fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean resultant vector `(<cos>, <sin>)`.
fn mean_resultant(phases: &[f64]) -> Result<(f64, f64), MetricsError> {
    if phases.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = phases.len() as f64;
    let c = neumaier_sum(phases.iter().map(|t| t.cos())) / n;
    let s = neumaier_sum(phases.iter().map(|t| t.sin())) / n;
    Ok((c, s))
}

/// Point dispersion `1 - |<e^{i theta}>|^2`, clamped to [0, 1].
pub fn dispersion(phases: &[f64]) -> Result<f64, MetricsError> {
    let (c, s) = mean_resultant(phases)?;
    Ok((1.0 - (c * c + s * s)).clamp(0.0, 1.0))
}

/// Angle of the mean resultant relative to the true phase, in `(-pi, pi]`.
pub fn circular_bias(phases: &[f64], true_phase: f64) -> Result<f64, MetricsError> {
    let (c, s) = mean_resultant(phases)?;
    if c.hypot(s) < 1e-9 {
        return Err(MetricsError::ZeroResultant);
    }
    Ok(wrap_phase(s.atan2(c) - true_phase))
}

/// Fraction of phases whose circular distance to the true phase is at most
/// the window half-width.
pub fn hit_frequency(phases: &[f64], true_phase: f64, window: f64) -> Result<f64, MetricsError> {
    if phases.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(window > 0.0 && window <= PI) {
        return Err(MetricsError::BadWindow(window));
    }
    let hits = phases
        .iter()
        .filter(|&&t| wrap_phase(t - true_phase).abs() <= window)
        .count();
    Ok(hits as f64 / phases.len() as f64)
}

/// Difference in window-hit efficiency of the Poissonian-ML and NFM
/// estimations, `f_p - f_g`.
pub fn efficiency_difference(f_p: f64, f_g: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&f_p) && (0.0..=1.0).contains(&f_g));
    f_p - f_g
}

/// Bootstrap settings; the default level matches 68% error bars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 400,
            level: 0.68,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.replicates < 200 {
            return Err(MetricsError::TooFewReplicates(self.replicates));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(MetricsError::BadLevel(self.level));
        }
        Ok(())
    }

    /// Same settings, decorrelated seed.
    pub fn reseeded(&self, tag: u64) -> Self {
        BootstrapConfig {
            seed: derive_seed(self.seed, tag),
            ..*self
        }
    }
}

/// Replicate statistics over resampled index sets.
///
/// Each replicate draws `n_items` indices with replacement from
/// `0..n_items` and evaluates the statistic on that multiset. Deterministic
/// for a given seed; the generic index form supports paired statistics that
/// must resample frames once and evaluate several estimators on them.
pub fn bootstrap_replicates<F>(
    n_items: usize,
    mut replicate_stat: F,
    cfg: &BootstrapConfig,
) -> Result<Vec<f64>, MetricsError>
where
    F: FnMut(&[usize]) -> f64,
{
    if n_items == 0 {
        return Err(MetricsError::Empty);
    }
    cfg.validate()?;
    let mut rng = substream(cfg.seed, 0xB005);
    let mut indices = vec![0usize; n_items];
    let mut stats = Vec::with_capacity(cfg.replicates);
    for _ in 0..cfg.replicates {
        for slot in indices.iter_mut() {
            *slot = rng.gen_range(0..n_items);
        }
        stats.push(replicate_stat(&indices));
    }
    Ok(stats)
}

/// Linear-interpolation percentile of unsorted data, q in [0, 1].
fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = q * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        values[lo]
    } else {
        let w = rank - lo as f64;
        values[lo] * (1.0 - w) + values[hi] * w
    }
}

/// Percentile interval of the replicate set around a point statistic.
///
/// The point statistic joins the replicate set and the bounds are widened to
/// contain it, so `low <= point <= high` always holds.
pub fn percentile_interval(replicates: &[f64], point: f64, level: f64) -> (f64, f64) {
    let mut all: Vec<f64> = replicates.to_vec();
    all.push(point);
    let alpha = (1.0 - level) / 2.0;
    let lo = percentile(&mut all, alpha);
    let hi = percentile(&mut all.clone(), 1.0 - alpha);
    (lo.min(point), hi.max(point))
}

/// Percentile bootstrap interval of a statistic over resampled value sets.
pub fn bootstrap_interval<F>(
    values: &[f64],
    statistic: F,
    cfg: &BootstrapConfig,
) -> Result<(f64, f64), MetricsError>
where
    F: Fn(&[f64]) -> f64,
{
    let point = statistic(values);
    let mut scratch = vec![0.0f64; values.len()];
    let reps = bootstrap_replicates(
        values.len(),
        |idx| {
            for (slot, &i) in scratch.iter_mut().zip(idx) {
                *slot = values[i];
            }
            statistic(&scratch)
        },
        cfg,
    )?;
    Ok(percentile_interval(&reps, point, cfg.level))
}

/// Standard deviation of a replicate set (bootstrap standard error).
pub fn bootstrap_stderr(replicates: &[f64]) -> f64 {
    if replicates.len() < 2 {
        return 0.0;
    }
    let n = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / n;
    let var = replicates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// Dispersion of a phase set with a bootstrap confidence interval.
///
/// `n_invalid` is carried through for frame accounting; invalid estimates
/// must already be excluded from `phases`.
pub fn circular_dispersion(
    phases: &[f64],
    n_invalid: u64,
    cfg: &BootstrapConfig,
) -> Result<DispersionStat, MetricsError> {
    let sigma2 = dispersion(phases)?;
    // resample precomputed unit vectors; plain sums suffice for replicates
    let unit: Vec<(f64, f64)> = phases.iter().map(|t| (t.cos(), t.sin())).collect();
    let n = unit.len() as f64;
    let reps = bootstrap_replicates(
        unit.len(),
        |idx| {
            let mut c = 0.0;
            let mut s = 0.0;
            for &i in idx {
                c += unit[i].0;
                s += unit[i].1;
            }
            c /= n;
            s /= n;
            (1.0 - (c * c + s * s)).clamp(0.0, 1.0)
        },
        cfg,
    )?;
    let (ci_low, ci_high) = percentile_interval(&reps, sigma2, cfg.level);
    Ok(DispersionStat {
        sigma2,
        n_valid: phases.len() as u64,
        n_invalid,
        ci_low,
        ci_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dispersion_point_masses() {
        assert_eq!(dispersion(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let d = dispersion(&[0.0, PI / 2.0, PI, 1.5 * PI]).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let d = dispersion(&[0.0, PI / 2.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert_eq!(dispersion(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn bias_examples() {
        let phases = vec![0.8; 50];
        assert!(circular_bias(&phases, 0.8).unwrap().abs() < 1e-12);
        let sym = vec![0.8 + 0.4, 0.8 - 0.4];
        assert!(circular_bias(&sym, 0.8).unwrap().abs() < 1e-12);
        // opposing unit vectors: no direction
        assert_eq!(
            circular_bias(&[0.0, PI], 0.3),
            Err(MetricsError::ZeroResultant)
        );
    }

    #[test]
    fn hit_frequency_examples() {
        let tp = 1.1;
        assert_eq!(hit_frequency(&[tp; 9], tp, 0.2).unwrap(), 1.0);
        let phases = [tp + 0.1, tp - 0.2, tp + 1.0];
        assert!((hit_frequency(&phases, tp, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // wrap-around distance: |-3.1 - 3.1| mod 2 pi is about 0.083
        assert_eq!(hit_frequency(&[-3.1], 3.1, 0.1).unwrap(), 1.0);
        assert!(hit_frequency(&[], 0.0, 0.5).is_err());
        assert_eq!(
            hit_frequency(&[0.0], 0.0, 0.0),
            Err(MetricsError::BadWindow(0.0))
        );
        assert!(hit_frequency(&[0.0], 0.0, 3.5).is_err());
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency_difference(0.5, 0.5), 0.0);
        assert!((efficiency_difference(0.56, 0.50) - 0.06).abs() < 1e-15);
        assert_eq!(efficiency_difference(0.0, 1.0), -1.0);
    }

    #[test]
    fn bootstrap_constant_data() {
        let values = vec![0.7f64; 300];
        let cfg = BootstrapConfig::default();
        let (lo, hi) = bootstrap_interval(&values, |v| dispersion(v).unwrap(), &cfg).unwrap();
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let values: Vec<f64> = (0..500).map(|i| (i as f64 * 0.618).sin() * 0.3).collect();
        let cfg = BootstrapConfig {
            seed: 42,
            ..Default::default()
        };
        let a = bootstrap_interval(&values, |v| dispersion(v).unwrap(), &cfg).unwrap();
        let b = bootstrap_interval(&values, |v| dispersion(v).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_rejects_bad_settings() {
        let values = vec![0.1f64; 10];
        let few = BootstrapConfig {
            replicates: 50,
            ..Default::default()
        };
        assert_eq!(
            bootstrap_interval(&values, |v| v[0], &few),
            Err(MetricsError::TooFewReplicates(50))
        );
        let bad = BootstrapConfig {
            level: 1.0,
            ..Default::default()
        };
        assert_eq!(
            bootstrap_interval(&values, |v| v[0], &bad),
            Err(MetricsError::BadLevel(1.0))
        );
        assert!(bootstrap_interval(&[], |_| 0.0, &BootstrapConfig::default()).is_err());
    }

    #[test]
    fn bootstrap_width_shrinks_with_sample_size() {
        use rand::Rng as _;
        // dispersion interval width drops roughly like 1/sqrt(m)
        let make = |m: usize, seed: u64| -> Vec<f64> {
            let mut rng = substream(seed, 0);
            (0..m)
                .map(|_| {
                    let u: f64 = rng.gen();
                    (u - 0.5) * 1.2
                })
                .collect()
        };
        let cfg = BootstrapConfig {
            seed: 9,
            ..Default::default()
        };
        let small = make(2_000, 3);
        let large = make(8_000, 4);
        let (lo_s, hi_s) = bootstrap_interval(&small, |v| dispersion(v).unwrap(), &cfg).unwrap();
        let (lo_l, hi_l) = bootstrap_interval(&large, |v| dispersion(v).unwrap(), &cfg).unwrap();
        let ratio = (hi_l - lo_l) / (hi_s - lo_s);
        assert!(
            (0.3..0.75).contains(&ratio),
            "width ratio {ratio} not near 1/2"
        );
    }

    #[test]
    fn dispersion_stat_bookkeeping() {
        let phases: Vec<f64> = (0..400).map(|i| 0.3 + 0.01 * (i as f64).sin()).collect();
        let cfg = BootstrapConfig::default();
        let stat = circular_dispersion(&phases, 17, &cfg).unwrap();
        assert_eq!(stat.n_valid, 400);
        assert_eq!(stat.n_invalid, 17);
        assert!(stat.ci_low <= stat.sigma2 && stat.sigma2 <= stat.ci_high);
        assert!((0.0..=1.0).contains(&stat.sigma2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dispersion_rotation_invariant(
            base in proptest::collection::vec(-PI..PI, 2..60),
            shift in -6.0f64..6.0,
        ) {
            let rotated: Vec<f64> = base.iter().map(|t| t + shift).collect();
            let a = dispersion(&base).unwrap();
            let b = dispersion(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn hit_frequency_monotone_in_window(
            phases in proptest::collection::vec(-PI..PI, 1..50),
            tp in -PI..PI,
            w1 in 0.01f64..PI,
            w2 in 0.01f64..PI,
        ) {
            let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
            let f_lo = hit_frequency(&phases, tp, lo).unwrap();
            let f_hi = hit_frequency(&phases, tp, hi).unwrap();
            prop_assert!(f_lo <= f_hi);
            prop_assert_eq!(hit_frequency(&phases, tp, PI).unwrap(), 1.0);
        }

        #[test]
        fn efficiency_antisymmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            prop_assert_eq!(efficiency_difference(a, b), -efficiency_difference(b, a));
            prop_assert_eq!(efficiency_difference(a, a), 0.0);
        }

        #[test]
        fn interval_contains_point(
            values in proptest::collection::vec(-1.0f64..1.0, 5..80),
            seed in 0u64..1000,
        ) {
            let cfg = BootstrapConfig { seed, replicates: 200, level: 0.68 };
            let stat = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let point = stat(&values);
            let (lo, hi) = bootstrap_interval(&values, stat, &cfg).unwrap();
            prop_assert!(lo <= point && point <= hi);
        }
    }
}
