//! Channel statistics of the four-output interferometric detection scheme
//! and the Monte Carlo photocount generator.
//!
//! A frame is one repetition of the measurement yielding four counts
//! `(n3, n4, n5, n6)`. Frames are generated from per-frame RNG substreams
//! derived from `(seed, frame index)`, so a sweep parallelized over frames
//! produces exactly the same counts as a sequential run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

/// Validation failure for physical experiment parameters.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parameter `{name}` out of range: {value} (expected {constraint})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
}

/// How raw counts for one frame are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Each channel count is a single Poisson draw with the channel mean.
    DirectPoisson,
    /// Each frame is accumulated from many weak pulses seen by binary
    /// (non-photon-resolving) detectors.
    WeakPulse,
}

/// All controlled parameters of one simulated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Mean photons per frame per quadrature pair (N).
    pub intensity: f64,
    /// Fringe visibility in [0, 1].
    pub visibility: f64,
    /// True interferometer phase in radians.
    pub true_phase: f64,
    /// Number of frames to simulate.
    pub frames: u64,
    /// Base RNG seed; frame `i` uses substream `i`.
    pub seed: u64,
    /// Standard deviation of the per-frame Gaussian phase fluctuation, radians.
    pub jitter_sigma: f64,
    pub sampling_mode: SamplingMode,
    /// Pulses accumulated per frame (weak-pulse mode only).
    pub pulses_per_frame: u64,
}

impl ExperimentConfig {
    /// Direct-Poisson configuration with no jitter.
    pub fn new(
        intensity: f64,
        visibility: f64,
        true_phase: f64,
        frames: u64,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let cfg = Self {
            intensity,
            visibility,
            true_phase,
            frames,
            seed,
            jitter_sigma: 0.0,
            sampling_mode: SamplingMode::DirectPoisson,
            pulses_per_frame: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.intensity > 0.0 && self.intensity.is_finite()) {
            return Err(ConfigError::OutOfRange {
                name: "intensity",
                value: self.intensity,
                constraint: "> 0",
            });
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(ConfigError::OutOfRange {
                name: "visibility",
                value: self.visibility,
                constraint: "in [0, 1]",
            });
        }
        if !self.true_phase.is_finite() {
            return Err(ConfigError::OutOfRange {
                name: "true_phase",
                value: self.true_phase,
                constraint: "finite",
            });
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(ConfigError::OutOfRange {
                name: "jitter_sigma",
                value: self.jitter_sigma,
                constraint: ">= 0",
            });
        }
        if self.frames == 0 {
            return Err(ConfigError::OutOfRange {
                name: "frames",
                value: 0.0,
                constraint: ">= 1",
            });
        }
        if self.pulses_per_frame == 0 {
            return Err(ConfigError::OutOfRange {
                name: "pulses_per_frame",
                value: 0.0,
                constraint: ">= 1",
            });
        }
        Ok(())
    }
}

/// Mean photocounts per frame for the four output channels.
///
/// `m3 + m4 == m5 + m6 == intensity` holds exactly: the minus channels are
/// computed as complements so the sums cannot drift in floating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMeans {
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
    pub m6: f64,
}

/// One detected frame of four photon counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountSample {
    pub n3: u64,
    pub n4: u64,
    pub n5: u64,
    pub n6: u64,
}

impl CountSample {
    pub fn total(&self) -> u64 {
        self.n3 + self.n4 + self.n5 + self.n6
    }
}

/// Mean channel intensities for a given phase:
/// `m3,4 = N/2 (1 ± V cos θ)`, `m5,6 = N/2 (1 ± V sin θ)`.
pub fn channel_means(
    true_phase: f64,
    intensity: f64,
    visibility: f64,
) -> Result<ChannelMeans, ConfigError> {
    if !(intensity > 0.0 && intensity.is_finite()) {
        return Err(ConfigError::OutOfRange {
            name: "intensity",
            value: intensity,
            constraint: "> 0",
        });
    }
    if !(0.0..=1.0).contains(&visibility) {
        return Err(ConfigError::OutOfRange {
            name: "visibility",
            value: visibility,
            constraint: "in [0, 1]",
        });
    }
    let half = 0.5 * intensity;
    let uc = (visibility * true_phase.cos()).clamp(-1.0, 1.0);
    let us = (visibility * true_phase.sin()).clamp(-1.0, 1.0);
    let (m3, m4) = exact_pair(intensity, half * (1.0 + uc));
    let (m5, m6) = exact_pair(intensity, half * (1.0 + us));
    Ok(ChannelMeans { m3, m4, m5, m6 })
}

/// Split `total` into `(first, total - first)` so that the sum is exact in
/// floating point. Subtracting the larger half is exact (Sterbenz), so the
/// smaller component absorbs the rounding, at most one ulp of `total`.
fn exact_pair(total: f64, first: f64) -> (f64, f64) {
    debug_assert!((0.0..=total).contains(&first));
    if first >= 0.5 * total {
        (first, total - first)
    } else {
        let big = total - first;
        (total - big, big)
    }
}

/// Wrap an angle to the interval `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

// ---------------------------------------------------------------------------
// Reproducible substreams
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer; used to decorrelate derived seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive an independent sub-seed for a tagged purpose (sweep point,
/// bootstrap, ...) from a base seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(1)))
}

/// RNG substream for one frame. Identical `(seed, index)` always yields the
/// identical stream, independent of any other frame.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

// ---------------------------------------------------------------------------
// Poisson sampling
// ---------------------------------------------------------------------------

/// ln Γ(z) for z > 0 (Lanczos approximation, g = 7, 9 terms).
#[allow(clippy::excessive_precision)] // canonical coefficient digits
fn ln_gamma(z: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(z > 0.0);
    let z = z - 1.0;
    let mut x = 0.999_999_999_999_809_93;
    for (i, c) in COEF.iter().enumerate() {
        x += c / (z + i as f64 + 1.0);
    }
    let t = z + 7.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// One Poisson draw.
///
/// Inversion by sequential search below mean 10, transformed rejection with
/// squeeze above. Reproducible for a fixed stream state within this
/// implementation.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    debug_assert!(mean >= 0.0 && mean.is_finite());
    if mean == 0.0 {
        return 0;
    }
    if mean < 10.0 {
        // Sequential search of the CDF.
        let u: f64 = rng.gen();
        let mut p = (-mean).exp();
        let mut s = p;
        let mut k = 0u64;
        while u > s {
            k += 1;
            p *= mean / k as f64;
            s += p;
            if k > 512 {
                break; // residual mass below representable probability
            }
        }
        k
    } else {
        // Hormann's PTRS rejection.
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.024_83 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        let ln_mean = mean.ln();
        loop {
            let u: f64 = rng.gen::<f64>() - 0.5;
            let v: f64 = rng.gen();
            let us = 0.5 - u.abs();
            let kf = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return kf as u64;
            }
            if kf < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            if (v * inv_alpha / (a / (us * us) + b)).ln() <= kf * ln_mean - mean - ln_gamma(kf + 1.0)
            {
                return kf as u64;
            }
        }
    }
}

/// One frame of four independent Poisson channel counts.
pub fn sample_frame<R: Rng + ?Sized>(means: &ChannelMeans, rng: &mut R) -> CountSample {
    CountSample {
        n3: sample_poisson(means.m3, rng),
        n4: sample_poisson(means.m4, rng),
        n5: sample_poisson(means.m5, rng),
        n6: sample_poisson(means.m6, rng),
    }
}

/// One frame accumulated from `pulses` weak pulses seen by binary detectors.
///
/// Every pulse carries per-channel mean `m_i / pulses`; a channel registers a
/// click with probability `1 - exp(-mean)` and the frame count is the number
/// of clicks. Channels are processed in order 3, 4, 5, 6.
pub fn sample_frame_weak_pulses<R: Rng + ?Sized>(
    means: &ChannelMeans,
    pulses: u64,
    rng: &mut R,
) -> CountSample {
    let mut counts = [0u64; 4];
    for (slot, m) in counts
        .iter_mut()
        .zip([means.m3, means.m4, means.m5, means.m6])
    {
        let per_pulse = m / pulses as f64;
        let p_click = -(-per_pulse).exp_m1();
        if p_click == 0.0 {
            continue;
        }
        let mut clicks = 0u64;
        for _ in 0..pulses {
            if rng.gen::<f64>() < p_click {
                clicks += 1;
            }
        }
        *slot = clicks;
    }
    CountSample {
        n3: counts[0],
        n4: counts[1],
        n5: counts[2],
        n6: counts[3],
    }
}

/// Add a zero-mean Gaussian offset to the phase and wrap to `(-pi, pi]`.
/// A zero sigma returns the input unchanged without consuming randomness.
pub fn apply_phase_jitter<R: Rng + ?Sized>(true_phase: f64, jitter_sigma: f64, rng: &mut R) -> f64 {
    debug_assert!(jitter_sigma >= 0.0);
    if jitter_sigma == 0.0 {
        return true_phase;
    }
    let normal = Normal::new(0.0, jitter_sigma).expect("valid sigma");
    wrap_phase(true_phase + normal.sample(rng))
}

/// Generate the counts of one frame from its dedicated substream.
///
/// Within a frame the draw order is fixed: jitter first, then channels
/// 3, 4, 5, 6. This function is the single source of simulated counts for
/// both the CLI and the sweep harness.
pub fn frame_counts(cfg: &ExperimentConfig, frame: u64) -> CountSample {
    let mut rng = substream(cfg.seed, frame);
    let phase = apply_phase_jitter(cfg.true_phase, cfg.jitter_sigma, &mut rng);
    let means = channel_means(phase, cfg.intensity, cfg.visibility)
        .expect("config validated before simulation");
    match cfg.sampling_mode {
        SamplingMode::DirectPoisson => sample_frame(&means, &mut rng),
        SamplingMode::WeakPulse => sample_frame_weak_pulses(&means, cfg.pulses_per_frame, &mut rng),
    }
}

/// All frames of an experiment, in frame order. Parallel over frames;
/// bit-identical to a sequential loop for any worker count.
pub fn simulate_counts(cfg: &ExperimentConfig) -> Vec<CountSample> {
    (0..cfg.frames)
        .into_par_iter()
        .map(|i| frame_counts(cfg, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn means_at_zero_phase() {
        let m = channel_means(0.0, 10.0, 1.0).unwrap();
        assert!((m.m3 - 10.0).abs() < TOL);
        assert!(m.m4.abs() < TOL);
        assert!((m.m5 - 5.0).abs() < TOL);
        assert!((m.m6 - 5.0).abs() < TOL);
    }

    #[test]
    fn means_at_quarter_turn() {
        let m = channel_means(PI / 2.0, 10.0, 1.0).unwrap();
        assert!((m.m3 - 5.0).abs() < TOL);
        assert!((m.m4 - 5.0).abs() < TOL);
        assert!((m.m5 - 10.0).abs() < TOL);
        assert!(m.m6.abs() < TOL);
    }

    #[test]
    fn means_direct_evaluation() {
        let m = channel_means(PI / 3.0, 8.0, 0.5).unwrap();
        assert!((m.m3 - 5.0).abs() < TOL);
        assert!((m.m4 - 3.0).abs() < TOL);
        assert!((m.m5 - (4.0 + 3.0f64.sqrt())).abs() < TOL);
        assert!((m.m6 - (4.0 - 3.0f64.sqrt())).abs() < TOL);
    }

    #[test]
    fn means_reject_bad_parameters() {
        assert!(channel_means(0.0, -1.0, 0.5).is_err());
        assert!(channel_means(0.0, 10.0, 1.5).is_err());
        assert!(channel_means(0.0, 10.0, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn mean_sums_are_exact(
            theta in -10.0f64..10.0,
            n in 1e-3f64..1e6,
            v in 0.0f64..=1.0,
        ) {
            let m = channel_means(theta, n, v).unwrap();
            prop_assert_eq!(m.m3 + m.m4, n);
            prop_assert_eq!(m.m5 + m.m6, n);
            prop_assert!(m.m3 >= 0.0 && m.m4 >= 0.0 && m.m5 >= 0.0 && m.m6 >= 0.0);
        }

        #[test]
        fn m3_monotone_in_visibility(
            theta in -1.5f64..1.5,
            n in 0.1f64..1e3,
            v1 in 0.0f64..1.0,
            dv in 1e-6f64..0.5,
        ) {
            prop_assume!(theta.cos() > 1e-6);
            let v2 = (v1 + dv).min(1.0);
            let a = channel_means(theta, n, v1).unwrap();
            let b = channel_means(theta, n, v2).unwrap();
            prop_assert!(b.m3 >= a.m3);
            prop_assert!(b.m4 <= a.m4);
        }

        #[test]
        fn wrap_is_in_half_open_interval(theta in -1e4f64..1e4) {
            let w = wrap_phase(theta);
            prop_assert!(w > -PI && w <= PI);
            // same angle mod 2 pi
            let d = (w - theta).rem_euclid(2.0 * PI);
            prop_assert!(d.abs() < 1e-6 || (d - 2.0 * PI).abs() < 1e-6);
        }
    }

    #[test]
    fn wrap_boundary_convention() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI) - PI).abs() < TOL);
    }

    #[test]
    fn poisson_zero_mean_is_zero() {
        let mut rng = substream(7, 0);
        for _ in 0..100 {
            assert_eq!(sample_poisson(0.0, &mut rng), 0);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let means = channel_means(0.7, 12.0, 0.9).unwrap();
        let a = sample_frame(&means, &mut substream(42, 3));
        let b = sample_frame(&means, &mut substream(42, 3));
        assert_eq!(a, b);
        let c = sample_frame(&means, &mut substream(42, 4));
        // different stream, almost surely different counts
        assert!(a != c || a.total() == 0);
    }

    #[test]
    fn poisson_law_of_large_numbers() {
        // covers both the inversion branch (5.0) and the rejection branch (50.0)
        for mean in [5.0f64, 50.0] {
            let n = 100_000u64;
            let mut rng = substream(11, mean as u64);
            let mut sum = 0u64;
            let mut sq = 0.0f64;
            for _ in 0..n {
                let k = sample_poisson(mean, &mut rng);
                sum += k;
                sq += (k as f64) * (k as f64);
            }
            let avg = sum as f64 / n as f64;
            let var = sq / n as f64 - avg * avg;
            let se = (mean / n as f64).sqrt();
            assert!(
                (avg - mean).abs() < 3.0 * se,
                "mean {avg} vs {mean} (se {se})"
            );
            // Poisson variance equals the mean; allow a generous band
            assert!((var / mean - 1.0).abs() < 0.05, "var {var} vs {mean}");
        }
    }

    #[test]
    fn frame_mean_matches_channel_mean() {
        let means = channel_means(0.0, 10.0, 1.0).unwrap();
        let n = 100_000u64;
        let mut sum3 = 0u64;
        let mut rng = substream(5, 0);
        for _ in 0..n {
            let s = sample_frame(&means, &mut rng);
            assert_eq!(s.n4, 0, "mean-zero channel must stay silent");
            sum3 += s.n3;
        }
        let avg = sum3 as f64 / n as f64;
        assert!((avg - 10.0).abs() < 3.0 * (10.0f64 / n as f64).sqrt());
    }

    #[test]
    fn weak_pulse_binary_detector_saturates() {
        let means = channel_means(0.3, 1e6, 1.0).unwrap();
        let mut rng = substream(9, 0);
        let s = sample_frame_weak_pulses(&means, 1, &mut rng);
        assert!(s.n3 <= 1 && s.n4 <= 1 && s.n5 <= 1 && s.n6 <= 1);
    }

    #[test]
    fn weak_pulse_zero_mean_channel() {
        let means = channel_means(0.0, 10.0, 1.0).unwrap(); // m4 == 0
        let mut rng = substream(10, 0);
        for _ in 0..50 {
            let s = sample_frame_weak_pulses(&means, 100, &mut rng);
            assert_eq!(s.n4, 0);
        }
    }

    #[test]
    fn weak_pulse_moments_match_poisson() {
        // per-pulse mean <= 1e-3: accumulated counts match Poisson moments
        let means = channel_means(PI / 3.0, 10.0, 0.9).unwrap();
        let pulses = 10_000u64;
        let frames = 10_000u64;
        let mut sums = [0.0f64; 4];
        let mut sqs = [0.0f64; 4];
        for i in 0..frames {
            let mut rng = substream(123, i);
            let s = sample_frame_weak_pulses(&means, pulses, &mut rng);
            for (j, n) in [s.n3, s.n4, s.n5, s.n6].iter().enumerate() {
                sums[j] += *n as f64;
                sqs[j] += (*n as f64) * (*n as f64);
            }
        }
        let m = [means.m3, means.m4, means.m5, means.m6];
        for j in 0..4 {
            let avg = sums[j] / frames as f64;
            let var = sqs[j] / frames as f64 - avg * avg;
            let se_mean = (m[j] / frames as f64).sqrt();
            assert!(
                (avg - m[j]).abs() < 3.0 * se_mean,
                "channel {j}: mean {avg} vs {}",
                m[j]
            );
            let se_var = m[j] * (2.0 / frames as f64).sqrt() * 1.5;
            assert!(
                (var - m[j]).abs() < 3.0 * se_var,
                "channel {j}: var {var} vs {}",
                m[j]
            );
        }
    }

    #[test]
    fn jitter_zero_sigma_is_identity() {
        let mut rng = substream(1, 0);
        let before = rng.clone();
        assert_eq!(apply_phase_jitter(0.4, 0.0, &mut rng), 0.4);
        // no randomness consumed
        assert_eq!(rng.get_word_pos(), before.get_word_pos());
    }

    #[test]
    fn jitter_mean_recovers_phase() {
        let theta = 0.8f64;
        let sigma = 0.05f64;
        let n = 100_000u64;
        let mut rng = substream(2, 0);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += apply_phase_jitter(theta, sigma, &mut rng);
        }
        let avg = sum / n as f64;
        assert!((avg - theta).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn frame_counts_reproducible() {
        let cfg = ExperimentConfig::new(10.0, 0.99, PI / 3.0, 100, 77).unwrap();
        let a: Vec<_> = (0..100).map(|i| frame_counts(&cfg, i)).collect();
        let b = simulate_counts(&cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::new(0.0, 0.5, 0.0, 10, 1).is_err());
        assert!(ExperimentConfig::new(1.0, 1.5, 0.0, 10, 1).is_err());
        assert!(ExperimentConfig::new(1.0, 0.5, 0.0, 0, 1).is_err());
        let mut cfg = ExperimentConfig::new(1.0, 0.5, 0.0, 10, 1).unwrap();
        cfg.jitter_sigma = -0.1;
        assert!(cfg.validate().is_err());
    }
}
