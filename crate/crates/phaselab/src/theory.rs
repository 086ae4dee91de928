//! Closed-form performance baselines: asymptotic dispersions of the phase
//! estimators, the exact per-frame Fisher information of the four Poisson
//! channels, the Cramér–Rao lower bound, and phase-integrated costs.
//!
//! All dispersions are leading-order in 1/N and apply in the
//! strong-intensity regime.

use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("`{name}` out of domain: {value} (expected {constraint})")]
    Domain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("formula `{0}` has no integrated cost (not a dispersion)")]
    NotADispersion(&'static str),
}

/// Identifiers of the closed-form baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    NfmAsym,
    MlUnconstrAsym,
    MlConstrAsym,
    CrlbAsym,
    FisherExact,
    SingleParamAsym,
}

impl Formula {
    pub fn tag(&self) -> &'static str {
        match self {
            Formula::NfmAsym => "nfm_asym",
            Formula::MlUnconstrAsym => "ml_unconstr_asym",
            Formula::MlConstrAsym => "ml_constr_asym",
            Formula::CrlbAsym => "crlb_asym",
            Formula::FisherExact => "fisher_exact",
            Formula::SingleParamAsym => "single_param_asym",
        }
    }
}

/// One evaluated baseline with the parameters that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryPoint {
    pub formula: Formula,
    pub intensity: f64,
    pub visibility: f64,
    pub phase: f64,
    pub value: f64,
}

fn check_intensity(intensity: f64) -> Result<(), TheoryError> {
    if intensity > 0.0 && intensity.is_finite() {
        Ok(())
    } else {
        Err(TheoryError::Domain {
            name: "intensity",
            value: intensity,
            constraint: "> 0",
        })
    }
}

fn check_visibility_positive(visibility: f64) -> Result<(), TheoryError> {
    if visibility > 0.0 && visibility <= 1.0 {
        Ok(())
    } else {
        Err(TheoryError::Domain {
            name: "visibility",
            value: visibility,
            constraint: "in (0, 1]",
        })
    }
}

/// Leading-order NFM dispersion, `1 / (V^2 N)`.
pub fn nfm_asymptotic(intensity: f64, visibility: f64) -> Result<f64, TheoryError> {
    check_intensity(intensity)?;
    check_visibility_positive(visibility)?;
    Ok(1.0 / (visibility * visibility * intensity))
}

/// Asymptotic dispersion of the unconstrained Poissonian-ML phase,
/// `(1 - (V^2/2) sin^2 2θ) / (V^2 N)`.
pub fn unconstrained_ml_asymptotic(
    intensity: f64,
    visibility: f64,
    phase: f64,
) -> Result<f64, TheoryError> {
    check_intensity(intensity)?;
    check_visibility_positive(visibility)?;
    let v2 = visibility * visibility;
    let s = (2.0 * phase).sin();
    Ok((1.0 - 0.5 * v2 * s * s) / (v2 * intensity))
}

/// Approximate asymptotic dispersion of the constrained Poissonian-ML phase
/// at unit visibility, `(1 + 0.5 cos^2 2θ) / (2N)`.
pub fn constrained_ml_asymptotic(intensity: f64, phase: f64) -> Result<f64, TheoryError> {
    check_intensity(intensity)?;
    let c = (2.0 * phase).cos();
    Ok((1.0 + 0.5 * c * c) / (2.0 * intensity))
}

/// Exact per-frame Fisher information of the four Poisson channels,
/// `N V^2 [ sin^2 θ / (1 - V^2 cos^2 θ) + cos^2 θ / (1 - V^2 sin^2 θ) ]`.
///
/// At exactly `V = 1` the singular ratios are replaced by their continuous
/// limit, giving `2N` for every phase.
pub fn fisher_information(intensity: f64, visibility: f64, phase: f64) -> Result<f64, TheoryError> {
    check_intensity(intensity)?;
    if !(0.0..=1.0).contains(&visibility) {
        return Err(TheoryError::Domain {
            name: "visibility",
            value: visibility,
            constraint: "in [0, 1]",
        });
    }
    let v2 = visibility * visibility;
    let (s, c) = phase.sin_cos();
    let (s2, c2) = (s * s, c * c);
    let d1 = 1.0 - v2 * c2;
    let d2 = 1.0 - v2 * s2;
    let t1 = if d1 > 0.0 { s2 / d1 } else { 1.0 };
    let t2 = if d2 > 0.0 { c2 / d2 } else { 1.0 };
    Ok(intensity * v2 * (t1 + t2))
}

/// Asymptotic Cramér–Rao lower bound on the dispersion,
/// `[(V^2 - 1 - V^4 sin^2 2θ / 4) / (V^2 - 1 - V^2 sin^2 2θ / 2)] / (V^2 N)`.
///
/// The printed form is 0/0 at `V = 1`, `θ = k π/2`; those isolated points
/// evaluate through the reciprocal Fisher information, which is continuous
/// there.
pub fn crlb_asymptotic(intensity: f64, visibility: f64, phase: f64) -> Result<f64, TheoryError> {
    check_intensity(intensity)?;
    check_visibility_positive(visibility)?;
    let v2 = visibility * visibility;
    let s = (2.0 * phase).sin();
    let s2t = s * s;
    let den = v2 - 1.0 - 0.5 * v2 * s2t;
    if den.abs() < 1e-14 {
        return Ok(1.0 / fisher_information(intensity, visibility, phase)?);
    }
    let num = v2 - 1.0 - 0.25 * v2 * v2 * s2t;
    Ok(num / den / (v2 * intensity))
}

/// Asymptotic dispersion of the single-parameter boundary estimator,
/// `1 / (2N)`.
pub fn single_param_asymptotic(intensity: f64) -> Result<f64, TheoryError> {
    check_intensity(intensity)?;
    Ok(1.0 / (2.0 * intensity))
}

/// Evaluate any baseline; parameters a formula does not use are ignored but
/// still echoed in the returned point.
pub fn evaluate(
    formula: Formula,
    intensity: f64,
    visibility: f64,
    phase: f64,
) -> Result<TheoryPoint, TheoryError> {
    let value = match formula {
        Formula::NfmAsym => nfm_asymptotic(intensity, visibility)?,
        Formula::MlUnconstrAsym => unconstrained_ml_asymptotic(intensity, visibility, phase)?,
        Formula::MlConstrAsym => constrained_ml_asymptotic(intensity, phase)?,
        Formula::CrlbAsym => crlb_asymptotic(intensity, visibility, phase)?,
        Formula::FisherExact => fisher_information(intensity, visibility, phase)?,
        Formula::SingleParamAsym => single_param_asymptotic(intensity)?,
    };
    Ok(TheoryPoint {
        formula,
        intensity,
        visibility,
        phase,
        value,
    })
}

/// Phase-integrated cost of a dispersion formula at unit visibility:
/// quadrature of `σ^2(θ)` over `θ in [0, 2π)` to 1e-6 relative accuracy.
pub fn integrated_cost(formula: Formula, intensity: f64) -> Result<f64, TheoryError> {
    check_intensity(intensity)?;
    let f: Box<dyn Fn(f64) -> f64> = match formula {
        Formula::NfmAsym => {
            let v = nfm_asymptotic(intensity, 1.0)?;
            Box::new(move |_| v)
        }
        Formula::MlUnconstrAsym => Box::new(move |t| {
            unconstrained_ml_asymptotic(intensity, 1.0, t).expect("valid parameters")
        }),
        Formula::MlConstrAsym => {
            Box::new(move |t| constrained_ml_asymptotic(intensity, t).expect("valid parameters"))
        }
        Formula::CrlbAsym => {
            Box::new(move |t| crlb_asymptotic(intensity, 1.0, t).expect("valid parameters"))
        }
        Formula::SingleParamAsym => {
            let v = single_param_asymptotic(intensity)?;
            Box::new(move |_| v)
        }
        Formula::FisherExact => return Err(TheoryError::NotADispersion(formula.tag())),
    };
    Ok(periodic_quadrature(f.as_ref(), 1e-6))
}

/// Rectangle-rule quadrature over one full period [0, 2π); spectrally
/// accurate for smooth periodic integrands. Doubles the grid until the
/// relative change drops below `rel_tol`.
fn periodic_quadrature(f: &dyn Fn(f64) -> f64, rel_tol: f64) -> f64 {
    let eval = |n: usize| -> f64 {
        let h = 2.0 * PI / n as f64;
        let mut sum = 0.0;
        for j in 0..n {
            sum += f(j as f64 * h);
        }
        sum * h
    };
    let mut n = 64;
    let mut prev = eval(n);
    loop {
        n *= 2;
        let next = eval(n);
        if (next - prev).abs() <= rel_tol * next.abs() || n >= (1 << 20) {
            return next;
        }
        prev = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{nfm_estimate, single_param_ml_estimate};
    use crate::metrics::dispersion;
    use crate::model::{channel_means, frame_counts, substream, ExperimentConfig};
    use rand::Rng;

    #[test]
    fn nfm_values() {
        assert_eq!(nfm_asymptotic(100.0, 1.0).unwrap(), 0.01);
        assert_eq!(nfm_asymptotic(100.0, 0.5).unwrap(), 0.04);
        assert!(nfm_asymptotic(100.0, 0.0).is_err());
        assert!(nfm_asymptotic(0.0, 1.0).is_err());
    }

    #[test]
    fn unconstrained_values() {
        assert_eq!(unconstrained_ml_asymptotic(100.0, 1.0, 0.0).unwrap(), 0.01);
        let v = unconstrained_ml_asymptotic(100.0, 1.0, PI / 4.0).unwrap();
        assert!((v - 0.005).abs() < 1e-15);
        // low-visibility limit reduces to the NFM dispersion
        let v_small = 1e-4;
        let ratio = unconstrained_ml_asymptotic(50.0, v_small, 0.9).unwrap()
            / nfm_asymptotic(50.0, v_small).unwrap();
        assert!((ratio - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constrained_values() {
        assert!((constrained_ml_asymptotic(100.0, 0.0).unwrap() - 0.0075).abs() < 1e-15);
        assert!((constrained_ml_asymptotic(100.0, PI / 4.0).unwrap() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn crlb_values() {
        // V = 1: bound is 1/(2N) for every phase, including singular ones
        for theta in [0.0, 0.3, PI / 4.0, PI / 2.0, 1.2, PI] {
            let v = crlb_asymptotic(100.0, 1.0, theta).unwrap();
            assert!((v - 0.005).abs() < 1e-12, "theta {theta}: {v}");
        }
        assert!(crlb_asymptotic(100.0, 0.0, 0.3).is_err());
    }

    #[test]
    fn fisher_values() {
        for theta in [0.0, 0.4, PI / 2.0, 2.0] {
            let f = fisher_information(100.0, 1.0, theta).unwrap();
            assert!((f - 200.0).abs() < 1e-9, "theta {theta}: {f}");
        }
        assert_eq!(fisher_information(100.0, 0.5, 0.0).unwrap(), 25.0);
        assert!((crlb_asymptotic(100.0, 0.5, 0.0).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn crlb_fisher_identity() {
        let mut rng = substream(31, 0);
        for _ in 0..100 {
            let n: f64 = rng.gen_range(1.0..1e4);
            let v: f64 = rng.gen_range(0.05..0.999);
            let t: f64 = rng.gen_range(-PI..PI);
            let product =
                crlb_asymptotic(n, v, t).unwrap() * fisher_information(n, v, t).unwrap();
            assert!(
                (product - 1.0).abs() < 1e-9,
                "identity off at N={n} V={v} theta={t}: {product}"
            );
        }
    }

    #[test]
    fn fisher_matches_monte_carlo_score_variance() {
        // sample the score of the four-channel Poisson model and compare its
        // second moment to the closed form
        let (n, v, theta) = (100.0, 0.5, 0.7);
        let m = channel_means(theta, n, v).unwrap();
        let (s, c) = theta.sin_cos();
        // derivatives of the four means with respect to the phase
        let d = [
            -0.5 * n * v * s,
            0.5 * n * v * s,
            0.5 * n * v * c,
            -0.5 * n * v * c,
        ];
        let means = [m.m3, m.m4, m.m5, m.m6];
        let frames = 200_000u64;
        let cfg = ExperimentConfig::new(n, v, theta, frames, 314).unwrap();
        let mut second_moment = 0.0;
        for i in 0..frames {
            let sample = frame_counts(&cfg, i);
            let counts = [sample.n3, sample.n4, sample.n5, sample.n6];
            let mut score = 0.0;
            for k in 0..4 {
                score += (counts[k] as f64 - means[k]) * d[k] / means[k];
            }
            second_moment += score * score;
        }
        let mc = second_moment / frames as f64;
        let exact = fisher_information(n, v, theta).unwrap();
        assert!(
            (mc / exact - 1.0).abs() < 0.02,
            "MC Fisher {mc} vs exact {exact}"
        );
    }

    #[test]
    fn single_param_values() {
        assert_eq!(single_param_asymptotic(1000.0).unwrap(), 5e-4);
        assert_eq!(
            single_param_asymptotic(123.0).unwrap(),
            crlb_asymptotic(123.0, 1.0, 0.77).unwrap()
        );
    }

    #[test]
    fn ordering_at_unit_visibility() {
        let mut rng = substream(5, 5);
        for _ in 0..200 {
            let n: f64 = rng.gen_range(1.0..1e4);
            let t: f64 = rng.gen_range(-PI..PI);
            let crlb = crlb_asymptotic(n, 1.0, t).unwrap();
            let constr = constrained_ml_asymptotic(n, t).unwrap();
            let unconstr = unconstrained_ml_asymptotic(n, 1.0, t).unwrap();
            let nfm = nfm_asymptotic(n, 1.0).unwrap();
            assert!(crlb <= constr + 1e-15);
            assert!(constr <= unconstr + 1e-15);
            assert!(unconstr <= nfm + 1e-15);
        }
        // middle pair meets at theta = pi/4
        let a = constrained_ml_asymptotic(10.0, PI / 4.0).unwrap();
        let b = unconstrained_ml_asymptotic(10.0, 1.0, PI / 4.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn phase_period_is_quarter_turn() {
        let mut rng = substream(6, 6);
        for _ in 0..50 {
            let n: f64 = rng.gen_range(1.0..100.0);
            let v: f64 = rng.gen_range(0.1..1.0);
            let t: f64 = rng.gen_range(-PI..PI);
            let shift = t + PI / 2.0;
            let a = unconstrained_ml_asymptotic(n, v, t).unwrap();
            let b = unconstrained_ml_asymptotic(n, v, shift).unwrap();
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
            let a = crlb_asymptotic(n, v, t).unwrap();
            let b = crlb_asymptotic(n, v, shift).unwrap();
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
            let a = fisher_information(n, v, t).unwrap();
            let b = fisher_information(n, v, shift).unwrap();
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn integrated_costs_reproduce_table() {
        let n = 1000.0;
        let cases = [
            (Formula::NfmAsym, 2.0 * PI / n),
            (Formula::MlUnconstrAsym, 1.5 * PI / n),
            (Formula::MlConstrAsym, 1.25 * PI / n),
            (Formula::CrlbAsym, PI / n),
            (Formula::SingleParamAsym, PI / n),
        ];
        for (formula, expect) in cases {
            let got = integrated_cost(formula, n).unwrap();
            assert!(
                ((got - expect) / expect).abs() < 1e-6,
                "{}: {got} vs {expect}",
                formula.tag()
            );
        }
        assert_eq!(
            integrated_cost(Formula::FisherExact, n),
            Err(TheoryError::NotADispersion("fisher_exact"))
        );
    }

    #[test]
    fn quadrature_converged_in_step() {
        // halving the step changes the result by less than 1e-6 relative
        let f = |t: f64| unconstrained_ml_asymptotic(10.0, 1.0, t).unwrap();
        let coarse: f64 = {
            let n = 4096;
            let h = 2.0 * PI / n as f64;
            (0..n).map(|j| f(j as f64 * h)).sum::<f64>() * h
        };
        let fine: f64 = {
            let n = 8192;
            let h = 2.0 * PI / n as f64;
            (0..n).map(|j| f(j as f64 * h)).sum::<f64>() * h
        };
        assert!(((fine - coarse) / fine).abs() < 1e-6);
    }

    #[test]
    fn nfm_asymptote_matches_monte_carlo() {
        let n = 1e4;
        let cfg = ExperimentConfig::new(n, 1.0, 0.9, 20_000, 2718).unwrap();
        let phases: Vec<f64> = (0..cfg.frames)
            .map(|i| nfm_estimate(&frame_counts(&cfg, i)))
            .filter(|e| e.valid)
            .map(|e| e.theta)
            .collect();
        let mc = dispersion(&phases).unwrap();
        let asym = nfm_asymptotic(n, 1.0).unwrap();
        assert!(
            (mc / asym - 1.0).abs() < 0.05,
            "MC {mc} vs asymptotic {asym}"
        );
    }

    #[test]
    fn single_param_asymptote_matches_monte_carlo() {
        let n = 1000.0;
        let cfg = ExperimentConfig::new(n, 1.0, PI / 3.0, 20_000, 1618).unwrap();
        let phases: Vec<f64> = (0..cfg.frames)
            .map(|i| single_param_ml_estimate(&frame_counts(&cfg, i)))
            .filter(|e| e.valid)
            .map(|e| e.theta)
            .collect();
        let mc = dispersion(&phases).unwrap();
        let asym = single_param_asymptotic(n).unwrap();
        assert!(
            (mc / asym - 1.0).abs() < 0.05,
            "MC {mc} vs asymptotic {asym}"
        );
    }
}
