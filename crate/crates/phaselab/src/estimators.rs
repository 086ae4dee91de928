//! Phase estimators for four-channel count samples.
//!
//! Two families are implemented. The NFM (Gaussian maximum-likelihood)
//! estimator takes the angle of the quadrature-difference vector and is the
//! closed-form maximizer of a symmetric Gaussian noise model. The Poissonian
//! maximum-likelihood estimator has a closed form while the inferred
//! visibility stays physical and otherwise maximizes the likelihood on the
//! boundary `V = 1` by safeguarded Newton iteration. The single-parameter
//! estimator fixes `V = 1` for every sample.
//!
//! Sign convention: the channel-3 mean carries `+V cos θ` and the channel-5
//! mean `+V sin θ`, so the count contrasts are `a = (n3 - n4)/(n3 + n4)` and
//! `b = (n5 - n6)/(n5 + n6)` and an estimate is the angle of `a + i b`.

use crate::model::{channel_means, wrap_phase, CountSample};
use std::f64::consts::PI;

/// Sums and differences of the two quadrature channel pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadratures {
    /// `n3 - n4` (cosine quadrature difference).
    pub dc: i64,
    /// `n5 - n6` (sine quadrature difference).
    pub ds: i64,
    /// `n3 + n4`.
    pub sc: i64,
    /// `n5 + n6`.
    pub ss: i64,
}

pub fn quadratures(sample: &CountSample) -> Quadratures {
    Quadratures {
        dc: sample.n3 as i64 - sample.n4 as i64,
        ds: sample.n5 as i64 - sample.n6 as i64,
        sc: (sample.n3 + sample.n4) as i64,
        ss: (sample.n5 + sample.n6) as i64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMethod {
    Nfm,
    MlConstrained,
    MlSingleParam,
}

impl EstimatorMethod {
    /// Short tag used in the estimates CSV.
    pub fn tag(&self) -> &'static str {
        match self {
            EstimatorMethod::Nfm => "nfm",
            EstimatorMethod::MlConstrained => "ml",
            EstimatorMethod::MlSingleParam => "ml1",
        }
    }
}

/// One estimator's output for one frame.
///
/// `theta` is NaN and `visibility_hat` absent when `valid` is false
/// (degenerate sample, phase undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    pub theta: f64,
    pub visibility_hat: Option<f64>,
    pub method: EstimatorMethod,
    pub valid: bool,
    pub on_boundary: bool,
}

impl PhaseEstimate {
    fn invalid(method: EstimatorMethod) -> Self {
        PhaseEstimate {
            theta: f64::NAN,
            visibility_hat: None,
            method,
            valid: false,
            // single-parameter estimation always works on the boundary
            on_boundary: method == EstimatorMethod::MlSingleParam,
        }
    }
}

/// Count contrasts `a`, `b`; `None` when either pair sum is zero.
fn count_contrasts(sample: &CountSample) -> Option<(f64, f64)> {
    let q = quadratures(sample);
    if q.sc == 0 || q.ss == 0 {
        return None;
    }
    Some((q.dc as f64 / q.sc as f64, q.ds as f64 / q.ss as f64))
}

/// NFM estimate: phase is the angle of `(n3 - n4) + i (n5 - n6)`, visibility
/// is `min(2 V' / total, 1)` with `V'` the quadrature-difference magnitude.
pub fn nfm_estimate(sample: &CountSample) -> PhaseEstimate {
    let q = quadratures(sample);
    if q.dc == 0 && q.ds == 0 {
        return PhaseEstimate::invalid(EstimatorMethod::Nfm);
    }
    let dc = q.dc as f64;
    let ds = q.ds as f64;
    let vprime = dc.hypot(ds);
    let visibility = (2.0 * vprime / sample.total() as f64).min(1.0);
    PhaseEstimate {
        theta: wrap_phase(ds.atan2(dc)),
        visibility_hat: Some(visibility),
        method: EstimatorMethod::Nfm,
        valid: true,
        on_boundary: false,
    }
}

/// Unconstrained Poissonian ML phase: the angle of `a + i b` for every
/// sample, discarding the visibility estimate entirely.
pub fn unconstrained_ml_phase(sample: &CountSample) -> Option<f64> {
    let (a, b) = count_contrasts(sample)?;
    if a == 0.0 && b == 0.0 {
        return None;
    }
    Some(wrap_phase(b.atan2(a)))
}

/// Constrained Poissonian ML estimate.
///
/// While the raw visibility `sqrt(a^2 + b^2)` is at most 1 the closed form
/// applies; above 1 the likelihood is maximized on the boundary `V = 1`
/// starting from the closed-form angle.
pub fn poisson_ml_estimate(sample: &CountSample) -> PhaseEstimate {
    let (a, b) = match count_contrasts(sample) {
        Some(c) => c,
        None => return PhaseEstimate::invalid(EstimatorMethod::MlConstrained),
    };
    if a == 0.0 && b == 0.0 {
        return PhaseEstimate::invalid(EstimatorMethod::MlConstrained);
    }
    let raw = a.hypot(b);
    let theta0 = b.atan2(a);
    if raw <= 1.0 {
        return PhaseEstimate {
            theta: wrap_phase(theta0),
            visibility_hat: Some(raw),
            method: EstimatorMethod::MlConstrained,
            valid: true,
            on_boundary: false,
        };
    }
    match boundary_ml_phase(sample, theta0) {
        Some(solve) => PhaseEstimate {
            theta: solve.theta,
            visibility_hat: Some(1.0),
            method: EstimatorMethod::MlConstrained,
            valid: true,
            on_boundary: true,
        },
        None => PhaseEstimate::invalid(EstimatorMethod::MlConstrained),
    }
}

/// Single-parameter ML estimate: visibility fixed at 1 for every sample, the
/// phase maximizes the boundary likelihood from the closed-form angle.
pub fn single_param_ml_estimate(sample: &CountSample) -> PhaseEstimate {
    let theta0 = match unconstrained_ml_phase(sample) {
        Some(t) => t,
        None => return PhaseEstimate::invalid(EstimatorMethod::MlSingleParam),
    };
    match boundary_ml_phase(sample, theta0) {
        Some(solve) => PhaseEstimate {
            theta: solve.theta,
            visibility_hat: Some(1.0),
            method: EstimatorMethod::MlSingleParam,
            valid: true,
            on_boundary: true,
        },
        None => PhaseEstimate::invalid(EstimatorMethod::MlSingleParam),
    }
}

/// Result of the boundary maximization, with the route that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySolve {
    pub theta: f64,
    /// True when the golden-section safeguard produced the value instead of
    /// a converged Newton iteration.
    pub via_fallback: bool,
}

/// Log-likelihood on the boundary `V = 1`, up to an additive constant:
/// `n3 ln(1+cos) + n4 ln(1-cos) + n5 ln(1+sin) + n6 ln(1-sin)`,
/// with `0 ln 0 = 0` and `ln` of a non-positive argument `= -inf`.
pub fn boundary_loglik(sample: &CountSample, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    ln_term(sample.n3, 1.0 + c)
        + ln_term(sample.n4, 1.0 - c)
        + ln_term(sample.n5, 1.0 + s)
        + ln_term(sample.n6, 1.0 - s)
}

fn ln_term(n: u64, arg: f64) -> f64 {
    if n == 0 {
        0.0
    } else if arg <= 0.0 {
        f64::NEG_INFINITY
    } else {
        n as f64 * arg.ln()
    }
}

/// First and second derivative of the boundary log-likelihood.
fn boundary_score(sample: &CountSample, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    let mut lp = 0.0;
    let mut lpp = 0.0;
    if sample.n3 > 0 {
        let n = sample.n3 as f64;
        let d = 1.0 + c;
        lp -= n * s / d;
        lpp -= n / d;
    }
    if sample.n4 > 0 {
        let n = sample.n4 as f64;
        let d = 1.0 - c;
        lp += n * s / d;
        lpp -= n / d;
    }
    if sample.n5 > 0 {
        let n = sample.n5 as f64;
        let d = 1.0 + s;
        lp += n * c / d;
        lpp -= n / d;
    }
    if sample.n6 > 0 {
        let n = sample.n6 as f64;
        let d = 1.0 - s;
        lp -= n * c / d;
        lpp -= n / d;
    }
    (lp, lpp)
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;
const CURVATURE_FLOOR: f64 = 1e-12;
const STEP_CAP: f64 = 0.5;

/// Maximize the boundary log-likelihood from the starting angle `theta0`.
///
/// Newton steps `theta -= l' / l''` until the step drops below 1e-10 rad
/// (at most 50 iterations). The golden-section safeguard takes over when the
/// curvature underflows, a step exceeds 0.5 rad, a derivative turns
/// non-finite, or an iterate fails to increase the likelihood. Returns
/// `None` for the all-zero sample, whose likelihood is flat.
pub fn boundary_ml_phase(sample: &CountSample, theta0: f64) -> Option<BoundarySolve> {
    if sample.total() == 0 || !theta0.is_finite() {
        return None;
    }
    let mut theta = theta0;
    let mut value = boundary_loglik(sample, theta);
    if !value.is_finite() {
        return Some(golden_fallback(sample, theta0));
    }
    for _ in 0..NEWTON_MAX_ITER {
        let (lp, lpp) = boundary_score(sample, theta);
        if !lp.is_finite() || !lpp.is_finite() || lpp.abs() < CURVATURE_FLOOR {
            return Some(golden_fallback(sample, theta0));
        }
        let step = lp / lpp;
        if !step.is_finite() || step.abs() > STEP_CAP {
            return Some(golden_fallback(sample, theta0));
        }
        let next = theta - step;
        let next_value = boundary_loglik(sample, next);
        if !next_value.is_finite() || next_value < value {
            return Some(golden_fallback(sample, theta0));
        }
        theta = next;
        value = next_value;
        if step.abs() < NEWTON_TOL {
            return Some(BoundarySolve {
                theta: wrap_phase(theta),
                via_fallback: false,
            });
        }
    }
    Some(golden_fallback(sample, theta0))
}

/// Golden-section search on `[theta0 - pi/2, theta0 + pi/2]`.
///
/// A coarse scan first isolates the best subinterval; the likelihood can
/// hold `-inf` spikes at phases forbidden by an empty channel, which would
/// defeat a blind golden section over the whole bracket.
fn golden_fallback(sample: &CountSample, theta0: f64) -> BoundarySolve {
    const SCAN: usize = 64;
    let lo = theta0 - PI / 2.0;
    let hi = theta0 + PI / 2.0;
    let h = (hi - lo) / SCAN as f64;
    let mut best_i = 0usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=SCAN {
        let v = boundary_loglik(sample, lo + i as f64 * h);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    if best == f64::NEG_INFINITY {
        return BoundarySolve {
            theta: wrap_phase(theta0),
            via_fallback: true,
        };
    }
    let mut a = lo + best_i.saturating_sub(1) as f64 * h;
    let mut b = lo + (best_i + 1).min(SCAN) as f64 * h;
    let gr = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let mut fc = boundary_loglik(sample, c);
    let mut fd = boundary_loglik(sample, d);
    while b - a > 1e-12 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = boundary_loglik(sample, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = boundary_loglik(sample, d);
        }
    }
    let mut cand = 0.5 * (a + b);
    // never settle for less than the starting angle achieves
    if boundary_loglik(sample, theta0) > boundary_loglik(sample, cand) {
        cand = theta0;
    }
    BoundarySolve {
        theta: wrap_phase(cand),
        via_fallback: true,
    }
}

// ---------------------------------------------------------------------------
// Likelihood functions and the brute-force oracle
// ---------------------------------------------------------------------------

/// Phase-insensitive per-channel noise of the Gaussian model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoiseModel {
    pub noise_var: f64,
}

impl GaussianNoiseModel {
    pub fn new(noise_var: f64) -> Self {
        assert!(
            noise_var > 0.0 && noise_var.is_finite(),
            "noise_var must be positive"
        );
        GaussianNoiseModel { noise_var }
    }
}

/// Gaussian log-likelihood up to an additive constant:
/// `-(1 / 2 noise_var) * sum_i (n_i - mean_i)^2`.
pub fn gaussian_loglik(
    sample: &CountSample,
    phase: f64,
    visibility: f64,
    intensity: f64,
    noise: &GaussianNoiseModel,
) -> f64 {
    let m = channel_means(phase, intensity, visibility).expect("parameters in range");
    let d3 = sample.n3 as f64 - m.m3;
    let d4 = sample.n4 as f64 - m.m4;
    let d5 = sample.n5 as f64 - m.m5;
    let d6 = sample.n6 as f64 - m.m6;
    -(d3 * d3 + d4 * d4 + d5 * d5 + d6 * d6) / (2.0 * noise.noise_var)
}

/// Poissonian log-likelihood up to terms independent of phase and
/// visibility: `sum_i n_i ln(mean_i)` with `0 ln 0 = 0`, and `-inf` when a
/// channel counted photons against a zero mean.
pub fn poisson_loglik(sample: &CountSample, phase: f64, visibility: f64, intensity: f64) -> f64 {
    let m = channel_means(phase, intensity, visibility).expect("parameters in range");
    ln_term(sample.n3, m.m3)
        + ln_term(sample.n4, m.m4)
        + ln_term(sample.n5, m.m5)
        + ln_term(sample.n6, m.m6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodKind {
    Gaussian,
    Poisson,
}

/// Brute-force maximization of the selected log-likelihood over the grid
/// `(-pi, pi] x [0, 1]`, with one parabolic refinement around the best node.
///
/// The effective intensity is `total / 2`, which is also what the Gaussian
/// closed form implies; the Poissonian arg-max does not depend on it. Ties
/// keep the first maximum in scan order (theta outer, visibility inner).
/// Samples whose likelihood is flat, or maximized at zero visibility where
/// the phase is undefined, come back invalid.
pub fn grid_ml_oracle(
    sample: &CountSample,
    kind: LikelihoodKind,
    theta_steps: usize,
    v_steps: usize,
) -> PhaseEstimate {
    assert!(theta_steps >= 360, "need at least 360 phase steps");
    assert!(v_steps >= 100, "need at least 100 visibility steps");
    let method = match kind {
        LikelihoodKind::Gaussian => EstimatorMethod::Nfm,
        LikelihoodKind::Poisson => EstimatorMethod::MlConstrained,
    };
    if sample.total() == 0 {
        return PhaseEstimate::invalid(method);
    }
    let intensity = sample.total() as f64 / 2.0;
    let noise = GaussianNoiseModel::new(1.0);
    let eval = |theta: f64, v: f64| -> f64 {
        match kind {
            LikelihoodKind::Gaussian => gaussian_loglik(sample, theta, v, intensity, &noise),
            LikelihoodKind::Poisson => poisson_loglik(sample, theta, v, intensity),
        }
    };
    let theta_at = |j: usize| -PI + 2.0 * PI * (j + 1) as f64 / theta_steps as f64;
    let v_at = |k: usize| k as f64 / (v_steps - 1) as f64;

    let mut best = f64::NEG_INFINITY;
    let mut worst = f64::INFINITY;
    let mut best_jk = (0usize, 0usize);
    for j in 0..theta_steps {
        let theta = theta_at(j);
        for k in 0..v_steps {
            let val = eval(theta, v_at(k));
            if val > best {
                best = val;
                best_jk = (j, k);
            }
            if val.is_finite() && val < worst {
                worst = val;
            }
        }
    }
    if !best.is_finite() || best - worst <= 1e-12 * (1.0 + best.abs()) {
        return PhaseEstimate::invalid(method);
    }
    let (bj, bk) = best_jk;
    if bk == 0 {
        // maximum at zero visibility: the phase axis is flat there
        return PhaseEstimate::invalid(method);
    }

    // one local quadratic refinement around the best node; the Poissonian
    // likelihood couples theta and visibility, so the fit must carry the
    // cross term whenever the node is interior in visibility
    let h_theta = 2.0 * PI / theta_steps as f64;
    let h_v = 1.0 / (v_steps - 1) as f64;
    let best_theta = theta_at(bj);
    let best_v = v_at(bk);

    let f0 = best;
    let fm_t = eval(best_theta - h_theta, best_v);
    let fp_t = eval(best_theta + h_theta, best_v);

    let mut theta_hat = best_theta;
    let mut v_hat = best_v;
    let mut refined = false;
    if bk + 1 < v_steps {
        let fm_v = eval(best_theta, best_v - h_v);
        let fp_v = eval(best_theta, best_v + h_v);
        let fpp = eval(best_theta + h_theta, best_v + h_v);
        let fpm = eval(best_theta + h_theta, best_v - h_v);
        let fmp = eval(best_theta - h_theta, best_v + h_v);
        let fmm = eval(best_theta - h_theta, best_v - h_v);
        let stencil = [fm_t, fp_t, fm_v, fp_v, fpp, fpm, fmp, fmm];
        if stencil.iter().all(|x| x.is_finite()) {
            let gt = (fp_t - fm_t) / (2.0 * h_theta);
            let gv = (fp_v - fm_v) / (2.0 * h_v);
            let htt = (fp_t - 2.0 * f0 + fm_t) / (h_theta * h_theta);
            let hvv = (fp_v - 2.0 * f0 + fm_v) / (h_v * h_v);
            let htv = (fpp - fpm - fmp + fmm) / (4.0 * h_theta * h_v);
            let det = htt * hvv - htv * htv;
            if det > 0.0 && htt < 0.0 {
                let dt = -(hvv * gt - htv * gv) / det;
                let dv = -(htt * gv - htv * gt) / det;
                if dt.abs() <= h_theta && dv.abs() <= h_v {
                    theta_hat = best_theta + dt;
                    v_hat = (best_v + dv).clamp(0.0, 1.0);
                    refined = true;
                }
            }
        }
    }
    if !refined {
        // per-axis parabolas (visibility edge, or an ill-conditioned fit)
        theta_hat = best_theta + parabolic_offset(fm_t, f0, fp_t, h_theta);
        if bk + 1 < v_steps {
            let gm = eval(best_theta, best_v - h_v);
            let gp = eval(best_theta, best_v + h_v);
            v_hat = (best_v + parabolic_offset(gm, f0, gp, h_v)).clamp(0.0, 1.0);
        }
    }
    theta_hat = wrap_phase(theta_hat);

    PhaseEstimate {
        theta: theta_hat,
        visibility_hat: Some(v_hat),
        method,
        valid: true,
        on_boundary: kind == LikelihoodKind::Poisson && 1.0 - v_hat < 1e-9,
    }
}

/// Vertex offset of the parabola through three equally spaced samples.
fn parabolic_offset(fm: f64, f0: f64, fp: f64, h: f64) -> f64 {
    if !(fm.is_finite() && fp.is_finite()) {
        return 0.0;
    }
    let denom = fm - 2.0 * f0 + fp;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * h * (fm - fp) / denom).clamp(-h, h)
}
