//! Closed-form quantities of the convergence-rate analysis.
//!
//! Everything here is a pure function of the spectrum statistics and the
//! step-size factors. The one-dimensional optimizations behind
//! [`b_high`] and [`b_low`] scan a 512-point log-spaced grid of ε and then
//! refine the best grid point by golden-section search, since the objective
//! is not known to be unimodal.

mod constants;
mod normal;

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadratic::SpectrumStats;

pub use constants::{constants, lower_rate_constant, TheoryConstants};
pub use normal::{normal_cdf, normal_pdf, normal_quantile};
use normal::quantile_unchecked;

/// `4/√(2π)`: the normalized step size at which the quality-gain bound
/// changes sign.
pub fn four_over_sqrt_2pi() -> f64 {
    4.0 / (2.0 * PI).sqrt()
}

/// `1/√(2π)`.
fn inv_sqrt_2pi() -> f64 {
    1.0 / (2.0 * PI).sqrt()
}

/// Which feasibility inequality failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    /// `Tr(H²)/Tr(H)²` is not below the trace threshold.
    TraceCondition { ratio: f64, threshold: f64 },
    /// `p_target` is outside `(2r, 1/2)`, so no `q_low < p_target < q_high`
    /// pair fits.
    PTargetOutOfRange { p_target: f64, lower: f64, upper: f64 },
    /// `B_low(p_target) ≥ 4/√(2π)`.
    PTargetCondition { b_low_at_ptarget: f64, limit: f64 },
    /// No `q_low < p_target` with `B_low(q_low) < 4/√(2π)`.
    NoFeasibleQLow { p_target: f64 },
    /// No pair with `B_low(q_low) > (α↑/α↓) B_high(q_high)`.
    NoFeasiblePair { alpha_ratio: f64 },
    /// `B_low` needs `Tr(H²) < Tr(H)²/4`.
    RatioTooLarge { ratio: f64 },
    /// The ε range of the supremum/infimum is numerically empty.
    EmptyEpsilonRange { q: f64 },
    /// `B_high(Q) < B_low(q_low)` for every `Q`.
    QhEmpty { q_low: f64, b_low: f64 },
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasibility::TraceCondition { ratio, threshold } => {
                write!(f, "trace condition fails: Tr(H²)/Tr(H)² = {ratio} ≥ {threshold}")
            }
            Infeasibility::PTargetOutOfRange { p_target, lower, upper } => {
                write!(f, "q_low < p_target < q_high impossible: p_target = {p_target} not in ({lower}, {upper})")
            }
            Infeasibility::PTargetCondition { b_low_at_ptarget, limit } => {
                write!(f, "p_target condition fails: B_low(p_target) = {b_low_at_ptarget} ≥ 4/√(2π) = {limit}")
            }
            Infeasibility::NoFeasibleQLow { p_target } => {
                write!(f, "no q_low < {p_target} with B_low(q_low) < 4/√(2π)")
            }
            Infeasibility::NoFeasiblePair { alpha_ratio } => {
                write!(f, "no (q_low, q_high) with B_low(q_low) > {alpha_ratio}·B_high(q_high)")
            }
            Infeasibility::RatioTooLarge { ratio } => write!(f, "B_low undefined: Tr(H²)/Tr(H)² = {ratio} ≥ 1/4"),
            Infeasibility::EmptyEpsilonRange { q } => write!(f, "empty ε range at q = {q}"),
            Infeasibility::QhEmpty { q_low, b_low } => {
                write!(f, "Q_H undefined: B_high never reaches B_low({q_low}) = {b_low}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceCondition {
    pub holds: bool,
    pub threshold: f64,
    /// `threshold - r`; positive when the condition holds.
    pub margin: f64,
}

/// `(1/8)·min{Φ(1/√(2π)) - 1/2, 1 - Φ(3/√(2π))}`.
pub fn trace_threshold() -> f64 {
    let s = inv_sqrt_2pi();
    let a = normal_cdf(s) - 0.5;
    let b = normal_cdf(-3.0 * s);
    a.min(b) / 8.0
}

pub fn trace_condition(stats: &SpectrumStats) -> TraceCondition {
    let threshold = trace_threshold();
    TraceCondition {
        holds: stats.ratio < threshold,
        threshold,
        margin: threshold - stats.ratio,
    }
}

/// Bracket on the success probability. May leave [0, 1]; `vacuous` flags
/// that instead of clamping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower: f64,
    pub upper: f64,
    pub vacuous: bool,
}

/// `Φ(-s(1±ε)/2) ∓ 2r/ε²` with `s = σ Tr(H)/‖∇f(m)‖`.
pub fn success_prob_sandwich(stats: &SpectrumStats, sigma_norm: f64, epsilon: f64) -> Result<Sandwich> {
    if !(sigma_norm > 0.0 && epsilon > 0.0) {
        return Err(Error::DomainError(format!(
            "sandwich needs sigma_norm > 0 and epsilon > 0, got {sigma_norm}, {epsilon}"
        )));
    }
    let slack = 2.0 * stats.ratio / (epsilon * epsilon);
    let lower = normal_cdf(-0.5 * sigma_norm * (1.0 + epsilon)) - slack;
    let upper = normal_cdf(-0.5 * sigma_norm * (1.0 - epsilon)) + slack;
    Ok(Sandwich {
        lower,
        upper,
        vacuous: lower < 0.0 || upper > 1.0,
    })
}

/// A threshold value with the ε that attains it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub epsilon: f64,
}

const EPS_GRID: usize = 512;

/// Golden-section search for a maximum of `f` on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a) <= 1e-14 * b.abs().max(1e-300) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid scan plus golden refinement; maximizes `f` over `grid`.
fn scan_max(f: impl Fn(f64) -> f64, grid: &[f64]) -> (f64, f64) {
    let values: Vec<f64> = grid.iter().map(|&e| f(e)).collect();
    let (best, &best_val) = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap_or((0, &f64::NAN));
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (e, v) = golden_max(&f, lo, hi);
    if v >= best_val {
        (e, v)
    } else {
        (grid[best], best_val)
    }
}

fn log_grid(lo: f64, hi: f64, exclusive_hi: bool) -> Vec<f64> {
    let denom = if exclusive_hi { EPS_GRID as f64 } else { (EPS_GRID - 1) as f64 };
    let ratio = (hi / lo).ln();
    (0..EPS_GRID)
        .map(|k| {
            let t = if exclusive_hi { (k as f64 + 1.0) / (denom + 1.0) } else { k as f64 / denom };
            lo * (ratio * t).exp()
        })
        .collect()
}

/// `B_high(q) = sup_{ε > √(4r/(1-2q))} 2Φ⁻¹(1 - (q + 2r/ε²)) / (1 + ε)`.
///
/// A normalized step size at or below this value guarantees a success
/// probability above `q`.
pub fn b_high(stats: &SpectrumStats, q: f64) -> Result<Threshold> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::DomainError(format!("B_high needs q in (0, 1/2), got {q}")));
    }
    let r = stats.ratio;
    if r == 0.0 {
        return Ok(Threshold {
            value: 2.0 * quantile_unchecked(1.0 - q),
            epsilon: 0.0,
        });
    }
    let eps_min = (4.0 * r / (1.0 - 2.0 * q)).sqrt();
    let objective = |eps: f64| {
        if eps <= eps_min {
            return 0.0;
        }
        2.0 * quantile_unchecked(1.0 - (q + 2.0 * r / (eps * eps))) / (1.0 + eps)
    };
    let hi = (eps_min * 1e4).max(eps_min + 10.0);
    let grid = log_grid(eps_min, hi, false);
    let (epsilon, value) = scan_max(objective, &grid);
    if value > 0.0 && value.is_finite() {
        Ok(Threshold { value, epsilon })
    } else {
        Err(Error::InfeasibleBound(Infeasibility::EmptyEpsilonRange { q }))
    }
}

/// `B_low(q) = inf_{√(2r/q) < ε < 1} 2Φ⁻¹(1 - (q - 2r/ε²)) / (1 - ε)`.
///
/// A normalized step size at or above this value guarantees a success
/// probability below `q`.
pub fn b_low(stats: &SpectrumStats, q: f64) -> Result<Threshold> {
    let r = stats.ratio;
    if r >= 0.25 {
        return Err(Error::InfeasibleBound(Infeasibility::RatioTooLarge { ratio: r }));
    }
    if !(q > 2.0 * r && q < 0.5) {
        return Err(Error::DomainError(format!("B_low needs q in (2r, 1/2) = ({}, 0.5), got {q}", 2.0 * r)));
    }
    if r == 0.0 {
        return Ok(Threshold {
            value: 2.0 * quantile_unchecked(1.0 - q),
            epsilon: 0.0,
        });
    }
    let eps_min = (2.0 * r / q).sqrt();
    let objective = |eps: f64| {
        if eps <= eps_min || eps >= 1.0 {
            return f64::NEG_INFINITY;
        }
        let p = 1.0 - (q - 2.0 * r / (eps * eps));
        if p >= 1.0 {
            return f64::NEG_INFINITY;
        }
        -(2.0 * quantile_unchecked(p) / (1.0 - eps))
    };
    let grid = log_grid(eps_min, 1.0, true);
    let (epsilon, neg) = scan_max(objective, &grid);
    let value = -neg;
    if value.is_finite() && value > 0.0 {
        Ok(Threshold { value, epsilon })
    } else {
        Err(Error::InfeasibleBound(Infeasibility::EmptyEpsilonRange { q }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QhValue {
    /// `Q_H`.
    pub value: f64,
    /// `B_low(q_low)`, the level `B_high` must reach.
    pub level: f64,
}

const QH_BISECTION_STEPS: usize = 64;
const QH_FLOOR: f64 = 1e-12;

/// `Q_H = sup{Q : B_high(Q) ≥ B_low(q_low)}`, the success-probability floor
/// inside the reasonable step-size band.
pub fn q_h(stats: &SpectrumStats, q_low: f64) -> Result<QhValue> {
    let level = b_low(stats, q_low)?.value;
    let limit = four_over_sqrt_2pi();
    if level >= limit {
        return Err(Error::InfeasibleBound(Infeasibility::PTargetCondition {
            b_low_at_ptarget: level,
            limit,
        }));
    }
    let reaches = |q: f64| b_high(stats, q).map(|t| t.value >= level).unwrap_or(false);
    if !reaches(QH_FLOOR) {
        return Err(Error::InfeasibleBound(Infeasibility::QhEmpty { q_low, b_low: level }));
    }
    let (mut lo, mut hi) = (QH_FLOOR, 0.5);
    for _ in 0..QH_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reaches(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value = 0.5 * (lo + hi);
    if !reaches(value - 1e-9) {
        return Err(Error::NumericalFailure(format!(
            "Q_H bisection: B_high(Q_H - 1e-9) < B_low(q_low) at Q_H = {value}"
        )));
    }
    Ok(QhValue { value, level })
}

/// Right-hand side of the quality-gain bound:
/// `(σ‖∇f‖/f)·(σTr(H)/(4‖∇f‖) - 1/√(2π))·p_succ`.
pub fn quality_gain_rhs(stats: &SpectrumStats, grad_norm: f64, f_val: f64, sigma: f64, p_succ: f64) -> Result<f64> {
    if !(grad_norm > 0.0 && f_val > 0.0 && sigma > 0.0) || !(0.0..=1.0).contains(&p_succ) {
        return Err(Error::DomainError(format!(
            "quality_gain_rhs needs positive grad_norm, f, sigma and p_succ in [0, 1]; got {grad_norm}, {f_val}, {sigma}, {p_succ}"
        )));
    }
    let bracket = sigma * stats.trace / (4.0 * grad_norm) - inv_sqrt_2pi();
    Ok(sigma * grad_norm / f_val * bracket * p_succ)
}

/// `1 + U/((d-3)L)`, the bound on `E[exp(|log(f(m+σz)/f(m))|·1{success})]`.
pub fn exp_moment_bound(stats: &SpectrumStats, d: usize) -> Result<f64> {
    if d <= 3 {
        return Err(Error::DomainError(format!("exp-moment bound needs d > 3, got d = {d}")));
    }
    Ok(1.0 + stats.cond / (d - 3) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadratic::Spectrum;

    #[test]
    fn quality_gain_rhs_vanishes_at_root() {
        let stats = Spectrum::sphere(10).unwrap().stats();
        let g = 3.0;
        let sigma = four_over_sqrt_2pi() * g / stats.trace;
        assert!(quality_gain_rhs(&stats, g, 1.0, sigma, 0.7).unwrap().abs() < 1e-15);
        assert_eq!(quality_gain_rhs(&stats, g, 1.0, 0.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn exp_moment_examples() {
        let s = Spectrum::sphere(103).unwrap().stats();
        assert!((exp_moment_bound(&s, 103).unwrap() - 1.01).abs() < 1e-15);
        let s = Spectrum::new(vec![10.0, 1.0]).unwrap().stats();
        assert_eq!(exp_moment_bound(&s, 13).unwrap(), 2.0);
        assert!(exp_moment_bound(&s, 3).is_err());
    }

    #[test]
    fn b_low_domain_errors() {
        let s = Spectrum::sphere(10).unwrap().stats();
        assert!(b_low(&s, 0.3).is_ok());
        assert!(matches!(b_low(&s, 0.15), Err(Error::DomainError(_))));
        let s = Spectrum::sphere(3).unwrap().stats();
        assert!(matches!(b_low(&s, 0.45), Err(Error::InfeasibleBound(Infeasibility::RatioTooLarge { .. }))));
    }

    #[test]
    fn sandwich_collapses_without_concentration_slack() {
        let s = SpectrumStats::with_ratio(0.0);
        let w = success_prob_sandwich(&s, 1.3, 1e-9).unwrap();
        let mid = normal_cdf(-0.65);
        assert!((w.lower - mid).abs() < 1e-9 && (w.upper - mid).abs() < 1e-9);
        assert!(!w.vacuous);
    }
}
