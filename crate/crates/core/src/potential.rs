//! Potential function, step-size regimes and per-regime drift targets.
//!
//! Everything is evaluated from `log f`, `log ‖∇f‖` and `log σ` so that
//! states deep into a run (f far below the smallest double) still classify
//! correctly. `f` here is always the untransformed core `h`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::bounds::TheoryConstants;
use crate::error::{Error, Result};
use crate::es::EsState;
use crate::quadratic::{QuadraticProblem, SpectrumStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SmallStep,
    LargeStep,
    Reasonable,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::SmallStep, Regime::LargeStep, Regime::Reasonable];
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::SmallStep => "small_step",
            Regime::LargeStep => "large_step",
            Regime::Reasonable => "reasonable",
        })
    }
}

/// `(log σ_small, log σ_large)`: below the first the state is SmallStep,
/// above the second it is LargeStep.
pub fn log_thresholds(stats: &SpectrumStats, log_f: f64, log_grad: f64, c: &TheoryConstants) -> (f64, f64) {
    let log_tr = stats.trace.ln();
    let small = c.b_s.ln() + 0.5 * (stats.smallest.ln() + log_f) - c.alpha_up.ln() - log_tr;
    let large = c.b_l.ln() + log_grad - 0.5 * LN_2 - c.alpha_down.ln() - log_tr;
    (small, large)
}

/// Classifies from logged quantities; equality at either threshold is
/// Reasonable.
pub fn classify_centered(
    stats: &SpectrumStats,
    log_f: f64,
    log_grad: f64,
    log_sigma: f64,
    c: &TheoryConstants,
) -> Regime {
    let (small, large) = log_thresholds(stats, log_f, log_grad, c);
    if log_sigma < small {
        Regime::SmallStep
    } else if log_sigma > large {
        Regime::LargeStep
    } else {
        Regime::Reasonable
    }
}

/// `(log h, log ‖∇h‖)` at `state`, or `DegenerateState` at the optimum.
fn logs_at(state: &EsState, problem: &QuadraticProblem) -> Result<(f64, f64)> {
    let y = problem.displacement(&state.m)?;
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateState);
    }
    Ok((problem.log_core_centered(&y), problem.log_grad_norm_centered(&y)))
}

pub fn classify(state: &EsState, problem: &QuadraticProblem, c: &TheoryConstants) -> Result<Regime> {
    let (log_f, log_grad) = logs_at(state, problem)?;
    Ok(classify_centered(&problem.spectrum_stats(), log_f, log_grad, state.log_sigma, c))
}

/// `V = log f + v·log⁺(b_s√(Lf)/(Tr σ)) + v·log⁺(Tr σ/(b_ℓ√(Lf)))`.
pub fn potential_centered(log_f: f64, log_sigma: f64, c: &TheoryConstants) -> f64 {
    let scale = 0.5 * (c.smallest.ln() + log_f) - c.trace.ln() - log_sigma;
    let small = c.b_s.ln() + scale;
    let large = -c.b_l.ln() - scale;
    log_f + c.v * small.max(0.0) + c.v * large.max(0.0)
}

pub fn potential_value(state: &EsState, problem: &QuadraticProblem, c: &TheoryConstants) -> Result<f64> {
    let (log_f, _) = logs_at(state, problem)?;
    Ok(potential_centered(log_f, state.log_sigma, c))
}

/// Upper bound on the expected one-step change of `V` in `regime`.
pub fn drift_target(regime: Regime, c: &TheoryConstants) -> f64 {
    let rate = (c.w / 4.0).min(c.log_ratio());
    match regime {
        Regime::SmallStep => -rate * (c.q_high - c.p_target),
        Regime::LargeStep => -rate * (c.p_target - c.q_low),
        Regime::Reasonable => -c.w / 4.0,
    }
}

/// Pathwise cap on `V_{t+1} - V_t`: `v·log(α↑/α↓)`.
pub fn delta_v_upper(c: &TheoryConstants) -> f64 {
    c.v * c.log_ratio()
}

/// Pathwise floor on `V_{t+1} - V_t` given `log(f_{t+1}/f_t)`:
/// `(1+v)·log(f'/f) - 2v·log α↑ + v·log α↓`.
pub fn delta_v_lower(c: &TheoryConstants, log_f_ratio: f64) -> f64 {
    (1.0 + c.v) * log_f_ratio - 2.0 * c.v * c.alpha_up.ln() + c.v * c.alpha_down.ln()
}
