use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::{EsParams, EsState, Runner};
use crate::parallel::{map_indexed, Execution};
use crate::quadratic::QuadraticProblem;
use crate::stochastic::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateProtocol {
    pub budget: u64,
    pub burn_in: u64,
    pub trials: usize,
    #[serde(skip)]
    pub exec: Execution,
}

impl RateProtocol {
    /// Burn-in defaults to 10% of the budget.
    pub fn new(budget: u64, trials: usize) -> Self {
        RateProtocol { budget, burn_in: budget / 10, trials, exec: Execution::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.budget <= self.burn_in || self.trials == 0 {
            return Err(Error::InvalidParams(format!(
                "need budget > burn_in and trials ≥ 1, got budget={}, burn_in={}, trials={}",
                self.budget, self.burn_in, self.trials
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeSource {
    Norm,
    Logf,
}

/// Slopes of a single trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRate {
    /// `-(log f_T - log f_B) / (2(T - B))`.
    pub logf: f64,
    /// `-(log‖m_T - x*‖ - log‖m_B - x*‖) / (T - B)`.
    pub norm: f64,
    pub accepts: u64,
    /// `log f` never increased along the trial.
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub a_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard error of `a_hat` across trials (0 for a single trial).
    pub trial_se: f64,
    pub trials: usize,
    pub budget: u64,
    pub burn_in: u64,
    pub slope_source: SlopeSource,
    /// Mean of the norm-based slopes.
    pub a_hat_norm: f64,
    /// Largest per-trial `|logf - norm|` slope gap.
    pub max_slope_gap: f64,
    /// `log(U/L) / (2(T - B))`, the largest gap a quadratic allows.
    pub slope_gap_bound: f64,
    pub per_trial: Vec<TrialRate>,
}

impl RateEstimate {
    pub fn slopes_agree(&self) -> bool {
        self.max_slope_gap <= self.slope_gap_bound * (1.0 + 1e-9) + 1e-12
    }

    pub fn monotone(&self) -> bool {
        self.per_trial.iter().all(|t| t.monotone)
    }
}

fn run_trial(
    problem: &QuadraticProblem,
    params: &EsParams,
    state0: &EsState,
    p: &RateProtocol,
    mut stream: RandomStream,
) -> Result<TrialRate> {
    let mut runner = Runner::new(problem, state0, params)?;
    let mut monotone = true;
    let mut at_burn = (runner.log_f(), runner.log_distance());
    let mut prev = runner.log_f();
    while runner.t() < p.budget {
        if runner.t() == p.burn_in {
            at_burn = (runner.log_f(), runner.log_distance());
        }
        runner.advance(&mut stream)?;
        if runner.at_optimum() {
            return Err(Error::NumericalFailure(format!("trial reached f = 0 exactly at t={}", runner.t())));
        }
        monotone &= runner.log_f() <= prev;
        prev = runner.log_f();
    }
    let span = (p.budget - p.burn_in) as f64;
    Ok(TrialRate {
        logf: -(runner.log_f() - at_burn.0) / (2.0 * span),
        norm: -(runner.log_distance() - at_burn.1) / span,
        accepts: runner.accepts(),
        monotone,
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical convergence rate over independent trials; trial `k` draws
/// from `stream.substream(k)`.
pub fn measure_rate(
    problem: &QuadraticProblem,
    params: &EsParams,
    state0: &EsState,
    protocol: &RateProtocol,
    stream: &RandomStream,
) -> Result<RateEstimate> {
    protocol.validate()?;
    params.validate()?;
    let trials: Vec<TrialRate> = map_indexed(protocol.trials, protocol.exec, |k| {
        run_trial(problem, params, state0, protocol, stream.substream(k as u64))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let logf: Vec<f64> = trials.iter().map(|t| t.logf).collect();
    let norm: Vec<f64> = trials.iter().map(|t| t.norm).collect();
    let (a_hat, trial_se) = mean_se(&logf);
    let (ci_low, ci_high) = if trials.len() < 5 {
        let lo = logf.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    } else {
        (a_hat - 3.0 * trial_se, a_hat + 3.0 * trial_se)
    };
    let span = (protocol.budget - protocol.burn_in) as f64;
    let stats = problem.spectrum_stats();
    Ok(RateEstimate {
        a_hat,
        ci_low,
        ci_high,
        trial_se,
        trials: trials.len(),
        budget: protocol.budget,
        burn_in: protocol.burn_in,
        slope_source: SlopeSource::Logf,
        a_hat_norm: mean_se(&norm).0,
        max_slope_gap: trials.iter().map(|t| (t.logf - t.norm).abs()).fold(0.0, f64::max),
        slope_gap_bound: stats.cond.ln() / (2.0 * span),
        per_trial: trials,
    })
}
