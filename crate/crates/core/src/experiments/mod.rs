//! Rate measurement, sweeps and the verification suite.

mod rate;
mod sweep;
mod verify;

pub use rate::{measure_rate, RateEstimate, RateProtocol, SlopeSource, TrialRate};
pub use sweep::{sweep, sweep_csv, SweepEntry, SweepRow, SWEEP_HEADER};
pub use verify::{verify_suite, CheckResult, CheckStatus, VerifyOutputs, VerifyReport};

use crate::es::EsState;
use crate::quadratic::QuadraticProblem;

/// Default start: `m0 - x* = (1, …, 1)/√d` and `σ0 = ‖m0 - x*‖·√L/Tr(H)`.
pub fn default_state(problem: &QuadraticProblem) -> EsState {
    let d = problem.dim();
    let s = problem.spectrum_stats();
    let c = 1.0 / (d as f64).sqrt();
    let m = problem.optimum().iter().map(|o| o + c).collect();
    EsState::new(m, s.smallest.sqrt() / s.trace)
}
