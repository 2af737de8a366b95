//! The (1+1)-ES with success-based step-size adaptation.
//!
//! One iteration samples `x = m + σ z` with `z ~ N(0, I)`, accepts it when
//! `f(x) ≤ f(m)` (ties accept) and multiplies σ by `α↑` on acceptance and
//! by `α↓` otherwise.
//!
//! [`step`] applies one iteration to an absolute state. [`Runner`] and
//! [`run`] iterate in the problem's centered frame (they track `m - x*`),
//! which makes translated runs reproduce each other exactly and keeps
//! `log f` finite far below the smallest representable double.

use serde::{Deserialize, Serialize};

use crate::bounds::TheoryConstants;
use crate::error::{check_dim, Error, Result};
use crate::potential::{classify_centered, Regime};
use crate::quadratic::{ProblemSpec, QuadraticProblem};
use crate::stochastic::{RandomStream, GENERATOR_ID};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsParams {
    pub alpha_up: f64,
    pub alpha_down: f64,
}

impl EsParams {
    pub fn new(alpha_up: f64, alpha_down: f64) -> Result<Self> {
        let p = Self { alpha_up, alpha_down };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_up.is_finite() && self.alpha_up > 1.0 && self.alpha_down > 0.0 && self.alpha_down < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "need alpha_up > 1 > alpha_down > 0, got alpha_up={}, alpha_down={}",
                self.alpha_up, self.alpha_down
            )))
        }
    }

    /// Success probability at which `E[log σ]` is stationary:
    /// `log(1/α↓) / log(α↑/α↓)`.
    pub fn p_target(&self) -> f64 {
        (1.0 / self.alpha_down).ln() / self.log_ratio()
    }

    /// `log(α↑/α↓)`.
    pub fn log_ratio(&self) -> f64 {
        self.alpha_up.ln() - self.alpha_down.ln()
    }
}

/// Dimension-scaled factors `α↑ = exp(up/d)`, `α↓ = exp(-down/d)`, so that
/// `p_target = down / (up + down)` for every `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    pub up: f64,
    pub down: f64,
}

impl AlphaSchedule {
    /// `α↑ = e^{4/d}`, `α↓ = e^{-1/d}`: the classic one-fifth rule.
    pub const ONE_FIFTH: AlphaSchedule = AlphaSchedule { up: 4.0, down: 1.0 };

    /// `α↑ = e^{1/d}`, `α↓ = e^{-0.8/d}`, `p_target = 4/9`. Large spheres
    /// admit feasible drift constants under this schedule.
    pub const FOUR_NINTHS: AlphaSchedule = AlphaSchedule { up: 1.0, down: 0.8 };

    pub fn params(&self, d: usize) -> Result<EsParams> {
        let d = d as f64;
        EsParams::new((self.up / d).exp(), (-self.down / d).exp())
    }

    pub fn p_target(&self) -> f64 {
        self.down / (self.up + self.down)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsState {
    pub m: Vec<f64>,
    pub log_sigma: f64,
}

impl EsState {
    pub fn new(m: Vec<f64>, sigma: f64) -> Self {
        Self { m, log_sigma: sigma.ln() }
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: EsState,
    pub accepted: bool,
    /// `log f(m_{t+1}) - log f(m_t)` on the core; 0 when rejected.
    pub log_f_ratio: f64,
}

/// One iteration from an absolute state with a given normal vector `z`.
pub fn step(state: &EsState, z: &[f64], problem: &QuadraticProblem, params: &EsParams) -> Result<StepOutcome> {
    check_dim(problem.dim(), state.m.len())?;
    check_dim(problem.dim(), z.len())?;
    let sigma = state.sigma();
    let x: Vec<f64> = state.m.iter().zip(z).map(|(m, z)| m + sigma * z).collect();
    let f_m = problem.eval(&state.m)?;
    let f_x = problem.eval(&x)?;
    if !f_m.is_finite() || !f_x.is_finite() {
        return Err(Error::NumericalFailure(format!("f(m)={f_m}, f(x)={f_x}")));
    }
    if f_x <= f_m {
        let log_f_ratio = problem.log_core_centered(&problem.displacement(&x)?)
            - problem.log_core_centered(&problem.displacement(&state.m)?);
        Ok(StepOutcome {
            next: EsState {
                m: x,
                log_sigma: state.log_sigma + params.alpha_up.ln(),
            },
            accepted: true,
            log_f_ratio,
        })
    } else {
        Ok(StepOutcome {
            next: EsState {
                m: state.m.clone(),
                log_sigma: state.log_sigma + params.alpha_down.ln(),
            },
            accepted: false,
            log_f_ratio: 0.0,
        })
    }
}

/// Iterates the ES in the centered frame.
///
/// `log σ_t` is recomputed from the acceptance count as
/// `log σ_0 + a·log α↑ + (t - a)·log α↓`, so it carries no accumulated
/// rounding drift.
#[derive(Clone, Debug)]
pub struct Runner<'a> {
    problem: &'a QuadraticProblem,
    log_up: f64,
    log_down: f64,
    log_sigma0: f64,
    displacement: Vec<f64>,
    candidate: Vec<f64>,
    z: Vec<f64>,
    key: f64,
    log_f: f64,
    t: u64,
    accepts: u64,
}

impl<'a> Runner<'a> {
    pub fn new(problem: &'a QuadraticProblem, state0: &EsState, params: &EsParams) -> Result<Self> {
        params.validate()?;
        let displacement = problem.displacement(&state0.m)?;
        if displacement.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateStart);
        }
        if !state0.log_sigma.is_finite() {
            return Err(Error::InvalidParams(format!("log_sigma must be finite, got {}", state0.log_sigma)));
        }
        let d = problem.dim();
        let key = problem.order_key_centered(&displacement);
        let log_f = problem.log_core_centered(&displacement);
        if key.is_nan() || !log_f.is_finite() {
            return Err(Error::NumericalFailure(format!("initial objective not finite (log f = {log_f})")));
        }
        Ok(Self {
            problem,
            log_up: params.alpha_up.ln(),
            log_down: params.alpha_down.ln(),
            log_sigma0: state0.log_sigma,
            displacement,
            candidate: vec![0.0; d],
            z: vec![0.0; d],
            key,
            log_f,
            t: 0,
            accepts: 0,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn accepts(&self) -> u64 {
        self.accepts
    }

    pub fn log_sigma(&self) -> f64 {
        self.log_sigma0 + self.accepts as f64 * self.log_up + (self.t - self.accepts) as f64 * self.log_down
    }

    /// `log h(m_t - x*)`.
    pub fn log_f(&self) -> f64 {
        self.log_f
    }

    /// `m_t - x*`.
    pub fn displacement(&self) -> &[f64] {
        &self.displacement
    }

    pub fn log_distance(&self) -> f64 {
        let max = self.displacement.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max == 0.0 {
            return f64::NEG_INFINITY;
        }
        let s: f64 = self.displacement.iter().map(|v| (v / max) * (v / max)).sum();
        max.ln() + 0.5 * s.ln()
    }

    /// The core reached exactly zero; the chain cannot move any more.
    pub fn at_optimum(&self) -> bool {
        self.log_f == f64::NEG_INFINITY
    }

    pub fn state(&self) -> EsState {
        let m = self
            .displacement
            .iter()
            .zip(self.problem.optimum())
            .map(|(y, o)| y + o)
            .collect();
        EsState {
            m,
            log_sigma: self.log_sigma(),
        }
    }

    /// One iteration drawing `z` from `stream`. Returns whether the
    /// candidate was accepted.
    pub fn advance(&mut self, stream: &mut RandomStream) -> Result<bool> {
        stream.fill_normal(&mut self.z);
        let sigma = self.log_sigma().exp();
        for ((c, y), z) in self.candidate.iter_mut().zip(&self.displacement).zip(&self.z) {
            *c = y + sigma * z;
        }
        let key = self.problem.order_key_centered(&self.candidate);
        if key.is_nan() {
            return Err(Error::NumericalFailure(format!("objective is NaN at t={}", self.t)));
        }
        self.t += 1;
        if key <= self.key {
            std::mem::swap(&mut self.displacement, &mut self.candidate);
            self.key = key;
            self.log_f = self.problem.log_core_centered(&self.displacement);
            self.accepts += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions<'c> {
    /// Keep `m_t - x*` for every row.
    pub record_states: bool,
    /// Fill the `regime` column.
    pub constants: Option<&'c TheoryConstants>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub log_f: f64,
    pub log_sigma: f64,
    /// Whether the step into this row was accepted; empty for `t = 0`.
    pub accepted: Option<bool>,
    pub regime: Option<Regime>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub seed: u64,
    pub stream_path: Vec<u64>,
    pub params: EsParams,
    pub p_target: f64,
    pub problem: ProblemSpec,
    pub initial_state: EsState,
    pub budget: u64,
    pub halted_at_optimum: bool,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// `m_t - x*` per row, when requested.
    pub states: Option<Vec<Vec<f64>>>,
    pub metadata: TraceMetadata,
}

pub const TRACE_HEADER: &str = "t,log_f,log_sigma,accepted,regime";

impl RunTrace {
    pub fn halted_at_optimum(&self) -> bool {
        self.metadata.halted_at_optimum
    }

    /// Acceptance rate over all steps taken.
    pub fn acceptance_rate(&self) -> f64 {
        let steps = self.rows.len().saturating_sub(1);
        if steps == 0 {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.accepted == Some(true)).count() as f64 / steps as f64
    }

    /// Rows where `log f` increased; empty on any valid trace.
    pub fn monotonicity_violations(&self) -> usize {
        self.rows.windows(2).filter(|w| w[1].log_f > w[0].log_f).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::ConfigError(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.join(",") != TRACE_HEADER {
            return Err(Error::ConfigError(format!("unexpected trace header `{}`", header.join(","))));
        }
        r.deserialize()
            .map(|row| row.map_err(|e| Error::ConfigError(e.to_string())))
            .collect()
    }
}

/// Runs `budget` iterations from `state0`.
pub fn run(
    problem: &QuadraticProblem,
    state0: &EsState,
    params: &EsParams,
    budget: u64,
    stream: &mut RandomStream,
) -> Result<RunTrace> {
    run_with(problem, state0, params, budget, stream, &RunOptions::default())
}

pub fn run_with(
    problem: &QuadraticProblem,
    state0: &EsState,
    params: &EsParams,
    budget: u64,
    stream: &mut RandomStream,
    options: &RunOptions<'_>,
) -> Result<RunTrace> {
    let mut runner = Runner::new(problem, state0, params)?;
    let regime = |runner: &Runner<'_>| {
        options.constants.map(|c| {
            let log_grad = problem.log_grad_norm_centered(runner.displacement());
            classify_centered(&problem.spectrum_stats(), runner.log_f(), log_grad, runner.log_sigma(), c)
        })
    };
    let mut rows = Vec::with_capacity(budget as usize + 1);
    let mut states = options.record_states.then(Vec::new);
    rows.push(TraceRow {
        t: 0,
        log_f: runner.log_f(),
        log_sigma: runner.log_sigma(),
        accepted: None,
        regime: regime(&runner),
    });
    if let Some(s) = states.as_mut() {
        s.push(runner.displacement().to_vec());
    }
    while runner.t() < budget && !runner.at_optimum() {
        let accepted = runner.advance(stream)?;
        rows.push(TraceRow {
            t: runner.t(),
            log_f: runner.log_f(),
            log_sigma: runner.log_sigma(),
            accepted: Some(accepted),
            regime: if runner.at_optimum() { None } else { regime(&runner) },
        });
        if let Some(s) = states.as_mut() {
            s.push(runner.displacement().to_vec());
        }
    }
    let metadata = TraceMetadata {
        tool: "oneplusone".into(),
        version: crate::VERSION.into(),
        generator: GENERATOR_ID.into(),
        seed: stream.seed(),
        stream_path: stream.path().to_vec(),
        params: *params,
        p_target: params.p_target(),
        problem: problem.to_spec(),
        initial_state: state0.clone(),
        budget,
        halted_at_optimum: runner.at_optimum(),
    };
    Ok(RunTrace { rows, states, metadata })
}
