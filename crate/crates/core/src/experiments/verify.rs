use serde::{Deserialize, Serialize};

use super::{default_state, measure_rate, sweep, sweep_csv, RateEstimate, SweepEntry};
use crate::bounds::{
    constants, quality_gain_rhs, exp_moment_bound, lower_rate_constant, success_prob_sandwich, TheoryConstants,
};
use crate::cli::config::Config;
use crate::error::{Error, Result};
use crate::es::{run, run_with, EsParams, EsState, RunOptions, RunTrace};
use crate::montecarlo::{
    estimate_drift_V, estimate_exp_abs, estimate_log_progress, estimate_success_prob, with_retry,
};
use crate::potential::{delta_v_upper, drift_target, log_thresholds, Regime};
use crate::quadratic::{MonotoneTransform, ProblemSpec, QuadraticProblem};
use crate::stochastic::{RandomStream, GENERATOR_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check_id: String,
    pub status: CheckStatus,
    pub observed: Option<f64>,
    pub bound: Option<f64>,
    pub tolerance: Option<f64>,
    pub seed: u64,
    /// Substream path the check drew from.
    pub stream: Vec<u64>,
    pub retried: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pass: usize,
    pub fail: usize,
    pub skip: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub params: EsParams,
    pub p_target: f64,
    pub constants: Option<TheoryConstants>,
    /// Why the constants could not be formed, if they could not.
    pub infeasibility: Option<String>,
    pub summary: Summary,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.summary.fail == 0
    }
}

/// Report plus the traces and tables the suite produced.
#[derive(Clone, Debug)]
pub struct VerifyOutputs {
    pub report: VerifyReport,
    /// Canonical run from the default start.
    pub trace: RunTrace,
    pub rate: RateEstimate,
    /// `(file name, contents)` for CSV artifacts.
    pub tables: Vec<(String, String)>,
}

const Z: f64 = 3.0;
/// Rounding allowance for the pathwise potential bounds.
const PATHWISE_TOL: f64 = 1e-12;
const INVARIANCE_STEPS: u64 = 1000;
const SIGMA_NORMS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const MOMENT_INSTANCES: usize = 5;

mod label {
    pub const INVARIANCE: u64 = 1;
    pub const SANDWICH: u64 = 2;
    pub const QUALITY_GAIN: u64 = 3;
    pub const EXP_MOMENT: u64 = 4;
    pub const DRIFT: u64 = 5;
    pub const RATE: u64 = 6;
    pub const MISSCALED: u64 = 7;
    pub const SWEEP: u64 = 8;
    pub const STATES: u64 = 9;
    pub const TRACE: u64 = 10;
}

struct Suite<'a> {
    seed: u64,
    root: RandomStream,
    problem: &'a QuadraticProblem,
    checks: Vec<CheckResult>,
}

impl Suite<'_> {
    fn stream(&self, path: &[u64]) -> RandomStream {
        path.iter().fold(self.root.clone(), |s, &l| s.substream(l))
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        id: String,
        status: CheckStatus,
        observed: Option<f64>,
        bound: Option<f64>,
        tolerance: Option<f64>,
        stream: &[u64],
        retried: bool,
        detail: String,
    ) {
        self.checks.push(CheckResult {
            check_id: id,
            status,
            observed,
            bound,
            tolerance,
            seed: self.seed,
            stream: stream.to_vec(),
            retried,
            detail,
        });
    }

    fn skip(&mut self, id: &str, why: String) {
        self.push(id.into(), CheckStatus::Skip, None, None, None, &[], false, why);
    }
}

fn status(ok: bool) -> CheckStatus {
    if ok {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

fn grad_norm(problem: &QuadraticProblem, m: &[f64]) -> Result<f64> {
    Ok(problem.gradient_core(m)?.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Start whose displacement and optimum shift are dyadic, so shifting the
/// problem and the start by the same vector is exact.
fn dyadic_start(problem: &QuadraticProblem) -> (Vec<f64>, Vec<f64>) {
    let d = problem.dim();
    let scale = 2f64.powi(-((d as f64).sqrt().log2().round() as i32));
    let y: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { scale } else { -scale }).collect();
    let shift: Vec<f64> = (0..d).map(|i| 0.25 * i as f64 - 3.0).collect();
    (y, shift)
}

fn check_invariance(suite: &mut Suite<'_>, params: &EsParams, traces: &mut Vec<RunTrace>) -> Result<()> {
    let problem = suite.problem;
    let path = [label::INVARIANCE];
    let (y, shift) = dyadic_start(problem);
    let base = problem.with_optimum(vec![0.0; problem.dim()])?.with_transform(MonotoneTransform::Identity)?;
    let sigma0 = problem.spectrum_stats().smallest.sqrt() / problem.spectrum_stats().trace;
    let opts = RunOptions { record_states: true, constants: None };
    let canonical = run_with(
        &base,
        &EsState::new(y.clone(), sigma0),
        params,
        INVARIANCE_STEPS,
        &mut suite.stream(&path),
        &opts,
    )?;
    let variants: [(&str, MonotoneTransform, bool); 4] = [
        ("sqrt", MonotoneTransform::Sqrt, false),
        ("log1p", MonotoneTransform::Log1p, false),
        ("cube", MonotoneTransform::Cube, false),
        ("translated", MonotoneTransform::Identity, true),
    ];
    for (name, g, translate) in variants {
        let mut p = base.with_transform(g)?;
        let mut m0 = y.clone();
        if translate {
            p = p.with_optimum(shift.clone())?;
            m0 = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
        }
        let t = run_with(&p, &EsState::new(m0, sigma0), params, INVARIANCE_STEPS, &mut suite.stream(&path), &opts)?;
        let same = t.rows == canonical.rows && t.states == canonical.states;
        let first = t
            .rows
            .iter()
            .zip(&canonical.rows)
            .position(|(a, b)| a != b)
            .map_or_else(|| "identical".to_string(), |i| format!("first difference at t={i}"));
        suite.push(
            format!("invariance/{name}"),
            status(same),
            None,
            None,
            Some(0.0),
            &path,
            false,
            format!("{INVARIANCE_STEPS} steps; {first}"),
        );
        traces.push(t);
    }
    traces.push(canonical);
    Ok(())
}

fn check_sandwich(suite: &mut Suite<'_>, n: usize) -> Result<()> {
    let problem = suite.problem;
    let stats = problem.spectrum_stats();
    let m = default_state(problem).m;
    let g = grad_norm(problem, &m)?;
    for (k, &s) in SIGMA_NORMS.iter().enumerate() {
        let path = [label::SANDWICH, k as u64];
        let w = success_prob_sandwich(&stats, s, 0.5)?;
        let sigma = s * g / stats.trace;
        let checked = with_retry(n, &suite.stream(&path), |n, st| {
            let e = estimate_success_prob(problem, &m, sigma, n, st)?;
            Ok((e.at_least(w.lower, Z) && e.at_most(w.upper, Z), e))
        })?;
        let e = &checked.value;
        suite.push(
            format!("sandwich/sigma_norm={s}"),
            status(checked.pass),
            Some(e.mean),
            Some(w.upper),
            Some(Z * e.std_error),
            &path,
            checked.retried,
            format!("lower={} upper={} vacuous={} n={}", w.lower, w.upper, w.vacuous, e.n),
        );
    }
    Ok(())
}

/// A random start and a σ spanning small to large normalized steps.
fn moment_instance(suite: &Suite<'_>, k: usize) -> Result<(Vec<f64>, f64)> {
    let problem = suite.problem;
    let mut s = suite.stream(&[label::STATES, k as u64]);
    let m: Vec<f64> = s.normal_vector(problem.dim()).iter().zip(problem.optimum()).map(|(a, b)| a + b).collect();
    let sigma_norm = 0.5 * 2f64.powi(k as i32);
    let sigma = sigma_norm * grad_norm(problem, &m)? / problem.spectrum_stats().trace;
    Ok((m, sigma))
}

fn check_quality_gain(suite: &mut Suite<'_>, n: usize) -> Result<()> {
    let problem = suite.problem;
    let stats = problem.spectrum_stats();
    for k in 0..MOMENT_INSTANCES {
        let (m, sigma) = moment_instance(suite, k)?;
        let g = grad_norm(problem, &m)?;
        let f = problem.eval_core(&m)?;
        let path = [label::QUALITY_GAIN, k as u64];
        // the right-hand side uses an estimated success probability, so the
        // tolerance combines both standard errors
        let checked = with_retry(n, &suite.stream(&path), |n, st| {
            let lhs = estimate_log_progress(problem, &m, sigma, n, &st.substream(0))?;
            let p = estimate_success_prob(problem, &m, sigma, n, &st.substream(1))?;
            let rhs = quality_gain_rhs(&stats, g, f, sigma, p.mean)?;
            let slope = quality_gain_rhs(&stats, g, f, sigma, 1.0)?;
            let se = (lhs.std_error.powi(2) + (slope * p.std_error).powi(2)).sqrt();
            Ok((lhs.mean <= rhs + Z * se, (lhs.mean, rhs, Z * se, p.mean)))
        })?;
        let (lhs, rhs, tol, p) = checked.value;
        suite.push(
            format!("quality_gain/{k}"),
            status(checked.pass),
            Some(lhs),
            Some(rhs),
            Some(tol),
            &path,
            checked.retried,
            format!("sigma={sigma} p_succ={p}"),
        );
    }
    Ok(())
}

fn check_exp_moment(suite: &mut Suite<'_>, n: usize) -> Result<()> {
    let problem = suite.problem;
    let stats = problem.spectrum_stats();
    let bound = match exp_moment_bound(&stats, problem.dim()) {
        Ok(b) => b,
        Err(e) => {
            suite.skip("exp_moment", format!("skipped: {e}"));
            return Ok(());
        }
    };
    for k in 0..MOMENT_INSTANCES {
        let (m, sigma) = moment_instance(suite, k)?;
        let path = [label::EXP_MOMENT, k as u64];
        let checked = with_retry(n, &suite.stream(&path), |n, st| {
            let e = estimate_exp_abs(problem, &m, sigma, n, st)?;
            Ok((e.at_most(bound, Z), e))
        })?;
        let e = &checked.value;
        suite.push(
            format!("exp_moment/{k}"),
            status(checked.pass),
            Some(e.mean),
            Some(bound),
            Some(Z * e.std_error),
            &path,
            checked.retried,
            format!("sigma={sigma} n={}", e.n),
        );
    }
    Ok(())
}

/// Two states per regime at the default displacement.
fn regime_states(problem: &QuadraticProblem, c: &TheoryConstants) -> Vec<(Regime, EsState)> {
    let m = default_state(problem).m;
    let y = problem.displacement(&m).expect("dimension matches");
    let (small, large) = log_thresholds(
        &problem.spectrum_stats(),
        problem.log_core_centered(&y),
        problem.log_grad_norm_centered(&y),
        c,
    );
    let gap = large - small;
    let at = |ls: f64| EsState { m: m.clone(), log_sigma: ls };
    vec![
        (Regime::SmallStep, at(small - 1.0)),
        (Regime::SmallStep, at(small - 4.0)),
        (Regime::LargeStep, at(large + 1.0)),
        (Regime::LargeStep, at(large + 4.0)),
        (Regime::Reasonable, at(small + gap / 3.0)),
        (Regime::Reasonable, at(small + 2.0 * gap / 3.0)),
    ]
}

fn check_drift(suite: &mut Suite<'_>, c: &TheoryConstants, params: &EsParams, n: usize) -> Result<()> {
    let problem = suite.problem;
    let cap = delta_v_upper(c);
    for (k, (regime, state)) in regime_states(problem, c).into_iter().enumerate() {
        let path = [label::DRIFT, k as u64];
        let target = drift_target(regime, c);
        let checked = with_retry(n, &suite.stream(&path), |n, st| {
            let e = estimate_drift_V(problem, &state, c, params, n, st)?;
            Ok((e.estimate.at_most(target, Z), e))
        })?;
        let e = &checked.value;
        suite.push(
            format!("drift/{regime}/{k}"),
            status(checked.pass),
            Some(e.estimate.mean),
            Some(target),
            Some(Z * e.estimate.std_error),
            &path,
            checked.retried,
            format!("log_sigma={} n={}", state.log_sigma, e.estimate.n),
        );
        suite.push(
            format!("drift_pathwise_upper/{regime}/{k}"),
            status(e.max_delta <= cap + PATHWISE_TOL),
            Some(e.max_delta),
            Some(cap),
            Some(PATHWISE_TOL),
            &path,
            false,
            "max over samples of V(θ') - V(θ)".into(),
        );
        suite.push(
            format!("drift_pathwise_lower/{regime}/{k}"),
            status(e.min_lower_slack >= -PATHWISE_TOL),
            Some(e.min_lower_slack),
            Some(0.0),
            Some(PATHWISE_TOL),
            &path,
            false,
            "min over samples of ΔV minus its pathwise floor".into(),
        );
    }
    Ok(())
}

fn check_rate(
    suite: &mut Suite<'_>,
    rate: &RateEstimate,
    c: std::result::Result<&TheoryConstants, &str>,
) {
    let path = [label::RATE];
    let stats = suite.problem.spectrum_stats();
    let tol = Z * rate.trial_se;
    match lower_rate_constant(&stats) {
        Some(u) => suite.push(
            "rate/upper".into(),
            status(rate.a_hat <= u + tol),
            Some(rate.a_hat),
            Some(u),
            Some(tol),
            &path,
            false,
            format!("{} trials; a_hat <= Cond/(2(d-3))", rate.trials),
        ),
        None => suite.skip("rate/upper", "skipped: needs d > 3".into()),
    }
    match c {
        Ok(c) => suite.push(
            "rate/lower".into(),
            status(rate.a_hat >= c.b / 2.0 - tol),
            Some(rate.a_hat),
            Some(c.b / 2.0),
            Some(tol),
            &path,
            false,
            "a_hat >= B/2".into(),
        ),
        Err(why) => suite.skip("rate/lower", format!("skipped: {why}")),
    }
    suite.push(
        "rate/slope_agreement".into(),
        status(rate.slopes_agree()),
        Some(rate.max_slope_gap),
        Some(rate.slope_gap_bound),
        Some(0.0),
        &path,
        false,
        format!("norm-based a_hat = {}", rate.a_hat_norm),
    );
}

/// Runs every check the configuration supports.
pub fn verify_suite(config: &Config) -> Result<VerifyOutputs> {
    config.validate()?;
    let problem = config.problem.build()?;
    let params = config.params().resolve(problem.dim())?;
    let stats = problem.spectrum_stats();
    let n = config.run.n_mc;
    let mut suite = Suite {
        seed: config.seed,
        root: RandomStream::new(config.seed),
        problem: &problem,
        checks: Vec::new(),
    };
    let consts = constants(&stats, &params);
    let infeasibility = match &consts {
        Ok(_) => None,
        Err(Error::InfeasibleBound(why)) => Some(why.to_string()),
        Err(e) => return Err(Error::NumericalFailure(format!("constants: {e}"))),
    };
    match &consts {
        Ok(c) => suite.push(
            "constants".into(),
            status(c.check_invariants().is_ok()),
            Some(c.b),
            None,
            None,
            &[],
            false,
            format!("q_low={} q_high={} Q_H={} w={} v={}", c.q_low, c.q_high, c.q_h, c.w, c.v),
        ),
        Err(e) => suite.skip("constants", format!("infeasible: {e}")),
    }

    let mut traces = Vec::new();
    check_invariance(&mut suite, &params, &mut traces)?;
    check_sandwich(&mut suite, n)?;
    check_quality_gain(&mut suite, n)?;
    check_exp_moment(&mut suite, n)?;
    match &consts {
        Ok(c) => check_drift(&mut suite, c, &params, n)?,
        Err(e) => suite.skip("drift", format!("skipped, constants infeasible: {e}")),
    }

    let protocol = config.run.protocol();
    let state0 = default_state(&problem);
    let rate = measure_rate(&problem, &params, &state0, &protocol, &suite.stream(&[label::RATE]))?;
    let why = infeasibility.clone().unwrap_or_default();
    check_rate(&mut suite, &rate, consts.as_ref().map_err(|_| why.as_str()));

    let misscaled = EsState { m: state0.m.clone(), log_sigma: state0.log_sigma + 6.0 * std::f64::consts::LN_10 };
    let mis = run(&problem, &misscaled, &params, protocol.budget, &mut suite.stream(&[label::MISSCALED]))?;
    let last = mis.rows.last().expect("trace has an initial row");
    let span = (protocol.budget - protocol.burn_in) as f64;
    let mis_rate = -(last.log_f - mis.rows[protocol.burn_in as usize].log_f) / (2.0 * span);
    suite.push(
        "adaptation/sigma0_x1e6".into(),
        status(mis_rate > 0.0),
        Some(mis_rate),
        Some(0.0),
        None,
        &[label::MISSCALED],
        false,
        "post burn-in rate from a start with σ0 scaled by 1e6".into(),
    );
    traces.push(mis);

    let opts = RunOptions { record_states: false, constants: consts.as_ref().ok() };
    let trace = run_with(&problem, &state0, &params, protocol.budget, &mut suite.stream(&[label::TRACE]), &opts)?;
    traces.push(trace.clone());

    let mut tables = vec![("trace.csv".to_string(), trace.to_csv()?)];
    if let Some(list) = &config.sweep {
        let entries = list
            .iter()
            .map(|pc| Ok(SweepEntry { name: pc.name(), problem: pc.build()? }))
            .collect::<Result<Vec<_>>>()?;
        let schedule = config.params().schedule(problem.dim());
        let rows = sweep(&entries, schedule, &protocol, &suite.stream(&[label::SWEEP]))?;
        for (i, row) in rows.iter().enumerate() {
            let ok = row.bracket_holds() == Some(true);
            suite.push(
                format!("sweep/{}", row.problem),
                status(ok),
                row.a_hat,
                row.lower_const,
                row.rate.as_ref().map(|r| Z * r.trial_se),
                &[label::SWEEP, i as u64],
                false,
                row.status.clone(),
            );
            if let Some(r) = &row.rate {
                if !r.monotone() {
                    suite.push(format!("monotone/sweep/{}", row.problem), CheckStatus::Fail, None, None, None, &[], false, String::new());
                }
            }
        }
        tables.push(("sweep.csv".into(), sweep_csv(&rows)?));
    }

    let violations: usize = traces.iter().map(RunTrace::monotonicity_violations).sum();
    let rate_monotone = rate.monotone();
    suite.push(
        "monotonicity".into(),
        status(violations == 0 && rate_monotone),
        Some(violations as f64),
        Some(0.0),
        Some(0.0),
        &[],
        false,
        format!("{} traces and {} rate trials", traces.len(), rate.trials),
    );

    let checks = suite.checks;
    let count = |s: CheckStatus| checks.iter().filter(|c| c.status == s).count();
    let report = VerifyReport {
        tool: "oneplusone".into(),
        version: crate::VERSION.into(),
        generator: GENERATOR_ID.into(),
        seed: config.seed,
        problem: problem.to_spec(),
        params,
        p_target: params.p_target(),
        constants: consts.ok(),
        infeasibility,
        summary: Summary { pass: count(CheckStatus::Pass), fail: count(CheckStatus::Fail), skip: count(CheckStatus::Skip) },
        checks,
    };
    tables.push(("rate.csv".into(), rate_csv(&rate)?));
    Ok(VerifyOutputs { report, trace, rate, tables })
}

fn rate_csv(rate: &RateEstimate) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["trial", "a_logf", "a_norm", "accepts"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for (k, t) in rate.per_trial.iter().enumerate() {
        w.write_record([k.to_string(), t.logf.to_string(), t.norm.to_string(), t.accepts.to_string()])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
