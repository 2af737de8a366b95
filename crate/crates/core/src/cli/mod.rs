//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed (or the requested constants are
//! infeasible), 2 configuration or usage error.

pub mod config;
pub mod output;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bounds::{constants, trace_condition, TheoryConstants};
use crate::error::{Error, Result};
use crate::es::{run_with, EsParams, EsState, RunOptions};
use crate::experiments::{default_state, measure_rate, sweep, sweep_csv, verify_suite, CheckStatus, SweepEntry};
use crate::montecarlo::{estimate_drift_V, with_retry, Samples};
use crate::potential::{classify, delta_v_upper, drift_target};
use crate::quadratic::{ProblemSpec, QuadraticProblem};
use crate::stochastic::{RandomStream, GENERATOR_ID};
use config::{Config, OutputConfig, ParamsConfig, ProblemConfig, RunConfig, ShorthandProblem};
use output::{sidecar_path, write_atomic};
use svg::{line_plot, Series};

#[derive(Parser, Debug)]
#[command(name = "oneplusone", version, about = "(1+1)-ES with success-based step-size adaptation on convex quadratics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the ES once and write its trace as CSV plus a JSON sidecar.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write an SVG plot of log f and log σ.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Print the theory constants for a problem as JSON.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the one-step potential drift at a state.
    Drift {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON state `{"m": [...], "log_sigma": x}`; defaults to the standard start.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Monte Carlo samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Measure the empirical convergence rate over independent trials.
    Rate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        burn_in: Option<u64>,
    },
    /// Measure rates over a list of problems and write a CSV table.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Dimensions for the inline spectrum, comma separated.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        burn_in: Option<u64>,
    },
    /// Run the verification suite and write report.json.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem JSON `{"eigenvalues", "optimum", "transform", "rotation_seed"}`.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Dimension for an inline spectrum.
    #[arg(long)]
    d: Option<usize>,
    /// Inline spectrum: sphere, cigar:ξ, discus:ξ or ellipsoid:ξ.
    #[arg(long)]
    spectrum: Option<String>,
    #[arg(long)]
    alpha_up: Option<f64>,
    #[arg(long)]
    alpha_down: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    /// Output file (run, sweep) or directory (verify).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    /// Merges the config file (if any) with inline flags; flags win.
    fn config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::from_path(path)?,
            None => Config {
                problem: ProblemConfig::Shorthand(ShorthandProblem {
                    spectrum: "sphere".into(),
                    d: 0,
                    transform: Default::default(),
                    rotation_seed: None,
                }),
                params: None,
                run: RunConfig::default(),
                seed: 0,
                output: OutputConfig::default(),
                sweep: None,
            },
        };
        if let Some(path) = &self.problem {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::ConfigError(format!("cannot read {}: {e}", path.display())))?;
            let spec: ProblemSpec = serde_json::from_str(&text).map_err(|e| Error::ConfigError(format!("problem: {e}")))?;
            cfg.problem = ProblemConfig::Full(spec);
        } else if self.d.is_some() || self.spectrum.is_some() {
            let d = self.d.ok_or_else(|| Error::ConfigError("--spectrum needs --d".into()))?;
            cfg.problem = ProblemConfig::Shorthand(ShorthandProblem {
                spectrum: self.spectrum.clone().unwrap_or_else(|| "sphere".into()),
                d,
                transform: Default::default(),
                rotation_seed: None,
            });
        } else if self.config.is_none() {
            return Err(Error::ConfigError("give --config, --problem, or --d/--spectrum".into()));
        }
        match (self.alpha_up, self.alpha_down) {
            (Some(up), Some(down)) => cfg.params = Some(ParamsConfig::Fixed(EsParams { alpha_up: up, alpha_down: down })),
            (None, None) => {}
            _ => return Err(Error::ConfigError("--alpha-up and --alpha-down go together".into())),
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.run.budget = b;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }
}

fn metadata(cfg: &Config) -> serde_json::Value {
    json!({
        "tool": "oneplusone",
        "version": crate::VERSION,
        "generator": GENERATOR_ID,
        "seed": cfg.seed,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn setup(common: &CommonArgs) -> Result<(Config, QuadraticProblem, EsParams)> {
    let cfg = common.config()?;
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let params = cfg.params().resolve(problem.dim())?;
    Ok((cfg, problem, params))
}

fn cmd_run(common: &CommonArgs, plot: Option<&Path>) -> Result<i32> {
    let (cfg, problem, params) = setup(common)?;
    let consts = constants(&problem.spectrum_stats(), &params).ok();
    let state0 = default_state(&problem);
    let opts = RunOptions { record_states: false, constants: consts.as_ref() };
    let mut stream = RandomStream::new(cfg.seed);
    let trace = run_with(&problem, &state0, &params, cfg.run.budget, &mut stream, &opts)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.join("trace.csv"));
    write_atomic(&out, trace.to_csv()?.as_bytes())?;
    write_atomic(&sidecar_path(&out), to_json(&trace.metadata)?.as_bytes())?;
    if let Some(path) = plot {
        let series = [
            Series { name: "log f", points: trace.rows.iter().map(|r| (r.t as f64, r.log_f)).collect() },
            Series { name: "log sigma", points: trace.rows.iter().map(|r| (r.t as f64, r.log_sigma)).collect() },
        ];
        let note = format!("oneplusone {} seed={} generator={}", crate::VERSION, cfg.seed, GENERATOR_ID);
        write_atomic(path, line_plot("ES trace", "t", "log", &series, &note).as_bytes())?;
    }
    eprintln!("wrote {} ({} rows)", out.display(), trace.rows.len());
    Ok(0)
}

fn cmd_bounds(common: &CommonArgs) -> Result<i32> {
    let (cfg, problem, params) = setup(common)?;
    let stats = problem.spectrum_stats();
    let tc = trace_condition(&stats);
    let (consts, infeasibility, code) = match constants(&stats, &params) {
        Ok(c) => (Some(c), None, 0),
        Err(Error::InfeasibleBound(why)) => {
            eprintln!("constants infeasible: {why}");
            (None, Some(why), 1)
        }
        Err(e) => return Err(e),
    };
    let out = json!({
        "metadata": metadata(&cfg),
        "stats": stats,
        "params": params,
        "p_target": params.p_target(),
        "trace_condition": tc,
        "constants": consts,
        "infeasibility": infeasibility,
    });
    print!("{}", to_json(&out)?);
    Ok(code)
}

fn cmd_drift(common: &CommonArgs, state: Option<&Path>, n: Option<usize>) -> Result<i32> {
    let (cfg, problem, params) = setup(common)?;
    let state = match state {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::ConfigError(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<EsState>(&text).map_err(|e| Error::ConfigError(format!("state: {e}")))?
        }
        None => default_state(&problem),
    };
    let c: TheoryConstants = match constants(&problem.spectrum_stats(), &params) {
        Ok(c) => c,
        Err(Error::InfeasibleBound(why)) => {
            eprintln!("constants infeasible: {why}");
            let out = json!({"metadata": metadata(&cfg), "infeasibility": why, "pass": false});
            print!("{}", to_json(&out)?);
            return Ok(1);
        }
        Err(e) => return Err(e),
    };
    let regime = classify(&state, &problem, &c)?;
    let bound = drift_target(regime, &c);
    let n = n.unwrap_or(cfg.run.n_mc);
    let checked = with_retry(n, &RandomStream::new(cfg.seed), |n, st| {
        let e = estimate_drift_V(&problem, &state, &c, &params, Samples::from(n), st)?;
        Ok((e.estimate.at_most(bound, 3.0), e))
    })?;
    let cap = delta_v_upper(&c);
    let pathwise = checked.value.max_delta <= cap + 1e-12 && checked.value.min_lower_slack >= -1e-12;
    let pass = checked.pass && pathwise;
    let out = json!({
        "metadata": metadata(&cfg),
        "regime": regime,
        "estimate": checked.value.estimate,
        "bound": bound,
        "max_delta": checked.value.max_delta,
        "pathwise_cap": cap,
        "min_lower_slack": checked.value.min_lower_slack,
        "retried": checked.retried,
        "pass": pass,
    });
    print!("{}", to_json(&out)?);
    Ok(if pass { 0 } else { 1 })
}

fn cmd_rate(common: &CommonArgs, trials: Option<usize>, burn_in: Option<u64>) -> Result<i32> {
    let mut cfg = common.config()?;
    if let Some(t) = trials {
        cfg.run.trials = t;
    }
    if burn_in.is_some() {
        cfg.run.burn_in = burn_in;
    }
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let params = cfg.params().resolve(problem.dim())?;
    let est = measure_rate(&problem, &params, &default_state(&problem), &cfg.run.protocol(), &RandomStream::new(cfg.seed))?;
    let out = json!({ "metadata": metadata(&cfg), "params": params, "rate": est });
    let text = to_json(&out)?;
    match &common.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_sweep(common: &CommonArgs, dims: &[usize], trials: Option<usize>, burn_in: Option<u64>) -> Result<i32> {
    let mut cfg = if dims.is_empty() {
        common.config()?
    } else {
        let first = CommonArgs { d: Some(dims[0]), ..common.clone() };
        first.config()?
    };
    if let Some(t) = trials {
        cfg.run.trials = t;
    }
    if burn_in.is_some() {
        cfg.run.burn_in = burn_in;
    }
    let list: Vec<ProblemConfig> = if dims.is_empty() {
        cfg.sweep.clone().ok_or_else(|| Error::ConfigError("sweep needs --dims or a `sweep` list in the config".into()))?
    } else {
        let spectrum = common.spectrum.clone().unwrap_or_else(|| "sphere".into());
        dims.iter()
            .map(|&d| {
                ProblemConfig::Shorthand(ShorthandProblem {
                    spectrum: spectrum.clone(),
                    d,
                    transform: Default::default(),
                    rotation_seed: None,
                })
            })
            .collect()
    };
    cfg.sweep = Some(list.clone());
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let schedule = cfg.params().schedule(problem.dim());
    let entries = list
        .iter()
        .map(|pc| Ok(SweepEntry { name: pc.name(), problem: pc.build()? }))
        .collect::<Result<Vec<_>>>()?;
    let rows = sweep(&entries, schedule, &cfg.run.protocol(), &RandomStream::new(cfg.seed))?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.join("sweep.csv"));
    write_atomic(&out, sweep_csv(&rows)?.as_bytes())?;
    let meta = json!({ "metadata": metadata(&cfg), "schedule": schedule, "protocol": cfg.run.protocol() });
    write_atomic(&sidecar_path(&out), to_json(&meta)?.as_bytes())?;
    let points: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.a_hat.map(|a| (r.d as f64, a))).collect();
    let note = format!("oneplusone {} seed={} generator={}", crate::VERSION, cfg.seed, GENERATOR_ID);
    let svg = line_plot("rate vs dimension", "d", "a_hat", &[Series { name: "a_hat", points }], &note);
    write_atomic(&out.with_extension("svg"), svg.as_bytes())?;
    let ok = rows.iter().all(|r| r.bracket_holds() == Some(true));
    eprintln!("wrote {} ({} rows)", out.display(), rows.len());
    Ok(if ok { 0 } else { 1 })
}

fn cmd_verify(common: &CommonArgs) -> Result<i32> {
    let cfg = common.config()?;
    let outputs = verify_suite(&cfg)?;
    let dir = &cfg.output.dir;
    write_atomic(&dir.join("report.json"), to_json(&outputs.report)?.as_bytes())?;
    for (name, body) in &outputs.tables {
        write_atomic(&dir.join(name), body.as_bytes())?;
    }
    write_atomic(&dir.join("trace.meta.json"), to_json(&outputs.trace.metadata)?.as_bytes())?;
    let series = [Series {
        name: "log f",
        points: outputs.trace.rows.iter().map(|r| (r.t as f64, r.log_f)).collect(),
    }];
    let note = format!("oneplusone {} seed={} generator={}", crate::VERSION, cfg.seed, GENERATOR_ID);
    write_atomic(&dir.join("trace.svg"), line_plot("log f vs t", "t", "log f", &series, &note).as_bytes())?;
    let s = &outputs.report.summary;
    for c in outputs.report.checks.iter().filter(|c| c.status != CheckStatus::Pass) {
        eprintln!("{:?} {}: {}", c.status, c.check_id, c.detail);
    }
    eprintln!("verify: {} pass, {} fail, {} skip; report in {}", s.pass, s.fail, s.skip, dir.display());
    Ok(if outputs.report.all_passed() { 0 } else { 1 })
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigError(_)
        | Error::InvalidParams(_)
        | Error::InvalidSpectrum(_)
        | Error::DimensionMismatch { .. }
        | Error::DomainError(_)
        | Error::DegenerateStart
        | Error::DegenerateState
        | Error::Json(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run { common, plot } => cmd_run(common, plot.as_deref()),
        Command::Bounds { common } => cmd_bounds(common),
        Command::Drift { common, state, n } => cmd_drift(common, state.as_deref(), *n),
        Command::Rate { common, trials, burn_in } => cmd_rate(common, *trials, *burn_in),
        Command::Sweep { common, dims, trials, burn_in } => cmd_sweep(common, dims, *trials, *burn_in),
        Command::Verify { common } => cmd_verify(common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["oneplusone", "frobnicate"]), 2);
        assert_eq!(main_with_args(["oneplusone", "bounds"]), 2);
        assert_eq!(main_with_args(["oneplusone", "bounds", "--d", "8", "--alpha-up", "2"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(main_with_args(["oneplusone", "--help"]), 0);
    }
}
