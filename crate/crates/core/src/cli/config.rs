//! JSON configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::{AlphaSchedule, EsParams};
use crate::experiments::RateProtocol;
use crate::quadratic::{MonotoneTransform, ProblemSpec, QuadraticProblem, Spectrum};

/// A problem given either by a spectrum shorthand or in full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemConfig {
    Shorthand(ShorthandProblem),
    Full(ProblemSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShorthandProblem {
    /// `sphere`, `cigar:ξ`, `discus:ξ` or `ellipsoid:ξ`.
    pub spectrum: String,
    pub d: usize,
    #[serde(default)]
    pub transform: MonotoneTransform,
    #[serde(default)]
    pub rotation_seed: Option<u64>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<QuadraticProblem> {
        match self {
            ProblemConfig::Shorthand(s) => {
                let spectrum = Spectrum::from_shorthand(&s.spectrum, s.d)?;
                QuadraticProblem::from_spectrum(spectrum, vec![0.0; s.d], s.transform, s.rotation_seed)
            }
            ProblemConfig::Full(spec) => QuadraticProblem::from_spec(spec),
        }
    }

    /// Short label for tables.
    pub fn name(&self) -> String {
        match self {
            ProblemConfig::Shorthand(s) => format!("{}/d={}", s.spectrum, s.d),
            ProblemConfig::Full(spec) => format!("custom/d={}", spec.eigenvalues.len()),
        }
    }
}

/// Either fixed factors or a dimension-scaled schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsConfig {
    Fixed(EsParams),
    Scaled {
        schedule: AlphaSchedule,
    },
}

impl ParamsConfig {
    pub fn resolve(&self, d: usize) -> Result<EsParams> {
        match self {
            ParamsConfig::Fixed(p) => {
                p.validate()?;
                Ok(*p)
            }
            ParamsConfig::Scaled { schedule } => schedule.params(d),
        }
    }

    /// Schedule used for sweeps: fixed factors cannot follow `d`, so they
    /// are converted to the schedule that reproduces them at `d`.
    pub fn schedule(&self, d: usize) -> AlphaSchedule {
        match self {
            ParamsConfig::Fixed(p) => AlphaSchedule {
                up: p.alpha_up.ln() * d as f64,
                down: -p.alpha_down.ln() * d as f64,
            },
            ParamsConfig::Scaled { schedule } => *schedule,
        }
    }
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig::Scaled { schedule: AlphaSchedule::ONE_FIFTH }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_budget")]
    pub budget: u64,
    /// Defaults to 10% of the budget.
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Samples per Monte Carlo estimate.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

fn default_budget() -> u64 {
    20_000
}
fn default_trials() -> usize {
    20
}
fn default_n_mc() -> usize {
    100_000
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { budget: default_budget(), burn_in: None, trials: default_trials(), n_mc: default_n_mc() }
    }
}

impl RunConfig {
    pub fn protocol(&self) -> RateProtocol {
        let mut p = RateProtocol::new(self.budget, self.trials);
        if let Some(b) = self.burn_in {
            p.burn_in = b;
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub params: Option<ParamsConfig>,
    #[serde(default)]
    pub run: RunConfig,
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    /// Extra problems for the sweep checks.
    #[serde(default)]
    pub sweep: Option<Vec<ProblemConfig>>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn params(&self) -> ParamsConfig {
        self.params.unwrap_or_default()
    }

    /// Schema-level checks beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigError(msg));
        let problem = self.problem.build().map_err(|e| Error::ConfigError(format!("problem: {e}")))?;
        self.params()
            .resolve(problem.dim())
            .map_err(|e| Error::ConfigError(format!("params: {e}")))?;
        let p = self.run.protocol();
        if p.budget == 0 || p.burn_in >= p.budget {
            return bad(format!("run: need budget > burn_in, got {} and {}", p.budget, p.burn_in));
        }
        if p.trials == 0 {
            return bad("run: trials must be at least 1".into());
        }
        if self.run.n_mc < 1000 {
            return bad(format!("run: n_mc must be at least 1000, got {}", self.run.n_mc));
        }
        for (i, pc) in self.sweep.iter().flatten().enumerate() {
            pc.build().map_err(|e| Error::ConfigError(format!("sweep[{i}]: {e}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"problem": {"spectrum": "sphere", "d": 8}, "seed": 1}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = Config::from_json(MINIMAL).unwrap();
        assert_eq!(c.run.budget, 20_000);
        assert_eq!(c.run.protocol().burn_in, 2_000);
        assert_eq!(c.params(), ParamsConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"problem": {"spectrum": "sphere", "d": 8}, "seed": 1, "extra": 0}"#;
        assert!(matches!(Config::from_json(text), Err(Error::ConfigError(_))));
        let text = r#"{"problem": {"spectrum": "sphere", "d": 8}, "seed": 1, "run": {"budgett": 5}}"#;
        assert!(Config::from_json(text).is_err());
    }

    #[test]
    fn params_forms() {
        let fixed: ParamsConfig = serde_json::from_str(r#"{"alpha_up": 2.0, "alpha_down": 0.5}"#).unwrap();
        assert_eq!(fixed.resolve(10).unwrap().p_target(), 0.5);
        let scaled: ParamsConfig = serde_json::from_str(r#"{"schedule": {"up": 1.0, "down": 0.8}}"#).unwrap();
        assert!((scaled.resolve(10).unwrap().p_target() - 4.0 / 9.0).abs() < 1e-12);
        let s = fixed.schedule(10);
        let back = s.params(10).unwrap();
        assert!((back.alpha_up - 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_problem_spec_accepted() {
        let text = r#"{"problem": {"eigenvalues": [2, 1], "optimum": [0, 0]}, "seed": 3}"#;
        let c = Config::from_json(text).unwrap();
        assert_eq!(c.problem.build().unwrap().dim(), 2);
    }
}
