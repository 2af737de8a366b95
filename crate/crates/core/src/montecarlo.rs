//! One-step Monte Carlo estimators with standard errors.
//!
//! Samples are drawn in fixed blocks of [`BLOCK`]; block `b` reads from
//! `stream.substream(b)`. Block statistics are merged in block order with
//! the pairwise (Chan) update, so an estimate depends only on its inputs
//! and the stream, never on thread count or the `parallel` feature.
//!
//! The success, log-progress and exp-moment estimators are scale-free: they
//! rescale `m - x*` to unit length (and σ with it) before sampling, which
//! leaves every quantity unchanged on a quadratic.

use serde::{Deserialize, Serialize};

use crate::bounds::TheoryConstants;
use crate::error::{Error, Result};
use crate::es::{step, EsParams, EsState};
use crate::parallel::{map_indexed, Execution};
use crate::potential::{delta_v_lower, potential_value};
use crate::quadratic::QuadraticProblem;
use crate::stochastic::RandomStream;

pub const BLOCK: usize = 4096;

/// Substream label for a retried check.
pub const RETRY_LABEL: u64 = 0x52_45_54_52_59;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Number of samples. For the antithetic success estimator one sample
    /// is the mean over a `(z, -z)` pair.
    pub n: u64,
    pub estimator_id: String,
}

impl McEstimate {
    /// `mean ≤ bound + k·SE`.
    pub fn at_most(&self, bound: f64, k: f64) -> bool {
        self.mean <= bound + k * self.std_error
    }

    /// `mean ≥ bound - k·SE`.
    pub fn at_least(&self, bound: f64, k: f64) -> bool {
        self.mean >= bound - k * self.std_error
    }
}

/// Sample count plus how to spread the blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Samples {
    pub n: usize,
    pub exec: Execution,
}

impl From<usize> for Samples {
    fn from(n: usize) -> Self {
        Samples { n, exec: Execution::default() }
    }
}

/// Running count, mean, sum of squared deviations, and extremes.
#[derive(Clone, Copy, Debug)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    max: f64,
    /// Minimum of the auxiliary value passed alongside each sample.
    aux_min: f64,
}

impl Moments {
    fn new() -> Self {
        Moments { n: 0, mean: 0.0, m2: 0.0, max: f64::NEG_INFINITY, aux_min: f64::INFINITY }
    }

    fn push(&mut self, x: f64, aux: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.max = self.max.max(x);
        self.aux_min = self.aux_min.min(aux);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.n == 0 {
            return self;
        }
        if self.n == 0 {
            return o;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        let mean = self.mean + delta * (o.n as f64 / n as f64);
        let m2 = self.m2 + o.m2 + delta * delta * (self.n as f64 * o.n as f64 / n as f64);
        Moments { n, mean, m2, max: self.max.max(o.max), aux_min: self.aux_min.min(o.aux_min) }
    }

    fn estimate(&self, id: &str) -> McEstimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        McEstimate {
            mean: self.mean,
            std_error: (var / self.n as f64).sqrt(),
            n: self.n,
            estimator_id: id.into(),
        }
    }
}

/// Draws `samples.n` values of `sample` in blocks and merges them in order.
/// `sample` gets a block-local stream and a scratch vector of length `d` and
/// returns the sample and an auxiliary value whose minimum is kept.
fn blocked<F>(d: usize, samples: Samples, stream: &RandomStream, sample: F) -> Result<Moments>
where
    F: Fn(&mut RandomStream, &mut [f64]) -> Result<(f64, f64)> + Sync + Send,
{
    let blocks = samples.n.div_ceil(BLOCK);
    let parts = map_indexed(blocks, samples.exec, |b| -> Result<Moments> {
        let mut s = stream.substream(b as u64);
        let mut z = vec![0.0; d];
        let mut acc = Moments::new();
        let len = BLOCK.min(samples.n - b * BLOCK);
        for _ in 0..len {
            let (x, aux) = sample(&mut s, &mut z)?;
            acc.push(x, aux);
        }
        Ok(acc)
    });
    let mut total = Moments::new();
    for p in parts {
        total = total.merge(p?);
    }
    Ok(total)
}

fn require_n(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::InvalidParams(format!("{what} needs n ≥ {min}, got {n}")));
    }
    Ok(())
}

/// Unit-length displacement, its gradient, and σ in the same units.
struct Frame<'a> {
    problem: &'a QuadraticProblem,
    y: Vec<f64>,
    grad: Vec<f64>,
    h: f64,
    sigma: f64,
}

impl<'a> Frame<'a> {
    fn new(problem: &'a QuadraticProblem, m: &[f64], sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma must be positive and finite, got {sigma}")));
        }
        let y = problem.displacement(m)?;
        // scale through the max entry first so tiny displacements do not
        // underflow in the sum of squares
        let max = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max == 0.0 {
            return Err(Error::DegenerateState);
        }
        let scaled: Vec<f64> = y.iter().map(|v| v / max).collect();
        let n2 = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y: Vec<f64> = scaled.iter().map(|v| v / n2).collect();
        let sigma = sigma / max / n2;
        let grad = problem.hessian_apply(&y);
        let h = problem.core_centered(&y);
        Ok(Frame { problem, y, grad, h, sigma })
    }

    /// `h(y + s z) - h(y)` via `s gᵀz + ½ s² zᵀHz`, for `s = ±σ`.
    fn deltas(&self, z: &[f64]) -> (f64, f64) {
        let gz: f64 = self.grad.iter().zip(z).map(|(a, b)| a * b).sum();
        let zhz = self.problem.hess_form(z, z);
        let quad = 0.5 * self.sigma * self.sigma * zhz;
        (self.sigma * gz + quad, -self.sigma * gz + quad)
    }

    /// `log(h(y + σz)/h(y))` given the difference `delta`.
    fn log_ratio(&self, z: &[f64], delta: f64) -> f64 {
        let rel = delta / self.h;
        if rel > -0.5 {
            return rel.ln_1p();
        }
        // close to the optimum: evaluate the candidate directly
        let cand: Vec<f64> = self.y.iter().zip(z).map(|(a, b)| a + self.sigma * b).collect();
        self.problem.log_core_centered(&cand) - self.h.ln()
    }
}

/// `Pr[f(m + σz) ≤ f(m)]` with antithetic pairs `(z, -z)`.
pub fn estimate_success_prob(
    problem: &QuadraticProblem,
    m: &[f64],
    sigma: f64,
    samples: impl Into<Samples>,
    stream: &RandomStream,
) -> Result<McEstimate> {
    let samples = samples.into();
    require_n(samples.n, 100, "estimate_success_prob")?;
    let frame = Frame::new(problem, m, sigma)?;
    let acc = blocked(problem.dim(), samples, stream, |s, z| {
        s.fill_normal(z);
        let (plus, minus) = frame.deltas(z);
        let x = 0.5 * ((plus <= 0.0) as u8 as f64 + (minus <= 0.0) as u8 as f64);
        Ok((x, x))
    })?;
    Ok(acc.estimate("success_prob/antithetic"))
}

/// `E[log(f(m+σz)/f(m))·1{f(m+σz) ≤ f(m)}]`.
pub fn estimate_log_progress(
    problem: &QuadraticProblem,
    m: &[f64],
    sigma: f64,
    samples: impl Into<Samples>,
    stream: &RandomStream,
) -> Result<McEstimate> {
    let samples = samples.into();
    require_n(samples.n, 100, "estimate_log_progress")?;
    let frame = Frame::new(problem, m, sigma)?;
    let acc = blocked(problem.dim(), samples, stream, |s, z| {
        s.fill_normal(z);
        let (delta, _) = frame.deltas(z);
        let x = if delta <= 0.0 { frame.log_ratio(z, delta).min(0.0) } else { 0.0 };
        Ok((x, x))
    })?;
    Ok(acc.estimate("log_progress"))
}

/// `E[exp(|log(f(m+σz)/f(m))|·1{f(m+σz) ≤ f(m)})]`.
pub fn estimate_exp_abs(
    problem: &QuadraticProblem,
    m: &[f64],
    sigma: f64,
    samples: impl Into<Samples>,
    stream: &RandomStream,
) -> Result<McEstimate> {
    let samples = samples.into();
    require_n(samples.n, 1000, "estimate_exp_abs")?;
    let frame = Frame::new(problem, m, sigma)?;
    let acc = blocked(problem.dim(), samples, stream, |s, z| {
        s.fill_normal(z);
        let (delta, _) = frame.deltas(z);
        let x = if delta <= 0.0 { (-frame.log_ratio(z, delta).min(0.0)).exp() } else { 1.0 };
        Ok((x, x))
    })?;
    Ok(acc.estimate("exp_abs"))
}

/// Drift estimate plus the pathwise extremes seen while sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub estimate: McEstimate,
    /// Largest sampled `V_{t+1} - V_t`.
    pub max_delta: f64,
    /// Smallest `ΔV - ((1+v)·log(f'/f) - 2v·log α↑ + v·log α↓)`; never
    /// negative on a correct implementation.
    pub min_lower_slack: f64,
}

/// `E[V(θ_{t+1}) - V(θ_t) | θ_t = state]`, one ES step per sample.
#[allow(non_snake_case)]
pub fn estimate_drift_V(
    problem: &QuadraticProblem,
    state: &EsState,
    constants: &TheoryConstants,
    params: &EsParams,
    samples: impl Into<Samples>,
    stream: &RandomStream,
) -> Result<DriftEstimate> {
    let samples = samples.into();
    require_n(samples.n, 1000, "estimate_drift_V")?;
    let v0 = potential_value(state, problem, constants)?;
    let acc = blocked(problem.dim(), samples, stream, |s, z| {
        s.fill_normal(z);
        let out = step(state, z, problem, params)?;
        let dv = potential_value(&out.next, problem, constants)? - v0;
        Ok((dv, dv - delta_v_lower(constants, out.log_f_ratio)))
    })?;
    Ok(DriftEstimate {
        estimate: acc.estimate("drift_v"),
        max_delta: acc.max,
        min_lower_slack: acc.aux_min,
    })
}

/// Outcome of a statistical check under the retry policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checked<T> {
    pub pass: bool,
    pub retried: bool,
    pub value: T,
}

/// Runs `check(n, stream)`; on failure reruns once with `4n` samples on the
/// retry substream and reports that outcome.
pub fn with_retry<T>(
    n: usize,
    stream: &RandomStream,
    check: impl Fn(usize, &RandomStream) -> Result<(bool, T)>,
) -> Result<Checked<T>> {
    let (pass, value) = check(n, stream)?;
    if pass {
        return Ok(Checked { pass, retried: false, value });
    }
    let (pass, value) = check(4 * n, &stream.substream(RETRY_LABEL))?;
    Ok(Checked { pass, retried: true, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadratic::Spectrum;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut whole = Moments::new();
        xs.iter().for_each(|&x| whole.push(x, x));
        let mut a = Moments::new();
        let mut b = Moments::new();
        xs[..333].iter().for_each(|&x| a.push(x, x));
        xs[333..].iter().for_each(|&x| b.push(x, x));
        let m = a.merge(b);
        assert_eq!(m.n, whole.n);
        assert!((m.mean - whole.mean).abs() < 1e-12);
        assert!((m.m2 - whole.m2).abs() < 1e-9 * whole.m2);
    }

    #[test]
    fn execution_mode_does_not_change_bits() {
        let p = QuadraticProblem::centered(Spectrum::ellipsoid(10, 5.0).unwrap());
        let m = vec![1.0; 10];
        let s = RandomStream::new(3);
        let seq = Samples { n: 10_000, exec: Execution::Sequential };
        let par = Samples { n: 10_000, exec: Execution::Parallel };
        assert_eq!(
            estimate_log_progress(&p, &m, 0.1, seq, &s).unwrap(),
            estimate_log_progress(&p, &m, 0.1, par, &s).unwrap()
        );
    }

    #[test]
    fn sample_floor_enforced() {
        let p = QuadraticProblem::centered(Spectrum::sphere(4).unwrap());
        let s = RandomStream::new(1);
        assert!(estimate_success_prob(&p, &[1.0; 4], 0.1, 99, &s).is_err());
        assert!(estimate_exp_abs(&p, &[1.0; 4], 0.1, 999, &s).is_err());
    }

    #[test]
    fn scale_free() {
        let p = QuadraticProblem::centered(Spectrum::ellipsoid(6, 10.0).unwrap());
        let s = RandomStream::new(9);
        let a = estimate_success_prob(&p, &[1.0; 6], 0.3, 4096, &s).unwrap();
        let tiny = 2f64.powi(-600);
        let b = estimate_success_prob(&p, &[tiny; 6], 0.3 * tiny, 4096, &s).unwrap();
        assert_eq!(a.mean, b.mean);
    }
}
