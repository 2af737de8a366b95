//! Convex quadratic objectives and their monotone transforms.
//!
//! A problem is `f(x) = g(h(x - x*))` with core `h(y) = ½ yᵀ H y` and
//! `H = R diag(λ) Rᵀ`. The factor ½ is part of the core everywhere; the
//! un-halved form `g((x - x*)ᵀ H (x - x*))` is the same problem with the
//! transform `g(2·)`.
//!
//! Methods ending in `_centered` take the displacement `y = x - x*` instead
//! of an absolute point. The ES runner and the estimators work in that frame.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::stochastic::{random_rotation, RandomStream};

/// Below this the direct quadratic-form sum may have lost terms to underflow;
/// the log-domain routines switch to a power-of-two rescaled evaluation.
const DIRECT_SUM_FLOOR: f64 = 1e-280;
const DIRECT_SUM_CEIL: f64 = 1e280;

/// Strictly increasing maps applied on top of the core value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneTransform {
    #[default]
    Identity,
    AffinePositive { a: f64, b: f64 },
    Sqrt,
    Log1p,
    Cube,
}

impl MonotoneTransform {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MonotoneTransform::AffinePositive { a, b } if !(a > 0.0 && a.is_finite() && b.is_finite()) => {
                Err(Error::InvalidParams(format!("affine transform needs a > 0, got a={a}, b={b}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, core: f64) -> f64 {
        match *self {
            MonotoneTransform::Identity => core,
            MonotoneTransform::AffinePositive { a, b } => a * core + b,
            MonotoneTransform::Sqrt => core.sqrt(),
            MonotoneTransform::Log1p => core.ln_1p(),
            MonotoneTransform::Cube => core * core * core,
        }
    }
}

impl fmt::Display for MonotoneTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonotoneTransform::Identity => write!(f, "identity"),
            MonotoneTransform::AffinePositive { a, b } => write!(f, "affine({a},{b})"),
            MonotoneTransform::Sqrt => write!(f, "sqrt"),
            MonotoneTransform::Log1p => write!(f, "log1p"),
            MonotoneTransform::Cube => write!(f, "cube"),
        }
    }
}

/// Hessian eigenvalues, positive and sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidSpectrum("dimension must be at least 1".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues must be positive and finite, found {bad}"
            )));
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { eigenvalues })
    }

    pub fn sphere(d: usize) -> Result<Self> {
        Self::new(vec![1.0; d])
    }

    /// diag(ξ, …, ξ, 1)
    pub fn cigar(d: usize, xi: f64) -> Result<Self> {
        let mut e = vec![xi; d.saturating_sub(1)];
        e.push(1.0);
        Self::new(e)
    }

    /// diag(ξ, 1, …, 1)
    pub fn discus(d: usize, xi: f64) -> Result<Self> {
        if d == 0 {
            return Self::new(Vec::new());
        }
        let mut e = vec![1.0; d];
        e[0] = xi;
        Self::new(e)
    }

    /// Log-uniform eigenvalues from ξ down to 1.
    pub fn ellipsoid(d: usize, xi: f64) -> Result<Self> {
        if d == 1 {
            return Self::new(vec![1.0]);
        }
        let e = (0..d)
            .map(|i| xi.powf((d - 1 - i) as f64 / (d - 1) as f64))
            .collect();
        Self::new(e)
    }

    /// Parses `sphere`, `cigar:ξ`, `discus:ξ` or `ellipsoid:ξ`.
    pub fn from_shorthand(spec: &str, d: usize) -> Result<Self> {
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        let xi = || -> Result<f64> {
            let raw = arg.ok_or_else(|| Error::ConfigError(format!("spectrum `{spec}` needs a `:ξ` suffix")))?;
            let xi: f64 = raw
                .parse()
                .map_err(|_| Error::ConfigError(format!("bad ξ in spectrum `{spec}`")))?;
            if xi >= 1.0 && xi.is_finite() {
                Ok(xi)
            } else {
                Err(Error::ConfigError(format!("ξ must be a finite value ≥ 1 in `{spec}`")))
            }
        };
        match kind {
            "sphere" if arg.is_none() => Self::sphere(d),
            "cigar" => Self::cigar(d, xi()?),
            "discus" => Self::discus(d, xi()?),
            "ellipsoid" => Self::ellipsoid(d, xi()?),
            _ => Err(Error::ConfigError(format!("unknown spectrum `{spec}`"))),
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn stats(&self) -> SpectrumStats {
        let largest = self.eigenvalues[0];
        let smallest = *self.eigenvalues.last().unwrap();
        let trace: f64 = self.eigenvalues.iter().sum();
        let trace_sq: f64 = self.eigenvalues.iter().map(|l| l * l).sum();
        SpectrumStats {
            dim: self.dim(),
            smallest,
            largest,
            trace,
            trace_sq,
            cond: largest / smallest,
            ratio: trace_sq / (trace * trace),
        }
    }
}

/// Spectral summary used by every bound formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumStats {
    pub dim: usize,
    /// L
    pub smallest: f64,
    /// U
    pub largest: f64,
    /// Tr(H)
    pub trace: f64,
    /// Tr(H²)
    pub trace_sq: f64,
    /// U / L
    pub cond: f64,
    /// r = Tr(H²) / Tr(H)²
    pub ratio: f64,
}

impl SpectrumStats {
    /// Stats with an arbitrary trace ratio, for probing the bound functions
    /// in limits no finite spectrum reaches (e.g. r → 0).
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            dim: usize::MAX,
            smallest: 1.0,
            largest: 1.0,
            trace: 1.0,
            trace_sq: ratio,
            cond: 1.0,
            ratio,
        }
    }
}

/// JSON form of a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub eigenvalues: Vec<f64>,
    pub optimum: Vec<f64>,
    #[serde(default = "default_transform")]
    pub transform: MonotoneTransform,
    #[serde(default)]
    pub rotation_seed: Option<u64>,
}

fn default_transform() -> MonotoneTransform {
    MonotoneTransform::Identity
}

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    spectrum: Spectrum,
    rotation: Option<DMatrix<f64>>,
    rotation_seed: Option<u64>,
    optimum: Vec<f64>,
    transform: MonotoneTransform,
    stats: SpectrumStats,
}

/// Stream label reserved for rotation sampling.
const ROTATION_LABEL: u64 = 0x524f_5441_5445;

impl QuadraticProblem {
    pub fn new(
        eigenvalues: Vec<f64>,
        optimum: Vec<f64>,
        transform: MonotoneTransform,
        rotation_seed: Option<u64>,
    ) -> Result<Self> {
        let spectrum = Spectrum::new(eigenvalues)?;
        Self::from_spectrum(spectrum, optimum, transform, rotation_seed)
    }

    pub fn from_spectrum(
        spectrum: Spectrum,
        optimum: Vec<f64>,
        transform: MonotoneTransform,
        rotation_seed: Option<u64>,
    ) -> Result<Self> {
        check_dim(spectrum.dim(), optimum.len())?;
        transform.validate()?;
        if optimum.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("optimum must be finite".into()));
        }
        let rotation = rotation_seed.map(|seed| {
            let mut stream = RandomStream::new(seed).substream(ROTATION_LABEL);
            random_rotation(&mut stream, spectrum.dim())
        });
        let stats = spectrum.stats();
        Ok(Self {
            spectrum,
            rotation,
            rotation_seed,
            optimum,
            transform,
            stats,
        })
    }

    /// Unrotated problem centered at the origin with the identity transform.
    pub fn centered(spectrum: Spectrum) -> Self {
        let d = spectrum.dim();
        Self::from_spectrum(spectrum, vec![0.0; d], MonotoneTransform::Identity, None)
            .expect("origin-centered problem is always valid")
    }

    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        Self::new(
            spec.eigenvalues.clone(),
            spec.optimum.clone(),
            spec.transform,
            spec.rotation_seed,
        )
    }

    pub fn to_spec(&self) -> ProblemSpec {
        ProblemSpec {
            eigenvalues: self.spectrum.eigenvalues.clone(),
            optimum: self.optimum.clone(),
            transform: self.transform,
            rotation_seed: self.rotation_seed,
        }
    }

    pub fn with_transform(&self, transform: MonotoneTransform) -> Result<Self> {
        transform.validate()?;
        Ok(Self { transform, ..self.clone() })
    }

    pub fn with_optimum(&self, optimum: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), optimum.len())?;
        Ok(Self { optimum, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn transform(&self) -> MonotoneTransform {
        self.transform
    }

    pub fn rotation(&self) -> Option<&DMatrix<f64>> {
        self.rotation.as_ref()
    }

    pub fn spectrum_stats(&self) -> SpectrumStats {
        self.stats
    }

    pub fn displacement(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter().zip(&self.optimum).map(|(a, b)| a - b).collect())
    }

    /// `f(x) = g(h(x - x*))`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let y = self.displacement(x)?;
        Ok(self.transform.apply(self.core_centered(&y)))
    }

    /// `h(x - x*)`, without the transform.
    pub fn eval_core(&self, x: &[f64]) -> Result<f64> {
        let y = self.displacement(x)?;
        Ok(self.core_centered(&y))
    }

    /// `∇h(x - x*) = H (x - x*)`.
    pub fn gradient_core(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.displacement(x)?;
        Ok(self.hessian_apply(&y))
    }

    /// Step length `s ≥ 0` minimizing `h(m + s z)` along the ray.
    pub fn directional_min_scale(&self, m: &[f64], z: &[f64]) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        if z.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateDirection);
        }
        let y = self.displacement(m)?;
        let mhz = self.hess_form(&y, z);
        if mhz >= 0.0 {
            return Ok(0.0);
        }
        Ok(-mhz / self.hess_form(z, z))
    }

    /// Coordinates of `v` in the eigenbasis (`Rᵀ v`).
    fn to_eigenbasis<'a>(&self, v: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        match &self.rotation {
            None => std::borrow::Cow::Borrowed(v),
            Some(r) => {
                let rv = r.tr_mul(&DVector::from_column_slice(v));
                std::borrow::Cow::Owned(rv.as_slice().to_vec())
            }
        }
    }

    /// `uᵀ H v`.
    pub fn hess_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let (eu, ev) = (self.to_eigenbasis(u), self.to_eigenbasis(v));
        self.spectrum
            .eigenvalues
            .iter()
            .zip(eu.iter().zip(ev.iter()))
            .map(|(l, (a, b))| l * a * b)
            .sum()
    }

    /// `H v`.
    pub fn hessian_apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.rotation {
            None => self.spectrum.eigenvalues.iter().zip(v).map(|(l, x)| l * x).collect(),
            Some(r) => {
                let mut y = r.tr_mul(&DVector::from_column_slice(v));
                for (yi, l) in y.iter_mut().zip(&self.spectrum.eigenvalues) {
                    *yi *= l;
                }
                (r * y).as_slice().to_vec()
            }
        }
    }

    /// `Σ λᵢ yᵢ²` and `Σ λᵢ² yᵢ²` in the eigenbasis.
    fn weighted_sums(&self, v: &[f64]) -> (f64, f64) {
        let e = self.to_eigenbasis(v);
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for (l, y) in self.spectrum.eigenvalues.iter().zip(e.iter()) {
            let ly2 = l * y * y;
            s1 += ly2;
            s2 += l * ly2;
        }
        (s1, s2)
    }

    /// `h(y) = ½ yᵀ H y`.
    #[inline]
    pub fn core_centered(&self, y: &[f64]) -> f64 {
        match &self.rotation {
            None => {
                0.5 * self
                    .spectrum
                    .eigenvalues
                    .iter()
                    .zip(y)
                    .map(|(l, v)| l * v * v)
                    .sum::<f64>()
            }
            Some(_) => 0.5 * self.weighted_sums(y).0,
        }
    }

    /// `log h(y)`, finite for any nonzero `y` (no underflow).
    pub fn log_core_centered(&self, y: &[f64]) -> f64 {
        let direct = self.core_centered(y);
        if (DIRECT_SUM_FLOOR..DIRECT_SUM_CEIL).contains(&direct) {
            return direct.ln();
        }
        match rescale(y) {
            None => f64::NEG_INFINITY,
            Some((scaled, exp)) => {
                (0.5 * self.weighted_sums(&scaled).0).ln() + 2.0 * exp as f64 * std::f64::consts::LN_2
            }
        }
    }

    /// `log ‖H y‖`, finite for any nonzero `y`.
    pub fn log_grad_norm_centered(&self, y: &[f64]) -> f64 {
        let direct = self.weighted_sums(y).1;
        if (DIRECT_SUM_FLOOR..DIRECT_SUM_CEIL).contains(&direct) {
            return 0.5 * direct.ln();
        }
        match rescale(y) {
            None => f64::NEG_INFINITY,
            Some((scaled, exp)) => 0.5 * self.weighted_sums(&scaled).1.ln() + exp as f64 * std::f64::consts::LN_2,
        }
    }

    /// Order key used for the ES acceptance test: a strictly increasing
    /// function of `f`. For the identity transform this is `log h`, which
    /// keeps long runs free of underflow; other transforms are evaluated
    /// directly as `g(h)`.
    #[inline]
    pub fn order_key_centered(&self, y: &[f64]) -> f64 {
        match self.transform {
            MonotoneTransform::Identity => self.log_core_centered(y),
            g => g.apply(self.core_centered(y)),
        }
    }
}

/// Splits `y` as `scaled · 2^exp` with `max |scaled_i| ∈ [0.5, 1)`; exact.
fn rescale(y: &[f64]) -> Option<(Vec<f64>, i32)> {
    let max = y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return None;
    }
    let (_, exp) = libm::frexp(max);
    Some((y.iter().map(|&v| libm::scalbn(v, -exp)).collect(), exp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(d: usize) -> QuadraticProblem {
        QuadraticProblem::centered(Spectrum::sphere(d).unwrap())
    }

    #[test]
    fn cigar_ratio_matches_closed_form() {
        let p = QuadraticProblem::new(vec![10.0, 10.0, 10.0, 1.0], vec![0.0; 4], MonotoneTransform::Identity, None)
            .unwrap();
        let s = p.spectrum_stats();
        assert!((s.smallest / s.trace - 1.0 / 31.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_eigenvalue() {
        let r = QuadraticProblem::new(vec![-1.0, 1.0], vec![0.0; 2], MonotoneTransform::Identity, None);
        assert!(matches!(r, Err(Error::InvalidSpectrum(_))));
        let r = QuadraticProblem::new(vec![0.0, 1.0], vec![0.0; 2], MonotoneTransform::Identity, None);
        assert!(matches!(r, Err(Error::InvalidSpectrum(_))));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let r = QuadraticProblem::new(vec![1.0, 1.0], vec![0.0; 3], MonotoneTransform::Identity, None);
        assert!(matches!(r, Err(Error::DimensionMismatch { expected: 2, got: 3 })));
        assert!(sphere(2).eval(&[1.0]).is_err());
    }

    #[test]
    fn eigenvalues_sorted_descending() {
        let s = Spectrum::new(vec![1.0, 5.0, 3.0]).unwrap();
        assert_eq!(s.eigenvalues(), &[5.0, 3.0, 1.0]);
    }

    #[test]
    fn eval_examples() {
        assert_eq!(sphere(2).eval(&[1.0, 0.0]).unwrap(), 0.5);
        let cigar = QuadraticProblem::centered(Spectrum::cigar(4, 10.0).unwrap());
        assert_eq!(cigar.eval(&[0.0, 0.0, 0.0, 2.0]).unwrap(), 2.0);
        let sq = sphere(2).with_transform(MonotoneTransform::Sqrt).unwrap();
        assert_eq!(sq.eval(&[1.0, 0.0]).unwrap(), 0.5f64.sqrt());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(sphere(2).gradient_core(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let p = QuadraticProblem::new(vec![2.0, 1.0], vec![0.0; 2], MonotoneTransform::Identity, None).unwrap();
        assert_eq!(p.gradient_core(&[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn sphere_stats() {
        let s = Spectrum::sphere(10).unwrap().stats();
        assert_eq!((s.smallest, s.largest, s.trace, s.trace_sq, s.cond), (1.0, 1.0, 10.0, 10.0, 1.0));
        assert!((s.ratio - 0.1).abs() < 1e-15);
    }

    #[test]
    fn discus_stats() {
        let s = Spectrum::discus(64, 100.0).unwrap().stats();
        assert_eq!(s.trace, 163.0);
        assert_eq!(s.smallest, 1.0);
        assert_eq!(s.cond, 100.0);
    }

    #[test]
    fn directional_min_scale_examples() {
        let p = sphere(2);
        assert_eq!(p.directional_min_scale(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(p.directional_min_scale(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            p.directional_min_scale(&[1.0, 0.0], &[0.0, 0.0]),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn log_core_survives_underflow() {
        let p = QuadraticProblem::centered(Spectrum::ellipsoid(3, 10.0).unwrap());
        let y = [3e-200, -1e-201, 2e-200];
        let scaled: Vec<f64> = y.iter().map(|v| v * 1e200).collect();
        let expected = p.core_centered(&scaled).ln() - 400.0 * std::f64::consts::LN_10;
        assert!((p.log_core_centered(&y) - expected).abs() < 1e-10);
        let g_expected = p.hessian_apply(&scaled).iter().map(|v| v * v).sum::<f64>().sqrt().ln()
            - 200.0 * std::f64::consts::LN_10;
        assert!((p.log_grad_norm_centered(&y) - g_expected).abs() < 1e-10);
        assert_eq!(p.log_core_centered(&[0.0; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn shorthand_parsing() {
        assert_eq!(Spectrum::from_shorthand("sphere", 3).unwrap().eigenvalues(), &[1.0; 3]);
        assert_eq!(Spectrum::from_shorthand("cigar:10", 3).unwrap().eigenvalues(), &[10.0, 10.0, 1.0]);
        assert_eq!(Spectrum::from_shorthand("discus:5", 3).unwrap().eigenvalues(), &[5.0, 1.0, 1.0]);
        let e = Spectrum::from_shorthand("ellipsoid:100", 3).unwrap();
        assert!((e.eigenvalues()[1] - 10.0).abs() < 1e-12);
        assert!(Spectrum::from_shorthand("cigar", 3).is_err());
        assert!(Spectrum::from_shorthand("banana:3", 3).is_err());
    }

    #[test]
    fn spec_json_roundtrip_and_unknown_keys() {
        let json = r#"{"eigenvalues":[2,1],"optimum":[0,0],"transform":"identity","rotation_seed":null}"#;
        let spec: ProblemSpec = serde_json::from_str(json).unwrap();
        let p = QuadraticProblem::from_spec(&spec).unwrap();
        assert_eq!(p.to_spec(), spec);
        let bad = r#"{"eigenvalues":[1],"optimum":[0],"extra":1}"#;
        assert!(serde_json::from_str::<ProblemSpec>(bad).is_err());
        let affine = r#"{"eigenvalues":[1],"optimum":[0],"transform":{"affine_positive":{"a":2,"b":1}}}"#;
        let spec: ProblemSpec = serde_json::from_str(affine).unwrap();
        assert_eq!(spec.transform, MonotoneTransform::AffinePositive { a: 2.0, b: 1.0 });
    }
}
