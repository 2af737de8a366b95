use approx::assert_relative_eq;
use oneplusone::quadratic::{MonotoneTransform, QuadraticProblem, Spectrum};
use oneplusone::stochastic::RandomStream;
use oneplusone::Error;
use proptest::prelude::*;

fn rotated(spectrum: Spectrum, seed: u64) -> QuadraticProblem {
    let d = spectrum.dim();
    QuadraticProblem::from_spectrum(spectrum, vec![0.0; d], MonotoneTransform::Identity, Some(seed)).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn gradient_matches_central_differences() {
    let p = rotated(Spectrum::ellipsoid(12, 30.0).unwrap(), 5);
    let x = RandomStream::new(1).normal_vector(12);
    let g = p.gradient_core(&x).unwrap();
    let h = 1e-5;
    for i in 0..12 {
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += h;
        b[i] -= h;
        let fd = (p.eval_core(&a).unwrap() - p.eval_core(&b).unwrap()) / (2.0 * h);
        assert_relative_eq!(fd, g[i], epsilon = 1e-7, max_relative = 1e-7);
    }
}

#[test]
fn explicit_hessian_from_basis_vectors() {
    // columns H e_i give trace and Tr(H²) independently of the spectrum
    let s = Spectrum::ellipsoid(9, 50.0).unwrap();
    let stats = s.stats();
    let p = rotated(s, 11);
    let mut trace = 0.0;
    let mut frob = 0.0;
    for i in 0..9 {
        let mut e = vec![0.0; 9];
        e[i] = 1.0;
        let col = p.hessian_apply(&e);
        trace += col[i];
        frob += col.iter().map(|v| v * v).sum::<f64>();
        for j in 0..9 {
            let mut f = vec![0.0; 9];
            f[j] = 1.0;
            assert_relative_eq!(p.hess_form(&f, &e), col[j], epsilon = 1e-12);
        }
    }
    assert_relative_eq!(trace, stats.trace, max_relative = 1e-12);
    assert_relative_eq!(frob, stats.trace_sq, max_relative = 1e-12);
}

#[test]
fn canonical_spectra() {
    let c = Spectrum::cigar(5, 100.0).unwrap().stats();
    assert_eq!((c.largest, c.smallest, c.trace), (100.0, 1.0, 401.0));
    let d = Spectrum::discus(5, 100.0).unwrap().stats();
    assert_eq!((d.largest, d.smallest, d.trace), (100.0, 1.0, 104.0));
    let e = Spectrum::ellipsoid(3, 100.0).unwrap();
    assert_relative_eq!(e.eigenvalues()[1], 10.0, max_relative = 1e-14);
    let s = Spectrum::sphere(64).unwrap().stats();
    assert_eq!(s.ratio, 1.0 / 64.0);
    assert!(Spectrum::from_shorthand("cigar", 4).is_err());
    assert!(Spectrum::from_shorthand("discus:0.5", 4).is_err());
    assert!(Spectrum::from_shorthand("torus:2", 4).is_err());
    assert!(matches!(Spectrum::new(vec![1.0, -1.0]), Err(Error::InvalidSpectrum(_))));
}

#[test]
fn dimension_mismatch_is_reported() {
    let p = QuadraticProblem::centered(Spectrum::sphere(3).unwrap());
    assert!(matches!(p.eval(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn log_domain_survives_extreme_scales() {
    let p = rotated(Spectrum::ellipsoid(6, 10.0).unwrap(), 3);
    let y = RandomStream::new(2).normal_vector(6);
    let base = p.log_core_centered(&y);
    let gbase = p.log_grad_norm_centered(&y);
    for k in [-600i32, -300, 300, 500] {
        let s = 2f64.powi(k);
        let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
        let shift = k as f64 * std::f64::consts::LN_2;
        assert_relative_eq!(p.log_core_centered(&ys), base + 2.0 * shift, max_relative = 1e-12);
        assert_relative_eq!(p.log_grad_norm_centered(&ys), gbase + shift, max_relative = 1e-12);
    }
}

#[test]
fn directional_minimizer_is_optimal() {
    let p = rotated(Spectrum::cigar(7, 40.0).unwrap(), 9);
    let mut s = RandomStream::new(4);
    for _ in 0..20 {
        let m = s.normal_vector(7);
        let z = s.normal_vector(7);
        let t = p.directional_min_scale(&m, &z).unwrap();
        let at = |t: f64| p.eval_core(&m.iter().zip(&z).map(|(a, b)| a + t * b).collect::<Vec<_>>()).unwrap();
        if t > 0.0 {
            assert!(at(t) <= at(t * 0.99) && at(t) <= at(t * 1.01));
        } else {
            assert!(at(0.0) <= at(1e-6));
        }
    }
    assert!(matches!(p.directional_min_scale(&[1.0; 7], &[0.0; 7]), Err(Error::DegenerateDirection)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_sandwich(seed in 0u64..1000, xi in 1.0f64..1e4, kind in 0usize..3, d in 2usize..20) {
        let spectrum = match kind {
            0 => Spectrum::cigar(d, xi),
            1 => Spectrum::discus(d, xi),
            _ => Spectrum::ellipsoid(d, xi),
        }.unwrap();
        let stats = spectrum.stats();
        let p = rotated(spectrum, seed);
        let x = RandomStream::new(seed).normal_vector(d);
        let h = p.eval_core(&x).unwrap();
        let g2 = norm(&p.gradient_core(&x).unwrap()).powi(2);
        prop_assert!(g2 / (2.0 * stats.largest) <= h * (1.0 + 1e-12));
        prop_assert!(h <= g2 / (2.0 * stats.smallest) * (1.0 + 1e-12));
    }

    #[test]
    fn ratio_bounded_by_cond_over_d(xi in 1.0f64..1e6, kind in 0usize..3, d in 1usize..200) {
        let stats = match kind {
            0 => Spectrum::cigar(d, xi),
            1 => Spectrum::discus(d, xi),
            _ => Spectrum::ellipsoid(d, xi),
        }.unwrap().stats();
        prop_assert!(stats.ratio >= 1.0 / d as f64 * (1.0 - 1e-12));
        prop_assert!(stats.ratio <= stats.cond / d as f64 * (1.0 + 1e-12));
        prop_assert!(stats.ratio <= 1.0);
    }

    #[test]
    fn transforms_preserve_order(a in 0.0f64..1e3, b in 0.0f64..1e3) {
        for g in [MonotoneTransform::Sqrt, MonotoneTransform::Log1p, MonotoneTransform::Cube,
                  MonotoneTransform::AffinePositive { a: 2.5, b: -3.0 }] {
            prop_assert_eq!(a.partial_cmp(&b), g.apply(a).partial_cmp(&g.apply(b)));
        }
    }

    #[test]
    fn rotation_preserves_core_value_norms(seed in 0u64..500) {
        // a rotated sphere is still the sphere
        let p = rotated(Spectrum::sphere(6).unwrap(), seed);
        let y = RandomStream::new(seed + 1).normal_vector(6);
        let expect = 0.5 * norm(&y).powi(2);
        prop_assert!((p.core_centered(&y) - expect).abs() <= 1e-12 * expect);
    }
}
