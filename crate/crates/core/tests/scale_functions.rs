mod common;

use common::{invert_laplace, random_model, rel_err, rng};
use levy_refract::quadrature::integrate;
use levy_refract::{characteristic_roots, validate_model, LevyModelSpec, Process, ScaleFamily, Which};
use num_complex::Complex64;
use rand::Rng;

#[test]
fn exponential_roots_match_quadratic_formula() {
    // psi_Y(s) = c s + kappa (mu / (mu + s) - 1) for exponential jumps, sigma = 0:
    // psi(s) = q  <=>  c s^2 + (c mu - kappa - q) s - q mu = 0.
    let (c, kappa, mu) = (1.0, 1.0, 2.0);
    let model = validate_model(&LevyModelSpec::exponential(c, 0.0, kappa, mu)).unwrap();
    for q in [0.05, 0.1, 1.0] {
        let bq = c * mu - kappa - q;
        let disc = (bq * bq + 4.0 * c * q * mu).sqrt();
        let plus = (-bq + disc) / (2.0 * c);
        let minus = (-bq - disc) / (2.0 * c);
        let roots = characteristic_roots(&model, 0.0, Process::Y, q).unwrap();
        assert!((roots.positive_root - plus).abs() < 1e-12);
        assert_eq!(roots.negative_roots.len(), 1);
        assert!((roots.negative_roots[0].re - minus).abs() < 1e-12);
    }
}

#[test]
fn laplace_transform_by_quadrature() {
    let mut r = rng(11);
    for bounded in [true, false] {
        let model = validate_model(&random_model(&mut r, bounded)).unwrap();
        let q = 0.1;
        let fam = ScaleFamily::new(&model, 0.4, q).unwrap();
        for process in [Process::X, Process::Y] {
            let pair = fam.pair(process);
            let theta = pair.roots.positive_root + 1.5;
            let numeric = integrate(|x| (-theta * x).exp() * pair.w(x), 0.0, 60.0, 1e-14, 1e-12).unwrap();
            let exact = 1.0 / (model.laplace_exponent_real(0.4, process, theta).unwrap() - q);
            assert!(rel_err(numeric, exact) < 1e-9, "{numeric} vs {exact}");
        }
    }
}

#[test]
fn scale_function_by_laplace_inversion() {
    let mut r = rng(12);
    for bounded in [true, false] {
        let model = validate_model(&random_model(&mut r, bounded)).unwrap();
        let (q, delta) = (0.2, 0.5);
        let fam = ScaleFamily::new(&model, delta, q).unwrap();
        for process in [Process::X, Process::Y] {
            let transform = |s: Complex64| 1.0 / (model.laplace_exponent(delta, process, s).unwrap() - q);
            for x in [0.3, 1.0, 2.5] {
                let inverted = invert_laplace(transform, x);
                let direct = fam.pair(process).w(x);
                assert!(rel_err(inverted, direct) < 1e-6, "{process:?} x={x}: {inverted} vs {direct}");
            }
        }
    }
}

#[test]
fn scale_convolution_identity_against_quadrature() {
    let mut r = rng(13);
    let model = validate_model(&common::exponential_diffusive()).unwrap();
    for _ in 0..5 {
        let delta = 0.05 + 2.0 * r.random::<f64>();
        let x = 0.1 + 3.0 * r.random::<f64>();
        let fam = ScaleFamily::new(&model, delta, 0.1).unwrap();
        let numeric = delta
            * integrate(|y| fam.y.w(x - y) * fam.x.w(y), 0.0, x, 1e-14, 1e-12).unwrap();
        let closed = fam.y.w_bar(x) - fam.x.w_bar(x);
        assert!(rel_err(numeric, closed) < 1e-9, "{numeric} vs {closed}");
    }
}

#[test]
fn boundary_values() {
    let bv = validate_model(&common::exponential_bv()).unwrap();
    let fam = ScaleFamily::new(&bv, 0.5, 0.3).unwrap();
    assert!((fam.x.w.eval(0.0) - 1.0 / 1.5).abs() < 1e-12);
    assert!((fam.y.w.eval(0.0) - 1.0).abs() < 1e-12);
    assert!((fam.x.w_prime.eval(0.0) - (0.3 + 1.0) / (1.5 * 1.5)).abs() < 1e-10);

    let ubv = validate_model(&common::exponential_diffusive()).unwrap();
    let fam = ScaleFamily::new(&ubv, 0.5, 0.3).unwrap();
    assert!(fam.x.w.eval(0.0).abs() < 1e-12);
    assert!((fam.y.w_prime.eval(0.0) - 2.0 / 0.09).abs() < 1e-8);
}

#[test]
fn growth_rate_matches_positive_root() {
    let model = validate_model(&LevyModelSpec::half_normal_fit()).unwrap();
    let fam = ScaleFamily::new(&model, 1.0, 0.05).unwrap();
    let limit = fam.w_growth_limit().unwrap();
    let x = 400.0;
    let ratio = (-fam.big_phi() * x).exp() * fam.eval(Which::W, x);
    assert!(rel_err(ratio, limit) < 1e-8);
}

#[test]
fn zero_discount_keeps_zero_root() {
    let model = validate_model(&common::exponential_diffusive()).unwrap();
    // psi_Y'(0+) = c - kappa E[Z] = 1 - 0.5 > 0, so Phi(0) = 0.
    let roots = characteristic_roots(&model, 0.0, Process::Y, 0.0).unwrap();
    assert_eq!(roots.positive_root, 0.0);
    assert!(roots.degenerate_zero_root);
    let fam = ScaleFamily::new(&model, 0.0, 0.0).unwrap();
    let limit = 1.0 / model.psi_derivative_at_zero(0.0, Process::Y);
    assert!(rel_err(fam.y.w(30.0), limit) < 1e-8);
}
