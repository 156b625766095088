mod common;

use common::{random_model, rel_err, rng};
use levy_refract::control::{f_of_b, ControlProblem};
use levy_refract::fluctuation::{resolvent_finite, resolvent_infinite, Geometry, IntervalSet};
use levy_refract::{characteristic_roots, validate_model, Process, ScaleFamily, ValidatedModel, Which};
use proptest::prelude::*;

fn model(seed: u64, bounded: bool) -> ValidatedModel {
    validate_model(&random_model(&mut rng(seed), bounded)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scale_function_positive_and_increasing(
        seed in any::<u64>(), bounded in any::<bool>(),
        delta in 0.0..2.0f64, q in 0.01..1.0f64,
    ) {
        let fam = ScaleFamily::new(&model(seed, bounded), delta, q).unwrap();
        let mut prev_w = fam.eval(Which::W, 1e-3);
        let mut prev_wbb = fam.eval(Which::Wbb, 1e-3);
        prop_assert!(prev_w > 0.0 && prev_wbb > 0.0);
        for i in 1..=40 {
            let x = 1e-3 + 0.1 * i as f64;
            let w = fam.eval(Which::W, x);
            let wbb = fam.eval(Which::Wbb, x);
            prop_assert!(w > prev_w && wbb > prev_wbb, "x={}", x);
            prop_assert!(fam.eval(Which::Z, x) >= 1.0 - 1e-12);
            prop_assert!(fam.eval(Which::Zbb, x) >= 1.0 - 1e-12);
            prev_w = w;
            prev_wbb = wbb;
        }
    }

    #[test]
    fn roots_are_conjugate_closed_and_solve_the_equation(
        seed in any::<u64>(), bounded in any::<bool>(),
        delta in 0.0..2.0f64, q in 0.01..1.0f64,
    ) {
        let m = model(seed, bounded);
        for process in [Process::X, Process::Y] {
            let roots = characteristic_roots(&m, delta, process, q).unwrap();
            prop_assert!(roots.positive_root > 0.0);
            for r in &roots.negative_roots {
                prop_assert!(r.re < 0.0);
                prop_assert!(roots.negative_roots.iter().any(|s| (s - r.conj()).norm() < 1e-8 * r.norm().max(1.0)));
            }
            let psi = m.laplace_exponent_real(delta, process, roots.positive_root).unwrap();
            prop_assert!((psi - q).abs() < 1e-9 * q.max(1.0));
        }
    }

    #[test]
    fn laplace_round_trip(
        seed in any::<u64>(), bounded in any::<bool>(),
        delta in 0.0..2.0f64, q in 0.01..1.0f64, shift in 0.1..5.0f64,
    ) {
        let fam = ScaleFamily::new(&model(seed, bounded), delta, q).unwrap();
        for process in [Process::X, Process::Y] {
            let theta = fam.pair(process).roots.positive_root + shift;
            let (lhs, rhs) = fam.laplace_check(process, theta).unwrap();
            prop_assert!(rel_err(lhs, rhs) < 1e-9, "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn resolvent_is_additive(
        seed in any::<u64>(), bounded in any::<bool>(),
        b in 0.2..2.0f64, split in 0.05..0.95f64, x in 0.0..3.0f64,
    ) {
        let q = 0.2;
        let fam = ScaleFamily::new(&model(seed, bounded), 0.5, q).unwrap();
        let a = 2.0 * b + 0.5;
        let g = Geometry::new(b, 0.5, q).with_a(a);
        let mid = split * a;
        let whole = IntervalSet::interval(0.0, a).unwrap();
        let left = IntervalSet::interval(0.0, mid).unwrap();
        let right = IntervalSet::interval(mid, a).unwrap();
        let x = x.min(a);
        let sum = resolvent_finite(&fam, &g, x, &left).unwrap() + resolvent_finite(&fam, &g, x, &right).unwrap();
        let total = resolvent_finite(&fam, &g, x, &whole).unwrap();
        prop_assert!((sum - total).abs() < 1e-9 * total.abs().max(1.0));

        let inf = |s: &IntervalSet| resolvent_infinite(&fam, b, x, s).unwrap().finite().unwrap();
        let sum = inf(&left) + inf(&right);
        let total = inf(&whole);
        prop_assert!((sum - total).abs() < 1e-9 * total.abs().max(1.0));
    }

    #[test]
    fn f_is_increasing(
        seed in any::<u64>(), bounded in any::<bool>(),
        delta in 0.05..2.0f64, beta in 1.01..5.0f64,
    ) {
        let m = model(seed, bounded);
        let p = ControlProblem::new(&m, delta, 0.1, beta).unwrap();
        let mut prev = f_of_b(&p, 0.0);
        prop_assert!((prev - (1.0 - beta)).abs() < 1e-12);
        for i in 1..=50 {
            let next = f_of_b(&p, 0.1 * i as f64);
            prop_assert!(next > prev - 1e-12);
            prev = next;
        }
    }
}
