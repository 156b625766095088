//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
//! Numeric arguments restrict the run to those criteria.

use std::time::{Duration, Instant};

use levy_refract::control::{
    f_of_b, generator_on_value, hjb_residual, sensitivity_sweep, solve_bstar, unrestricted_barrier,
    unrestricted_limit, value_derivatives, value_refraction, ControlProblem, DerivativeSide, SweepParameter,
};
use levy_refract::fluctuation::{
    dividends_npv, exit_laplace, identity_probe, injection_npv, occupation_laplace, reflected_injection,
    reflected_resolvent, reflected_upcrossing, resolvent_finite, Geometry, Horizon, IntervalSet, ProbeVariant,
    Side,
};
use levy_refract::montecarlo::{estimate_functionals, SimConfig};
use levy_refract::quadrature::integrate;
use levy_refract::{validate_model, LevyModelSpec, Process, ScaleFamily, ValidatedModel};
use levy_refract_cli::{parse_config, render, run};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn random_model(rng: &mut ChaCha8Rng, bounded: bool) -> LevyModelSpec {
    let m = rng.random_range(1..=3usize);
    let mut rates: Vec<f64> = Vec::with_capacity(m);
    while rates.len() < m {
        let r = 0.5 + 4.5 * rng.random::<f64>();
        if rates.iter().all(|x| (x - r).abs() > 0.2) {
            rates.push(r);
        }
    }
    let mut t = vec![vec![0.0; m]; m];
    for i in 0..m {
        t[i][i] = -rates[i];
        for j in (i + 1)..m {
            t[i][j] = rates[i] * 0.4 * rng.random::<f64>() / m as f64;
        }
    }
    let raw: Vec<f64> = (0..m).map(|_| 0.1 + rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    LevyModelSpec {
        c_y: 0.3 + 1.7 * rng.random::<f64>(),
        sigma: if bounded { 0.0 } else { 0.1 + 0.5 * rng.random::<f64>() },
        kappa: 0.3 + 1.7 * rng.random::<f64>(),
        alpha: raw.iter().map(|a| a / sum).collect(),
        t,
    }
}

fn default_model() -> ValidatedModel {
    validate_model(&LevyModelSpec::half_normal_fit()).unwrap()
}

fn problem(beta: f64, delta: f64) -> Result<ControlProblem, String> {
    ControlProblem::new(&default_model(), delta, 0.05, beta).map_err(|e| e.to_string())
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn worst(name: &str, value: f64, tol: f64) -> Outcome {
    if value <= tol {
        Ok(format!("{name} {value:.2e} <= {tol:.0e}"))
    } else {
        Err(format!("{name} {value:.2e} > {tol:.0e}"))
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_err: f64 = 0.0;
    for i in 0..5 {
        let model = validate_model(&random_model(&mut rng, i % 2 == 0)).map_err(err)?;
        let delta = 2.0 * rng.random::<f64>();
        let q = 0.01 + rng.random::<f64>();
        let fam = ScaleFamily::new(&model, delta, q).map_err(err)?;
        for process in [Process::X, Process::Y] {
            let root = fam.pair(process).roots.positive_root;
            for _ in 0..10 {
                let theta = root + 0.05 + 10.0 * rng.random::<f64>();
                let (lhs, rhs) = fam.laplace_check(process, theta).map_err(err)?;
                max_err = max_err.max((lhs - rhs).abs() / rhs.abs());
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(1) {
        return Err(format!("runtime {elapsed:?} > 1 s"));
    }
    worst("max relative error", max_err, 1e-9)
}

/// Left side of the probe identities by nested adaptive quadrature over the
/// jump density.
fn probe_by_quadrature(
    model: &ValidatedModel,
    family_p: &ScaleFamily,
    family_q: &ScaleFamily,
    variant: ProbeVariant,
    l: f64,
    m: f64,
) -> Result<f64, String> {
    let w = &family_q.x;
    let wbb = &family_p.y;
    let z_type = matches!(variant, ProbeVariant::II | ProbeVariant::IIPrime);
    let primed = matches!(variant, ProbeVariant::IPrime | ProbeVariant::IIPrime);
    let inner = |y: f64| -> f64 {
        let f = |s: f64| (if z_type { w.z(l - s) } else { w.w(l - s) }) * model.jump_density(y + s);
        let body = integrate(f, 0.0, l, 1e-14, 1e-12).unwrap_or(f64::NAN);
        if z_type {
            body + model.jump_tail(y + l)
        } else {
            body
        }
    };
    let outer = |y: f64| inner(y) * if primed { wbb.w_prime(m - y) } else { wbb.w(m - y) };
    let mut total = integrate(outer, 0.0, m, 1e-13, 1e-11).map_err(err)?;
    if primed {
        total += wbb.w0 * inner(m);
    }
    Ok(total)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut conv_err: f64 = 0.0;
    for _ in 0..20 {
        let bounded = rng.random::<bool>();
        let model = validate_model(&random_model(&mut rng, bounded)).map_err(err)?;
        let delta = 0.05 + 2.0 * rng.random::<f64>();
        let x = 0.1 + 3.0 * rng.random::<f64>();
        let fam = ScaleFamily::new(&model, delta, 0.1).map_err(err)?;
        let closed = fam.y.w_bar(x) - fam.x.w_bar(x);
        let oracle = delta * integrate(|y| fam.y.w(x - y) * fam.x.w(y), 0.0, x, 1e-14, 1e-12).map_err(err)?;
        let mixture = delta * fam.y.w.convolve_at(&fam.x.w, x, 0.0, x);
        conv_err = conv_err.max(rel_err(oracle, closed)).max(rel_err(mixture, closed));
    }
    let mut probe_err: f64 = 0.0;
    for _ in 0..20 {
        let model = validate_model(&random_model(&mut rng, true)).map_err(err)?;
        let delta = 0.1 + rng.random::<f64>();
        let family_q = ScaleFamily::new(&model, delta, 0.05 + 0.5 * rng.random::<f64>()).map_err(err)?;
        let family_p = ScaleFamily::new(&model, delta, 0.05 + 0.5 * rng.random::<f64>()).map_err(err)?;
        let alpha = rng.random::<f64>();
        let beta = alpha + 0.1 + rng.random::<f64>();
        let gamma = beta + 0.1 + rng.random::<f64>();
        for variant in [ProbeVariant::I, ProbeVariant::IPrime, ProbeVariant::II, ProbeVariant::IIPrime] {
            let (lhs, rhs) = identity_probe(&family_p, &family_q, variant, alpha, beta, gamma).map_err(err)?;
            let oracle = probe_by_quadrature(&model, &family_p, &family_q, variant, beta - alpha, gamma - beta)?;
            probe_err = probe_err.max(rel_err(lhs, rhs)).max(rel_err(oracle, rhs));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(30) {
        return Err(format!("runtime {elapsed:?} > 30 s"));
    }
    let a = worst("convolution identity", conv_err, 1e-8)?;
    let b = worst("probe identities", probe_err, 1e-6)?;
    Ok(format!("{a}; {b}"))
}

fn criterion_3() -> Outcome {
    let model = default_model();
    let q = 0.05;
    let fam = ScaleFamily::new(&model, 0.0, q).map_err(err)?;
    let a = 2.0;
    let geometry = Geometry::new(1.0, 0.0, q).with_a(a);
    let set = IntervalSet::interval(0.2, 0.8).map_err(err)?;
    let (mut res, mut exit, mut inj) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..10 {
        let x = a * i as f64 / 10.0;
        res = res.max(rel_err(
            resolvent_finite(&fam, &geometry, x, &set).map_err(err)?,
            reflected_resolvent(&fam, a, x, &set),
        ));
        exit = exit.max(rel_err(exit_laplace(&fam, &geometry, x).map_err(err)?, reflected_upcrossing(&fam, a, x)));
        let npv = injection_npv(&fam, &geometry, x, Horizon::ToA).map_err(err)?.finite().unwrap_or(f64::NAN);
        inj = inj.max(rel_err(npv, reflected_injection(&fam, a, x)));
        if npv.is_nan() {
            inj = f64::NAN;
        }
    }
    let r = worst("resolvent", res, 1e-8)?;
    let e = worst("exit", exit, 1e-8)?;
    let i = worst("injection", if inj.is_nan() { f64::INFINITY } else { inj }, 1e-8)?;
    Ok(format!("{r}; {e}; {i}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let model = default_model();
    let (q, delta, b, a, p) = (0.05, 1.0, 1.0, 2.0, 0.1);
    let geometry = Geometry::new(b, delta, q).with_a(a).with_p(p);
    let set = IntervalSet::interval(0.2, 0.8).map_err(err)?;
    let fam = ScaleFamily::new(&model, delta, q).map_err(err)?;
    let fam_pq = ScaleFamily::new(&model, delta, q + p).map_err(err)?;
    let cfg = SimConfig::new(q, 100_000, 42);
    let mut worst_z: f64 = 0.0;
    let mut failures = Vec::new();
    for x in [0.0, 0.5, 1.5] {
        let est = estimate_functionals(&model, &geometry, x, Horizon::ToA, Some(&set), &cfg).map_err(err)?;
        let finite = |v: levy_refract::Result<levy_refract::fluctuation::Extended>| {
            v.map_err(err).and_then(|e| e.finite().ok_or_else(|| "infinite".to_string()))
        };
        let pairs = [
            ("exit", est.exit, exit_laplace(&fam, &geometry, x).map_err(err)?),
            ("dividends", Some(est.dividends), finite(dividends_npv(&fam, &geometry, x, Horizon::ToA))?),
            ("injection", Some(est.injection), finite(injection_npv(&fam, &geometry, x, Horizon::ToA))?),
            ("resolvent", est.resolvent, resolvent_finite(&fam, &geometry, x, &set).map_err(err)?),
            (
                "occupation_below",
                est.occupation_below,
                occupation_laplace(&fam, &fam_pq, &geometry, x, Side::Below).map_err(err)?,
            ),
            (
                "occupation_above",
                est.occupation_above,
                occupation_laplace(&fam, &fam_pq, &geometry, x, Side::Above).map_err(err)?,
            ),
        ];
        for (name, e, exact) in pairs {
            let e = e.ok_or_else(|| format!("{name} not estimated"))?;
            let z = (e.mean - exact).abs() / e.stderr;
            worst_z = worst_z.max(z);
            if !(z <= 3.0) {
                failures.push(format!("{name} x={x}: {:.6} vs {exact:.6} ({z:.2} s.e.)", e.mean));
            }
        }
    }
    let elapsed = start.elapsed();
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    if elapsed > Duration::from_secs(600) {
        return Err(format!("runtime {elapsed:?} > 10 min"));
    }
    Ok(format!("worst {worst_z:.2} s.e. in {:.0} s", elapsed.as_secs_f64()))
}

fn criterion_5() -> Outcome {
    let p = problem(2.0, 1.0)?;
    let s = solve_bstar(&p).map_err(err)?;
    if f_of_b(&p, 0.0) != 1.0 - p.beta() {
        return Err("f(0) != 1 - beta".into());
    }
    worst("f(b*)", s.f_residual.abs(), 1e-10)?;
    worst("smooth fit v'", s.smooth_fit_gap, 1e-8)?;
    worst("smooth fit v''", s.second_derivative_gap, 1e-6)?;
    let (d0, _) = value_derivatives(&p, &s, 0.0, DerivativeSide::Right).map_err(err)?;
    worst("v'(0) - beta", (d0 - p.beta()).abs(), 1e-5)?;
    let mut violation: f64 = 0.0;
    for i in 0..200 {
        let x = 2.0 * s.b_star * i as f64 / 199.0;
        let side = if x < s.b_star { DerivativeSide::Left } else { DerivativeSide::Right };
        let (d, _) = value_derivatives(&p, &s, x, side).map_err(err)?;
        let v = if x <= s.b_star { (1.0 - d).max(d - p.beta()) } else { d - 1.0 };
        violation = violation.max(v);
    }
    worst("derivative bound violation", violation.max(0.0), 1e-9)?;
    Ok(format!("b* = {:.10}, smooth fit gaps {:.1e} / {:.1e}", s.b_star, s.smooth_fit_gap, s.second_derivative_gap))
}

fn value_grid(b_star: f64) -> Vec<f64> {
    let hi = (2.0 * b_star).max(b_star + 1.5);
    (0..50).map(|i| hi * i as f64 / 49.0).collect()
}

fn criterion_6() -> Outcome {
    let p = problem(2.0, 1.0)?;
    let s = solve_bstar(&p).map_err(err)?;
    let fs: Vec<f64> = (0..=400).map(|i| f_of_b(&p, 3.0 * s.b_star * i as f64 / 400.0)).collect();
    if !fs.windows(2).all(|w| w[1] > w[0]) {
        return Err("f not strictly increasing".into());
    }
    let sign_changes = fs.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count();
    if sign_changes != 1 {
        return Err(format!("f changes sign {sign_changes} times"));
    }
    let grid = value_grid(s.b_star);
    let mut min_gap = f64::INFINITY;
    for offset in [-1.0, -0.5, 0.5, 1.0] {
        for &x in &grid {
            let gap = value_refraction(&p, s.b_star, x).map_err(err)? - value_refraction(&p, s.b_star + offset, x).map_err(err)?;
            min_gap = min_gap.min(gap);
        }
    }
    if min_gap < -1e-9 {
        return Err(format!("dominance gap {min_gap:.2e} < -1e-9"));
    }
    Ok(format!("unique root, min dominance gap {min_gap:.2e}"))
}

fn criterion_7() -> Outcome {
    let p = problem(2.0, 1.0)?;
    let s = solve_bstar(&p).map_err(err)?;
    let grid = value_grid(s.b_star);
    let beta = sensitivity_sweep(&p, SweepParameter::Beta, &[1.01, 1.1, 2.0, 5.0, 10.0, 20.0], &grid).map_err(err)?;
    let delta = sensitivity_sweep(&p, SweepParameter::Delta, &[0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0], &grid).map_err(err)?;
    if !beta.monotone {
        return Err("v not decreasing in beta".into());
    }
    if !delta.monotone {
        return Err("v not increasing in delta".into());
    }
    let big = problem(2.0, 1e4)?;
    let sb = solve_bstar(&big).map_err(err)?;
    let barrier = unrestricted_barrier(big.family(), big.beta()).map_err(err)?;
    let mut dist: f64 = 0.0;
    for i in 0..=200 {
        let x = sb.b_star * i as f64 / 200.0;
        let v = value_refraction(&big, sb.b_star, x).map_err(err)?;
        dist = dist.max((v - unrestricted_limit(big.family(), barrier, x)).abs());
    }
    worst("sweeps monotone; sup-distance at delta=1e4", dist, 1e-2)
}

fn criterion_8() -> Outcome {
    let p = problem(2.0, 1.0)?;
    let s = solve_bstar(&p).map_err(err)?;
    let (mut hjb, mut below, mut above) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..200 {
        let x = 2.0 * s.b_star * i as f64 / 199.0;
        if (x - s.b_star).abs() < 1e-4 {
            continue;
        }
        hjb = hjb.max(hjb_residual(&p, &s, x).map_err(err)?.abs());
        if x < s.b_star {
            below = below.max(generator_on_value(&p, s.b_star, x, Process::Y).map_err(err)?.abs());
        } else {
            above = above.max((generator_on_value(&p, s.b_star, x, Process::X).map_err(err)? + p.delta()).abs());
        }
    }
    let h = worst("HJB residual", hjb, 1e-5)?;
    let b = worst("(L_Y - q) v", below, 1e-5)?;
    let a = worst("(L_X - q) v + delta", above, 1e-5)?;
    Ok(format!("{h}; {b}; {a}"))
}

fn criterion_9() -> Outcome {
    let argv = [
        "levy-refract", "simulate", "--paper-defaults", "--b", "1", "--a", "2", "--B", "0.2,0.8", "--p", "0.1",
        "--x-grid", "0,0.5,1.5", "--n-paths", "2000", "--seed", "9",
    ];
    let once = || -> Result<String, String> {
        let config = parse_config(argv).map_err(err)?;
        let report = run(&config).map_err(err)?;
        Ok(render(&config, &report))
    };
    let first = once()?;
    let second = once()?;
    if first != second {
        return Err("outputs differ".into());
    }
    Ok(format!("{} identical bytes", first.len()))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({detail}) [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({detail}) [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
