#![allow(dead_code)]

use levy_refract::LevyModelSpec;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random model with 1..=3 phases and an upper-triangular subgenerator, so the
/// phase rates are distinct and the spectrum is known.
pub fn random_model(rng: &mut ChaCha8Rng, bounded: bool) -> LevyModelSpec {
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

pub fn exponential_bv() -> LevyModelSpec {
    LevyModelSpec::exponential(1.0, 0.0, 1.0, 2.0)
}

pub fn exponential_diffusive() -> LevyModelSpec {
    LevyModelSpec::exponential(1.0, 0.3, 1.0, 2.0)
}

/// Abate-Whitt Euler inversion of a Laplace transform at `t > 0`.
pub fn invert_laplace(f: impl Fn(Complex64) -> Complex64, t: f64) -> f64 {
    const A: f64 = 18.4;
    const N: usize = 38;
    const M: usize = 11;
    let term = |k: usize| -> f64 {
        let s = Complex64::new(A, 2.0 * std::f64::consts::PI * k as f64) / (2.0 * t);
        let v = f(s).re;
        if k == 0 {
            0.5 * v
        } else if k % 2 == 1 {
            -v
        } else {
            v
        }
    };
    let mut partial = Vec::with_capacity(N + M + 1);
    let mut acc = 0.0;
    for k in 0..=(N + M) {
        acc += term(k);
        partial.push(acc);
    }
    let mut binom = 1.0;
    let mut total = 0.0;
    for k in 0..=M {
        total += binom * partial[N + k];
        binom *= (M - k) as f64 / (k + 1) as f64;
    }
    total *= 2f64.powi(-(M as i32));
    A.exp().sqrt() / t * total
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
