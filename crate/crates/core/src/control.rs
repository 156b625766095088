//! Optimal dividends with capital injection: the refraction level `b*`, the value
//! function of refraction-reflection strategies and its diagnostics.
//!
//! Dividends are paid at rate at most `delta`, injected capital costs `beta > 1`
//! per unit, and everything is discounted at rate `q > 0`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluctuation::{apply_generator, FnTriple};
use crate::levy_model::{Process, ValidatedModel};
use crate::scale::ScaleFamily;

const MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    family: ScaleFamily,
    beta: f64,
}

impl ControlProblem {
    pub fn new(model: &ValidatedModel, delta: f64, q: f64, beta: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must be > 0 (got {q})")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be > 0 (got {delta})")));
        }
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be > 1 (got {beta})")));
        }
        Ok(Self {
            family: ScaleFamily::new(model, delta, q)?,
            beta,
        })
    }

    /// Same model and rates with a different injection cost; reuses the scale family.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be > 1 (got {beta})")));
        }
        Ok(Self {
            family: self.family.clone(),
            beta,
        })
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.family.model(), delta, self.family.q(), self.beta)
    }

    pub fn family(&self) -> &ScaleFamily {
        &self.family
    }

    pub fn model(&self) -> &ValidatedModel {
        self.family.model()
    }

    pub fn delta(&self) -> f64 {
        self.family.delta()
    }

    pub fn q(&self) -> f64 {
        self.family.q()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn phi(&self) -> f64 {
        self.family.big_phi()
    }

    /// `int_0^l e^{-Phi u} Wbb(u) du`.
    fn weighted(&self, l: f64) -> f64 {
        if l <= 0.0 {
            return 0.0;
        }
        self.family
            .y
            .w
            .weighted_integral(0.0, l, Complex64::new(-self.phi(), 0.0))
            .re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuePoint {
    pub x: f64,
    pub v: f64,
    pub v_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub b_star: f64,
    pub f_residual: f64,
    /// `|v'(b*-) - v'(b*+)|`.
    pub smooth_fit_gap: f64,
    /// `|v''(b*-) - v''(b*+)|`.
    pub second_derivative_gap: f64,
    /// `Phi e^{-Phi b*} (delta Wbb(b*) + beta) / r_hat'(b*)`, 1 at the optimum.
    pub smooth_fit_ratio: f64,
    pub iterations: usize,
    pub value_at_grid: Vec<ValuePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSide {
    Left,
    Right,
}

/// `f(b) = 1 + delta Phi int_0^b e^{-Phi u} Wbb(u) du - beta e^{-Phi b}`.
pub fn f_of_b(problem: &ControlProblem, b: f64) -> f64 {
    let phi = problem.phi();
    1.0 + problem.delta() * phi * problem.weighted(b) - (-phi * b).exp() * problem.beta
}

/// `f'(b) = Phi e^{-Phi b} (delta Wbb(b) + beta)`.
pub fn f_prime(problem: &ControlProblem, b: f64) -> f64 {
    let phi = problem.phi();
    phi * (-phi * b).exp() * (problem.delta() * problem.family.y.w(b) + problem.beta)
}

/// Root of `f` by bracket doubling and safeguarded Newton; the value table covers
/// 200 points on `[0, 2 b*]`.
pub fn solve_bstar(problem: &ControlProblem) -> Result<SolveResult> {
    let (b_star, iterations) = find_root(problem)?;
    let grid: Vec<f64> = (0..200).map(|i| 2.0 * b_star * i as f64 / 199.0).collect();
    finish(problem, b_star, iterations, &grid)
}

/// As [`solve_bstar`] with a caller-chosen value grid.
pub fn solve_bstar_on_grid(problem: &ControlProblem, grid: &[f64]) -> Result<SolveResult> {
    let (b_star, iterations) = find_root(problem)?;
    finish(problem, b_star, iterations, grid)
}

fn find_root(problem: &ControlProblem) -> Result<(f64, usize)> {
    let phi = problem.phi();
    if phi <= 0.0 {
        return Err(Error::DegenerateDiscount);
    }
    let mut lo = 0.0;
    let mut hi = (1.0 / phi).min(1.0);
    let mut doublings = 0;
    while f_of_b(problem, hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::NoBracket(hi));
        }
    }
    let mut b = 0.5 * (lo + hi);
    for it in 0..500 {
        let fb = f_of_b(problem, b);
        if fb == 0.0 {
            return Ok((b, it));
        }
        if fb < 0.0 {
            lo = b;
        } else {
            hi = b;
        }
        let newton = b - fb / f_prime(problem, b);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - b).abs();
        b = next;
        if step <= 1e-15 * b.max(1.0) || hi - lo <= 1e-15 * b.max(1.0) {
            return Ok((b, it + 1));
        }
    }
    Err(Error::NoConvergence(format!("b* iteration stalled near {b}")))
}

fn finish(problem: &ControlProblem, b_star: f64, iterations: usize, grid: &[f64]) -> Result<SolveResult> {
    let f_residual = f_of_b(problem, b_star).abs();
    if f_residual > 1e-10 {
        return Err(Error::NoConvergence(format!("f(b*) = {f_residual:e}")));
    }
    let (d1l, d2l) = value_derivatives_at(problem, b_star, b_star, DerivativeSide::Left)?;
    let (d1r, d2r) = value_derivatives_at(problem, b_star, b_star, DerivativeSide::Right)?;
    let phi = problem.phi();
    let r_hat_prime_b = crate::fluctuation::kernel_r_hat_prime(&problem.family, b_star, b_star)?;
    let smooth_fit_ratio = phi * (-phi * b_star).exp()
        * (problem.delta() * problem.family.y.w(b_star) + problem.beta)
        / r_hat_prime_b;
    let mut value_at_grid = Vec::with_capacity(grid.len());
    for &x in grid {
        let v = value_refraction(problem, b_star, x)?;
        let side = if x < b_star {
            DerivativeSide::Left
        } else {
            DerivativeSide::Right
        };
        let (v_prime, _) = value_derivatives_at(problem, b_star, x, side)?;
        value_at_grid.push(ValuePoint { x, v, v_prime });
    }
    Ok(SolveResult {
        b_star,
        f_residual,
        smooth_fit_gap: (d1l - d1r).abs(),
        second_derivative_gap: (d2l - d2r).abs(),
        smooth_fit_ratio,
        iterations,
        value_at_grid,
    })
}

/// Pieces of `v^b` at `l = b - x`: `(v, v', v'')`. `inside` selects the branch
/// with `Wbb(l)` live (`x < b`, or `x = b` approached from the left).
fn value_parts(problem: &ControlProblem, b: f64, x: f64, inside: bool) -> Result<(f64, f64, f64)> {
    let fam = &problem.family;
    let phi = problem.phi();
    if phi <= 0.0 {
        return Err(Error::DegenerateDiscount);
    }
    let delta = problem.delta();
    let q = problem.q();
    let l = b - x;
    let k = delta * fam.y.w(b) + problem.beta;
    let e_b = (-phi * b).exp();
    let (wl, wl_prime) = if inside {
        let l = l.max(0.0);
        (fam.y.w(l), fam.y.w_prime(l))
    } else {
        (0.0, 0.0)
    };
    // r_hat(l) = e^{-Phi (b - l)} (...) with b - l = x
    let r_hat = (-phi * x).exp() * (1.0 + delta * phi * problem.weighted(l));
    let r_hat1 = phi * r_hat + delta * phi * e_b * wl;
    let r_hat2 = phi * r_hat1 + delta * phi * e_b * wl_prime;
    let r_hat_b = crate::fluctuation::kernel_r_hat_prime(fam, b, b)?;
    let zbb = if inside { fam.y.z(l.max(0.0)) } else { 1.0 };
    let v = delta * zbb / q - r_hat * k / r_hat_b;
    let v1 = -delta * wl + r_hat1 * k / r_hat_b;
    let v2 = delta * wl_prime - r_hat2 * k / r_hat_b;
    Ok((v, v1, v2))
}

/// NPV of the refraction-reflection strategy at level `b`:
/// `delta Zbb(b - x) / q - r_hat(b - x) / r_hat'(b) (delta Wbb(b) + beta)`.
/// For `x < 0` it is `v(0) + beta x`.
pub fn value_refraction(problem: &ControlProblem, b: f64, x: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::GeometryViolation(format!("b must be > 0 (got {b})")));
    }
    if x < 0.0 {
        return Ok(value_refraction(problem, b, 0.0)? + problem.beta * x);
    }
    Ok(value_parts(problem, b, x, x < b)?.0)
}

/// First and second derivatives of `v^b` at `x`, one-sided at `x = b`.
pub fn value_derivatives_at(problem: &ControlProblem, b: f64, x: f64, side: DerivativeSide) -> Result<(f64, f64)> {
    let inside = x < b || (x == b && side == DerivativeSide::Left);
    let (_, v1, v2) = value_parts(problem, b, x, inside)?;
    Ok((v1, v2))
}

/// `(v', v'')` of the optimal value function.
pub fn value_derivatives(problem: &ControlProblem, solved: &SolveResult, x: f64, side: DerivativeSide) -> Result<(f64, f64)> {
    value_derivatives_at(problem, solved.b_star, x, side)
}

/// Optimal value function in the form that stays accurate for large `delta`:
/// `-psi_Y(Phi)/(q Phi) + (1 - e^{-Phi(x - b*)})/Phi - delta int_x^{b*} (e^{-Phi(u - b*)} - 1) Wbb(u - x) du`.
pub fn value_optimal(problem: &ControlProblem, solved: &SolveResult, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Ok(value_optimal(problem, solved, 0.0)? + problem.beta * x);
    }
    let phi = problem.phi();
    let q = problem.q();
    let b = solved.b_star;
    let psi_y = problem
        .model()
        .laplace_exponent_real(problem.delta(), Process::Y, phi)?;
    let mut v = -psi_y / (q * phi) - (-phi * (x - b)).exp_m1() / phi;
    let l = b - x;
    if l > 0.0 {
        let j = (phi * l).exp() * problem.weighted(l) - problem.family.y.w_bar(l);
        v -= problem.delta() * j;
    }
    Ok(v)
}

/// `sup_{0 <= r <= delta} ((L_Y - q) v(x) - r v'(x) + r)`; the supremand is affine
/// in `r`, so the endpoints decide.
pub fn hjb_residual(problem: &ControlProblem, solved: &SolveResult, x: f64) -> Result<f64> {
    let b = solved.b_star;
    let side = if x < b {
        DerivativeSide::Left
    } else {
        DerivativeSide::Right
    };
    let lv = generator_on_value(problem, b, x, Process::Y)?;
    let (v1, _) = value_derivatives_at(problem, b, x, side)?;
    Ok(lv + (problem.delta() * (1.0 - v1)).max(0.0))
}

/// `(L - q) v^b(x)` for the chosen process (`Y` below `b`, `X` above).
pub fn generator_on_value(problem: &ControlProblem, b: f64, x: f64, process: Process) -> Result<f64> {
    let side = if x < b {
        DerivativeSide::Left
    } else {
        DerivativeSide::Right
    };
    let g = FnTriple {
        value: |y: f64| value_refraction(problem, b, y).unwrap_or(f64::NAN),
        first: |y: f64| {
            value_derivatives_at(problem, b, y, side)
                .map(|d| d.0)
                .unwrap_or(f64::NAN)
        },
        second: |y: f64| {
            value_derivatives_at(problem, b, y, side)
                .map(|d| d.1)
                .unwrap_or(f64::NAN)
        },
    };
    apply_generator(problem.model(), problem.delta(), process, &g, problem.q(), x, &[b])
}

/// Limit of the value function as `delta -> inf` with the level `b` held fixed:
/// `-int_0^{b - x} Zbb(y) dy - psi_Y'(0+) / q`.
pub fn unrestricted_limit(family: &ScaleFamily, b: f64, x: f64) -> f64 {
    let q = family.q();
    let l = b - x;
    let integral = if l > 0.0 {
        l + q * family.y.w_bar.antiderivative().eval(l)
    } else {
        l
    };
    -integral - family.model().psi_derivative_at_zero(family.delta(), Process::Y) / q
}

/// Level `b` with `Zbb(b) = beta`, the optimal barrier when dividends are unrestricted.
pub fn unrestricted_barrier(family: &ScaleFamily, beta: f64) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 1 (got {beta})")));
    }
    let g = |b: f64| family.y.z(b) - beta;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut n = 0;
    while g(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        n += 1;
        if n > MAX_DOUBLINGS {
            return Err(Error::NoBracket(hi));
        }
    }
    let mut b = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gb = g(b);
        if gb == 0.0 {
            break;
        }
        if gb < 0.0 {
            lo = b;
        } else {
            hi = b;
        }
        let newton = b - gb / (family.q() * family.y.w(b));
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let done = (next - b).abs() <= 1e-15 * b.max(1.0);
        b = next;
        if done {
            break;
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Beta,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub b_star: f64,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub x_grid: Vec<f64>,
    pub rows: Vec<SweepRow>,
    /// Decreasing in `beta` / increasing in `delta`, pointwise on the grid.
    pub monotone: bool,
}

/// Solves the problem for each parameter value (in parallel) and tabulates `v`.
pub fn sensitivity_sweep(
    template: &ControlProblem,
    parameter: SweepParameter,
    values: &[f64],
    x_grid: &[f64],
) -> Result<SweepTable> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows: Result<Vec<SweepRow>> = sorted
        .par_iter()
        .map(|&value| {
            let problem = match parameter {
                SweepParameter::Beta => template.with_beta(value)?,
                SweepParameter::Delta => template.with_delta(value)?,
            };
            let solved = solve_bstar_on_grid(&problem, x_grid)?;
            Ok(SweepRow {
                param: value,
                b_star: solved.b_star,
                values: solved.value_at_grid.iter().map(|p| p.v).collect(),
                derivatives: solved.value_at_grid.iter().map(|p| p.v_prime).collect(),
            })
        })
        .collect();
    let rows = rows?;
    let monotone = rows.windows(2).all(|w| {
        w[0].values.iter().zip(&w[1].values).all(|(a, b)| match parameter {
            SweepParameter::Beta => a >= b,
            SweepParameter::Delta => a <= b,
        })
    });
    Ok(SweepTable {
        parameter,
        x_grid: x_grid.to_vec(),
        rows,
        monotone,
    })
}

impl SweepTable {
    /// CSV with columns `param,b_star,x,v,v_prime`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,b_star,x,v,v_prime\n");
        for row in &self.rows {
            for ((x, v), d) in self.x_grid.iter().zip(&row.values).zip(&row.derivatives) {
                let _ = writeln!(out, "{},{},{},{},{}", row.param, row.b_star, x, v, d);
            }
        }
        out
    }
}

impl SolveResult {
    /// CSV with columns `param,b_star,x,v,v_prime`; `param` is `beta`.
    pub fn to_csv(&self, param: f64) -> String {
        let mut out = String::from("param,b_star,x,v,v_prime\n");
        for p in &self.value_at_grid {
            let _ = writeln!(out, "{},{},{},{},{}", param, self.b_star, p.x, p.v, p.v_prime);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{validate_model, LevyModelSpec};

    fn exp_problem(beta: f64) -> ControlProblem {
        let m = validate_model(&LevyModelSpec::exponential(1.0, 0.0, 1.0, 2.0)).unwrap();
        ControlProblem::new(&m, 0.5, 0.1, beta).unwrap()
    }

    #[test]
    fn f_at_zero() {
        let p = exp_problem(2.0);
        assert_eq!(f_of_b(&p, 0.0), 1.0 - 2.0);
    }

    #[test]
    fn root_and_smooth_fit() {
        let p = exp_problem(2.0);
        let s = solve_bstar(&p).unwrap();
        assert!(s.b_star > 0.0);
        assert!(s.f_residual < 1e-10);
        assert!((s.smooth_fit_ratio - 1.0).abs() < 1e-9);
        assert!(s.smooth_fit_gap < 1e-8);
    }

    #[test]
    fn two_forms_of_the_value_agree() {
        let p = exp_problem(2.0);
        let s = solve_bstar(&p).unwrap();
        for i in 0..20 {
            let x = 3.0 * s.b_star * i as f64 / 19.0;
            let a = value_optimal(&p, &s, x).unwrap();
            let b = value_refraction(&p, s.b_star, x).unwrap();
            assert!((a - b).abs() < 1e-9, "x = {x}: {a} vs {b}");
        }
    }

    #[test]
    fn invalid_beta() {
        let m = validate_model(&LevyModelSpec::exponential(1.0, 0.0, 1.0, 2.0)).unwrap();
        assert!(ControlProblem::new(&m, 0.5, 0.1, 1.0).is_err());
    }
}
