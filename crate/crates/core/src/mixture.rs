//! Finite exponential-polynomial sums `sum_i c_i x^{k_i} e^{r_i x}` on `x >= 0`.
//!
//! Every scale function of a phase-type model, and every integral of one that the
//! fluctuation identities need, is carried in this form. Integrals, derivatives and
//! convolutions are evaluated term by term in closed form. Near-confluent exponents
//! (`|r| * span <= 1`) switch to a power series so that `e^{rx} - 1` style
//! cancellations never reach the result.

use std::fmt::Write as _;

use num_complex::Complex64;

/// Exponent magnitude below which a symbolic antiderivative is taken in the
/// confluent (polynomial) form.
pub const CONFLUENCE_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: Complex64,
    pub rate: Complex64,
    pub power: u32,
}

impl Term {
    pub fn new(coef: Complex64, rate: Complex64, power: u32) -> Self {
        Self { coef, rate, power }
    }

    pub fn exp(coef: Complex64, rate: Complex64) -> Self {
        Self::new(coef, rate, 0)
    }

    fn eval(&self, x: f64) -> Complex64 {
        let poly = if self.power == 0 {
            1.0
        } else {
            x.powi(self.power as i32)
        };
        self.coef * poly * (self.rate * x).exp()
    }
}

/// Exponential mixture, identically zero on the negative half-line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpMixture {
    terms: Vec<Term>,
}

impl ExpMixture {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn single(coef: Complex64, rate: Complex64) -> Self {
        Self::new(vec![Term::exp(coef, rate)])
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval_complex(&self, x: f64) -> Complex64 {
        if x < 0.0 {
            return ZERO;
        }
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    /// Real part of the mixture at `x`; zero for `x < 0`.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_complex(x).re
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self::new(
            self.terms
                .iter()
                .map(|t| Term::new(t.coef * factor, t.rate, t.power))
                .collect(),
        )
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self::new(terms).simplified()
    }

    /// Merges terms that share rate and power exactly; drops zero coefficients.
    pub fn simplified(mut self) -> Self {
        let mut out: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            if let Some(existing) = out
                .iter_mut()
                .find(|e| e.rate == t.rate && e.power == t.power)
            {
                existing.coef += t.coef;
            } else {
                out.push(t);
            }
        }
        out.retain(|t| t.coef != ZERO);
        Self::new(out)
    }

    pub fn derivative(&self) -> Self {
        let mut terms = Vec::with_capacity(2 * self.terms.len());
        for t in &self.terms {
            if t.rate != ZERO {
                terms.push(Term::new(t.coef * t.rate, t.rate, t.power));
            }
            if t.power > 0 {
                terms.push(Term::new(t.coef * t.power as f64, t.rate, t.power - 1));
            }
        }
        Self::new(terms).simplified()
    }

    /// Symbolic antiderivative vanishing at 0.
    pub fn antiderivative(&self) -> Self {
        let mut terms = Vec::new();
        for t in &self.terms {
            let k = t.power;
            if t.rate.norm() < CONFLUENCE_TOL {
                // e^{rz} ~ 1 + rz; the dropped O(r^2 z^2) part is below double precision here.
                terms.push(Term::new(t.coef / (k + 1) as f64, ZERO, k + 1));
                if t.rate != ZERO {
                    terms.push(Term::new(t.coef * t.rate / (k + 2) as f64, ZERO, k + 2));
                }
                continue;
            }
            // integral z^k e^{rz} = e^{rz} sum_m (-1)^m k!/(k-m)! z^{k-m} / r^{m+1}
            let mut falling = 1.0;
            for m in 0..=k {
                if m > 0 {
                    falling *= (k - m + 1) as f64;
                }
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let c = t.coef * sign * falling / t.rate.powu(m + 1);
                terms.push(Term::new(c, t.rate, k - m));
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            terms.push(Term::new(
                -t.coef * sign * falling / t.rate.powu(k + 1),
                ZERO,
                0,
            ));
        }
        Self::new(terms).simplified()
    }

    /// `int_lo^hi f(u) du`, with `f = 0` below zero.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.weighted_integral(lo, hi, ZERO).re
    }

    /// `int_lo^hi e^{rate u} f(u) du`, with `f = 0` below zero. Reversed limits give
    /// the negated integral.
    pub fn weighted_integral(&self, lo: f64, hi: f64, rate: Complex64) -> Complex64 {
        if hi < lo {
            return -self.weighted_integral(hi, lo, rate);
        }
        let lo = lo.max(0.0);
        if hi <= lo {
            return ZERO;
        }
        self.terms
            .iter()
            .map(|t| t.coef * exp_poly_integral(t.power, t.rate + rate, ZERO, lo, hi))
            .sum()
    }

    /// `int_0^inf e^{-theta x} f(x) dx`; valid when `theta` exceeds every real part.
    pub fn laplace(&self, theta: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| {
                let fact: f64 = (1..=t.power).map(|k| k as f64).product();
                t.coef * fact / (theta - t.rate).powu(t.power + 1)
            })
            .sum()
    }

    /// `int_lo^hi A(x - z) B(z) dz` with `A = self`, both zero on negatives.
    pub fn convolve_at(&self, other: &ExpMixture, x: f64, lo: f64, hi: f64) -> f64 {
        self.convolve_at_complex(other, x, lo, hi).re
    }

    pub fn convolve_at_complex(&self, other: &ExpMixture, x: f64, lo: f64, hi: f64) -> Complex64 {
        let lo = lo.max(0.0);
        let hi = hi.min(x);
        if hi <= lo {
            return ZERO;
        }
        let mut total = ZERO;
        for a in &self.terms {
            for b in &other.terms {
                let shift = a.rate * x;
                let gamma = b.rate - a.rate;
                let j = a.power;
                let mut pair = ZERO;
                let mut binom = 1.0;
                for i in 0..=j {
                    if i > 0 {
                        binom = binom * (j - i + 1) as f64 / i as f64;
                    }
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let xp = x.powi((j - i) as i32);
                    pair += sign
                        * binom
                        * xp
                        * exp_poly_integral(i + b.power, gamma, shift, lo, hi);
                }
                total += a.coef * b.coef * pair;
            }
        }
        total
    }

    /// Largest imaginary residue relative to the real part over a set of points.
    pub fn max_imag_residue(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| {
                let v = self.eval_complex(x);
                v.im.abs() / (1.0 + v.re.abs())
            })
            .fold(0.0, f64::max)
    }

    /// True when every non-real term has its conjugate partner.
    pub fn is_conjugate_closed(&self, tol: f64) -> bool {
        self.terms.iter().all(|t| {
            if t.coef.im.abs() <= tol && t.rate.im.abs() <= tol {
                return true;
            }
            self.terms.iter().any(|u| {
                u.power == t.power
                    && (u.coef - t.coef.conj()).norm() <= tol * (1.0 + t.coef.norm())
                    && (u.rate - t.rate.conj()).norm() <= tol * (1.0 + t.rate.norm())
            })
        })
    }

    /// Term dump: `coef_re,coef_im,rate_re,rate_im,power`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coef_re,coef_im,rate_re,rate_im,power\n");
        for t in &self.terms {
            let _ = writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{}",
                t.coef.re, t.coef.im, t.rate.re, t.rate.im, t.power
            );
        }
        out
    }
}

/// `int_lo^hi z^n e^{shift + gamma z} dz` for `lo <= hi`.
pub fn exp_poly_integral(n: u32, gamma: Complex64, shift: Complex64, lo: f64, hi: f64) -> Complex64 {
    if hi == lo {
        return ZERO;
    }
    let span = lo.abs().max(hi.abs());
    if gamma.norm() * span <= 1.0 {
        // sum_k gamma^k / k! * (hi^{n+k+1} - lo^{n+k+1}) / (n+k+1)
        let mut sum = ZERO;
        let mut g = Complex64::new(1.0, 0.0);
        let mut hp = hi.powi(n as i32 + 1);
        let mut lp = lo.powi(n as i32 + 1);
        for k in 0..80u32 {
            if k > 0 {
                g = g * gamma / k as f64;
                hp *= hi;
                lp *= lo;
            }
            let term = g * (hp - lp) / (n + k + 1) as f64;
            sum += term;
            if term.norm() <= 1e-18 * sum.norm() || g == ZERO {
                break;
            }
        }
        return shift.exp() * sum;
    }
    let antideriv = |z: f64| -> Complex64 {
        let mut poly = ZERO;
        let mut falling = 1.0;
        for m in 0..=n {
            if m > 0 {
                falling *= (n - m + 1) as f64;
            }
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            poly += sign * falling * z.powi((n - m) as i32) / gamma.powu(m + 1);
        }
        (shift + gamma * z).exp() * poly
    };
    antideriv(hi) - antideriv(lo)
}
