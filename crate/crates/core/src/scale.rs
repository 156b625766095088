//! Scale functions of `-X` and `-Y` as exponential mixtures.
//!
//! With all roots `rho` of `psi(s) = q` distinct, partial fractions of
//! `1 / (psi(s) - q)` give `W(x) = sum_rho e^{rho x} / psi'(rho)`. `W` belongs to the
//! refracted process `X`, `Wbb` (the blackboard W) to `Y`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_model::{Process, ValidatedModel, VariationClass};
use crate::mixture::{ExpMixture, Term};
use crate::spectral::{characteristic_roots, RootSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    W,
    Wbb,
    Z,
    Zbb,
    Wbar,
    Wbbbar,
    Wprime,
    Wbbprime,
}

/// One scale-function half (for `X` or for `Y`) with the mixtures derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePair {
    pub roots: RootSet,
    pub w: ExpMixture,
    pub w_prime: ExpMixture,
    pub w_second: ExpMixture,
    pub w_bar: ExpMixture,
    /// `Z - 1 = q Wbar` on `x >= 0`, plus the constant 1.
    pub z: ExpMixture,
    pub w0: f64,
    pub w0_prime: f64,
}

impl ScalePair {
    fn new(model: &ValidatedModel, delta: f64, process: Process, q: f64) -> Result<Self> {
        let roots = characteristic_roots(model, delta, process, q)?;
        let mut terms = Vec::with_capacity(roots.negative_roots.len() + 1);
        for rho in roots.all_roots() {
            let d = model.psi_derivative(delta, process, rho)?;
            terms.push(Term::exp(Complex64::new(1.0, 0.0) / d, rho));
        }
        let w = ExpMixture::new(terms);
        let w_prime = w.derivative();
        let w_second = w_prime.derivative();
        let w_bar = w.antiderivative();
        let z = w_bar
            .scaled(Complex64::new(q, 0.0))
            .plus(&ExpMixture::single(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)));
        let c = model.drift(delta, process);
        let (w0, w0_prime) = match model.variation_class() {
            VariationClass::Bounded => (1.0 / c, (q + model.kappa()) / (c * c)),
            VariationClass::Unbounded => (0.0, 2.0 / (model.sigma() * model.sigma())),
        };
        Ok(Self {
            roots,
            w,
            w_prime,
            w_second,
            w_bar,
            z,
            w0,
            w0_prime,
        })
    }

    pub fn w(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.w.eval(x)
        }
    }

    /// Derivative for `x > 0`; the boundary value `W'(0+)` at `x = 0`.
    pub fn w_prime(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else if x == 0.0 {
            self.w0_prime
        } else {
            self.w_prime.eval(x)
        }
    }

    pub fn w_second(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.w_second.eval(x)
        }
    }

    pub fn w_bar(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.w_bar.eval(x)
        }
    }

    pub fn z(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            self.z.eval(x)
        }
    }
}

/// Scale functions for fixed `(q, delta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFamily {
    model: ValidatedModel,
    delta: f64,
    q: f64,
    /// Scale function of `-X`.
    pub x: ScalePair,
    /// Scale function of `-Y`.
    pub y: ScalePair,
}

impl ScaleFamily {
    pub fn new(model: &ValidatedModel, delta: f64, q: f64) -> Result<Self> {
        Ok(Self {
            model: model.clone(),
            delta,
            q,
            x: ScalePair::new(model, delta, Process::X, q)?,
            y: ScalePair::new(model, delta, Process::Y, q)?,
        })
    }

    pub fn model(&self) -> &ValidatedModel {
        &self.model
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `Phi(q)`, the positive root for `X`.
    pub fn big_phi(&self) -> f64 {
        self.x.roots.positive_root
    }

    /// `phi(q)`, the positive root for `Y`.
    pub fn small_phi(&self) -> f64 {
        self.y.roots.positive_root
    }

    pub fn pair(&self, process: Process) -> &ScalePair {
        match process {
            Process::X => &self.x,
            Process::Y => &self.y,
        }
    }

    pub fn eval(&self, which: Which, x: f64) -> f64 {
        match which {
            Which::W => self.x.w(x),
            Which::Wbb => self.y.w(x),
            Which::Z => self.x.z(x),
            Which::Zbb => self.y.z(x),
            Which::Wbar => self.x.w_bar(x),
            Which::Wbbbar => self.y.w_bar(x),
            Which::Wprime => self.x.w_prime(x),
            Which::Wbbprime => self.y.w_prime(x),
        }
    }

    pub fn mixture(&self, which: Which) -> &ExpMixture {
        match which {
            Which::W => &self.x.w,
            Which::Wbb => &self.y.w,
            Which::Z => &self.x.z,
            Which::Zbb => &self.y.z,
            Which::Wbar => &self.x.w_bar,
            Which::Wbbbar => &self.y.w_bar,
            Which::Wprime => &self.x.w_prime,
            Which::Wbbprime => &self.y.w_prime,
        }
    }

    /// Closed-form `int_0^inf e^{-theta x} W(x) dx` against `1 / (psi(theta) - q)`.
    pub fn laplace_check(&self, process: Process, theta: f64) -> Result<(f64, f64)> {
        let pair = self.pair(process);
        let root = pair.roots.positive_root;
        if theta <= root {
            return Err(Error::ThetaNotDominating { theta, root });
        }
        let lhs = pair.w.laplace(theta).re;
        let rhs = 1.0 / (self.model.laplace_exponent_real(self.delta, process, theta)? - self.q);
        Ok((lhs, rhs))
    }

    /// `int_lo^hi e^{rate u} f(u) du` for the chosen scale function; `Z`-types
    /// equal 1 on the negative half-line.
    pub fn exp_weighted_integral(&self, lo: f64, hi: f64, rate: Complex64, which: Which) -> Complex64 {
        if hi < lo {
            return -self.exp_weighted_integral(hi, lo, rate, which);
        }
        let mut total = self.mixture(which).weighted_integral(lo, hi, rate);
        if matches!(which, Which::Z | Which::Zbb) && lo < 0.0 {
            total += exp_integral(rate, lo, hi.min(0.0));
        }
        total
    }

    /// `lim e^{-Phi x} W(x) = 1 / psi_X'(Phi)`.
    pub fn w_growth_limit(&self) -> Result<f64> {
        let phi = Complex64::new(self.big_phi(), 0.0);
        Ok(1.0 / self.model.psi_derivative(self.delta, Process::X, phi)?.re)
    }
}

/// `int_{z_lo}^{z_hi} A(x - z) B(z) dz` with both mixtures zero on negatives.
pub fn convolve_on_interval(a: &ExpMixture, b: &ExpMixture, z_lo: f64, z_hi: f64, x: f64) -> f64 {
    a.convolve_at(b, x, z_lo, z_hi)
}

/// `int_lo^hi e^{rate u} du`.
fn exp_integral(rate: Complex64, lo: f64, hi: f64) -> Complex64 {
    if hi <= lo {
        return Complex64::new(0.0, 0.0);
    }
    crate::mixture::exp_poly_integral(0, rate, Complex64::new(0.0, 0.0), lo, hi)
}
