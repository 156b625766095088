//! Spectrally positive Lévy model: drift, Brownian part and compound-Poisson
//! phase-type jumps, with its Laplace exponents.
//!
//! Sign conventions: `Y` drifts down at rate `c_Y` between upward jumps and
//! `E[e^{-s Y_t}] = e^{t psi_Y(s)}`. The refracted process `X = Y - delta t` has
//! `psi_X(s) = psi_Y(s) + delta s`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{ExpMixture, Term};
use crate::poly::{characteristic_polynomial, Poly};

const ALPHA_SUM_TOL: f64 = 1e-12;
const POLE_TOL: f64 = 1e-9;

/// Which of the two driving processes an exponent refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Process {
    /// The uncontrolled process `Y`.
    Y,
    /// The refracted process `X = Y - delta t`.
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariationClass {
    Bounded,
    Unbounded,
}

/// Model document as read from JSON or TOML. `T` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyModelSpec {
    #[serde(rename = "c_Y")]
    pub c_y: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub alpha: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
}

impl LevyModelSpec {
    /// Exponential jumps with mean `1 / mu`.
    pub fn exponential(c_y: f64, sigma: f64, kappa: f64, mu: f64) -> Self {
        Self {
            c_y,
            sigma,
            kappa,
            alpha: vec![1.0],
            t: vec![vec![-mu]],
        }
    }

    /// Six-phase fit to the absolute value of a standard normal, with drift 0.5,
    /// Brownian coefficient 0.2 and unit jump rate.
    ///
    /// The published initial vector sums to 1.0001 after rounding; it is rescaled
    /// to a probability vector here. [`HALF_NORMAL_ALPHA_PRINTED`] keeps the raw
    /// digits.
    pub fn half_normal_fit() -> Self {
        let sum: f64 = HALF_NORMAL_ALPHA_PRINTED.iter().sum();
        Self {
            c_y: 0.5,
            sigma: 0.2,
            kappa: 1.0,
            alpha: HALF_NORMAL_ALPHA_PRINTED.iter().map(|a| a / sum).collect(),
            t: HALF_NORMAL_T.iter().map(|row| row.to_vec()).collect(),
        }
    }
}

pub const HALF_NORMAL_ALPHA_PRINTED: [f64; 6] = [0.0052, 0.0659, 0.7446, 0.0398, 0.0043, 0.1403];

pub const HALF_NORMAL_T: [[f64; 6]; 6] = [
    [-4.0488, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.1320, -4.0012, 0.0, 0.0455, 3.7040, 0.0044],
    [0.2367, 0.8595, -4.2831, 0.1897, 0.2918, 2.3724],
    [3.1532, 0.0, 0.0, -4.0229, 0.0, 0.0],
    [0.2497, 0.0, 0.0, 3.7024, -4.0124, 0.0],
    [0.0434, 2.1947, 0.0938, 0.1704, 0.1217, -4.9612],
];

/// Phase-type law `(m, alpha, T)` of a single jump size.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTypeJump {
    alpha: DVector<f64>,
    t: DMatrix<f64>,
    t_exit: DVector<f64>,
    eigenvalues: Vec<Complex64>,
}

impl PhaseTypeJump {
    pub fn new(alpha: &[f64], t: &[Vec<f64>]) -> Result<Self> {
        let m = alpha.len();
        if m == 0 {
            return Err(Error::DimensionMismatch("alpha is empty".into()));
        }
        if t.len() != m || t.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "T must be {m}x{m} to match alpha"
            )));
        }
        let sum: f64 = alpha.iter().sum();
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) || (sum - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::NonStochasticAlpha { sum });
        }
        let tm = DMatrix::from_fn(m, m, |i, j| t[i][j]);
        for i in 0..m {
            let mut row_sum = 0.0;
            for j in 0..m {
                let v = tm[(i, j)];
                if !v.is_finite() {
                    return Err(Error::BadSubgenerator(format!("entry ({i},{j}) is not finite")));
                }
                if i == j && v >= 0.0 {
                    return Err(Error::BadSubgenerator(format!(
                        "diagonal entry {i} is {v}, must be negative"
                    )));
                }
                if i != j && v < 0.0 {
                    return Err(Error::BadSubgenerator(format!(
                        "off-diagonal entry ({i},{j}) is negative"
                    )));
                }
                row_sum += v;
            }
            if row_sum > 1e-12 * tm[(i, i)].abs() {
                return Err(Error::BadSubgenerator(format!("row {i} sums to {row_sum} > 0")));
            }
        }
        let eigenvalues: Vec<Complex64> = tm.clone().complex_eigenvalues().iter().copied().collect();
        if let Some(ev) = eigenvalues.iter().find(|ev| ev.re >= 0.0) {
            return Err(Error::BadSubgenerator(format!(
                "eigenvalue {ev} has nonnegative real part"
            )));
        }
        let t_exit = -(&tm * DVector::from_element(m, 1.0));
        let t_exit = t_exit.map(|v| if v.abs() < 1e-15 { 0.0 } else { v });
        if t_exit.iter().any(|v| *v < 0.0) {
            return Err(Error::BadSubgenerator("exit vector has a negative entry".into()));
        }
        Ok(Self {
            alpha: DVector::from_column_slice(alpha),
            t: tm,
            t_exit,
            eigenvalues,
        })
    }

    pub fn phases(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn subgenerator(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn exit_rates(&self) -> &DVector<f64> {
        &self.t_exit
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// `alpha (sI - T)^{-1} t` and `alpha (sI - T)^{-2} t`.
    fn resolvent_forms(&self, s: Complex64) -> Result<(Complex64, Complex64)> {
        if let Some(_ev) = self.eigenvalues.iter().find(|ev| (s - **ev).norm() < POLE_TOL) {
            return Err(Error::PoleAtEigenvalue { s });
        }
        let m = self.phases();
        let a = DMatrix::from_fn(m, m, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - self.t[(i, j)]
        });
        let lu = a.lu();
        let rhs = self.t_exit.map(|v| Complex64::new(v, 0.0));
        let u = lu
            .solve(&rhs)
            .ok_or(Error::PoleAtEigenvalue { s })?;
        let v = lu.solve(&u).ok_or(Error::PoleAtEigenvalue { s })?;
        let alpha = self.alpha.map(|v| Complex64::new(v, 0.0));
        Ok((alpha.dot(&u), alpha.dot(&v)))
    }

    /// Density `alpha e^{Tx} t` via the matrix exponential.
    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let e = (&self.t * x).exp();
        self.alpha.dot(&(e * &self.t_exit)).max(0.0)
    }

    /// Survival function `alpha e^{Tx} 1`.
    pub fn tail(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        let e = (&self.t * x).exp();
        let ones = DVector::from_element(self.phases(), 1.0);
        self.alpha.dot(&(e * ones)).clamp(0.0, 1.0)
    }

    /// Mean `alpha (-T)^{-1} 1`.
    pub fn mean(&self) -> f64 {
        let ones = DVector::from_element(self.phases(), 1.0);
        let sol = (-&self.t)
            .lu()
            .solve(&ones)
            .expect("subgenerator is nonsingular after validation");
        self.alpha.dot(&sol)
    }

    /// The density as an exponential mixture, from the residues of
    /// `alpha (sI - T)^{-1} t = 1 - det(sI - T - t alpha) / det(sI - T)`.
    /// Requires distinct eigenvalues of `T`.
    pub fn density_mixture(&self) -> Result<ExpMixture> {
        let chi_t = characteristic_polynomial(&self.t);
        let chi_full = characteristic_polynomial(&(&self.t + &self.t_exit * self.alpha.transpose()));
        let d_chi = chi_t.derivative();
        let ev = &self.eigenvalues;
        for i in 0..ev.len() {
            for j in 0..i {
                if (ev[i] - ev[j]).norm() < 1e-7 * (1.0 + ev[i].norm()) {
                    return Err(Error::RepeatedRoots(ev[i], ev[j]));
                }
            }
        }
        let terms = ev
            .iter()
            .map(|&lam| Term::exp(-chi_full.eval(lam) / d_chi.eval(lam), lam))
            .collect();
        let mix = ExpMixture::new(terms);
        // Clustered eigenvalues give huge cancelling residues; refuse rather than
        // hand back a mixture that has lost most of its digits.
        let scale = self.density(0.0).max(1.0);
        for x in [0.0, 0.5 / self.mean(), 2.0 / self.mean()] {
            let err = (mix.eval(x) - self.density(x)).abs();
            if err > 1e-9 * scale {
                return Err(Error::NoConvergence(format!(
                    "eigen-expansion of the jump density is ill-conditioned (error {err:e} at x = {x})"
                )));
            }
        }
        Ok(mix)
    }
}

/// A model whose invariants have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    c_y: f64,
    sigma: f64,
    kappa: f64,
    jump: PhaseTypeJump,
}

/// Checks every model invariant and precomputes the exit vector and spectrum of `T`.
pub fn validate_model(spec: &LevyModelSpec) -> Result<ValidatedModel> {
    ValidatedModel::new(spec)
}

impl ValidatedModel {
    pub fn new(spec: &LevyModelSpec) -> Result<Self> {
        if !spec.c_y.is_finite() {
            return Err(Error::InvalidParameter("c_Y must be finite".into()));
        }
        if !spec.sigma.is_finite() || spec.sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma must be >= 0 (got {})",
                spec.sigma
            )));
        }
        if !spec.kappa.is_finite() || spec.kappa <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kappa must be > 0 (got {})",
                spec.kappa
            )));
        }
        let jump = PhaseTypeJump::new(&spec.alpha, &spec.t)?;
        if spec.sigma == 0.0 && spec.c_y <= 0.0 {
            return Err(Error::SubordinatorModel { c_y: spec.c_y });
        }
        Ok(Self {
            c_y: spec.c_y,
            sigma: spec.sigma,
            kappa: spec.kappa,
            jump,
        })
    }

    pub fn c_y(&self) -> f64 {
        self.c_y
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn jump(&self) -> &PhaseTypeJump {
        &self.jump
    }

    /// Bounded iff `sigma == 0`: phase-type jumps have finite activity.
    pub fn variation_class(&self) -> VariationClass {
        if self.sigma > 0.0 {
            VariationClass::Unbounded
        } else {
            VariationClass::Bounded
        }
    }

    /// Downward drift rate of the chosen process: `c_Y` or `c_Y + delta`.
    pub fn drift(&self, delta: f64, process: Process) -> f64 {
        match process {
            Process::Y => self.c_y,
            Process::X => self.c_y + delta,
        }
    }

    pub fn laplace_exponent(&self, delta: f64, process: Process, s: Complex64) -> Result<Complex64> {
        let (f_hat, _) = self.jump.resolvent_forms(s)?;
        let c = self.drift(delta, process);
        Ok(c * s + 0.5 * self.sigma * self.sigma * s * s + self.kappa * (f_hat - 1.0))
    }

    pub fn laplace_exponent_real(&self, delta: f64, process: Process, s: f64) -> Result<f64> {
        Ok(self.laplace_exponent(delta, process, Complex64::new(s, 0.0))?.re)
    }

    /// `psi'(s) = c + sigma^2 s - kappa alpha (sI - T)^{-2} t`.
    pub fn psi_derivative(&self, delta: f64, process: Process, s: Complex64) -> Result<Complex64> {
        let (_, f_hat_sq) = self.jump.resolvent_forms(s)?;
        let c = self.drift(delta, process);
        Ok(c + self.sigma * self.sigma * s - self.kappa * f_hat_sq)
    }

    /// `psi'(0+) = c - kappa E[jump]`.
    pub fn psi_derivative_at_zero(&self, delta: f64, process: Process) -> f64 {
        self.drift(delta, process) - self.kappa * self.jump.mean()
    }

    /// Lévy density `kappa alpha e^{Tx} t`.
    pub fn jump_density(&self, x: f64) -> f64 {
        self.kappa * self.jump.density(x)
    }

    /// Tail mass `Pi((x, inf)) = kappa alpha e^{Tx} 1`.
    pub fn jump_tail(&self, x: f64) -> f64 {
        self.kappa * self.jump.tail(x)
    }

    /// `(psi(s) - q) det(sI - T)` expanded as a polynomial in `s`.
    pub fn characteristic_polynomial(&self, delta: f64, process: Process, q: f64) -> Poly {
        let t = self.jump.subgenerator();
        let chi_t = characteristic_polynomial(t);
        let full = t + self.jump.exit_rates() * self.jump.alpha().transpose();
        let chi_full = characteristic_polynomial(&full);
        let c = self.drift(delta, process);
        let quad = Poly(vec![-q, c, 0.5 * self.sigma * self.sigma]);
        quad.mul(&chi_t).add(&chi_full.scale(-self.kappa))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_model() -> ValidatedModel {
        validate_model(&LevyModelSpec::exponential(1.0, 0.0, 1.0, 2.0)).unwrap()
    }

    #[test]
    fn exponential_model_is_bounded_variation() {
        assert_eq!(exp_model().variation_class(), VariationClass::Bounded);
    }

    #[test]
    fn half_normal_fit_is_unbounded_variation() {
        let m = validate_model(&LevyModelSpec::half_normal_fit()).unwrap();
        assert_eq!(m.variation_class(), VariationClass::Unbounded);
        assert_eq!(m.jump().phases(), 6);
    }

    #[test]
    fn tiny_sigma_is_unbounded() {
        let m = validate_model(&LevyModelSpec::exponential(1.0, 1e-30, 1.0, 2.0)).unwrap();
        assert_eq!(m.variation_class(), VariationClass::Unbounded);
    }

    #[test]
    fn positive_diagonal_is_rejected() {
        let err = validate_model(&LevyModelSpec::exponential(1.0, 0.0, 1.0, -1.0)).unwrap_err();
        assert!(matches!(err, Error::BadSubgenerator(_)));
    }

    #[test]
    fn printed_alpha_is_not_a_probability_vector() {
        let mut spec = LevyModelSpec::half_normal_fit();
        spec.alpha = HALF_NORMAL_ALPHA_PRINTED.to_vec();
        let err = validate_model(&spec).unwrap_err();
        assert!(matches!(err, Error::NonStochasticAlpha { .. }));
    }

    #[test]
    fn subordinator_is_rejected() {
        let err = validate_model(&LevyModelSpec::exponential(0.0, 0.0, 1.0, 2.0)).unwrap_err();
        assert_eq!(err, Error::SubordinatorModel { c_y: 0.0 });
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = LevyModelSpec {
            c_y: 1.0,
            sigma: 0.0,
            kappa: 1.0,
            alpha: vec![0.5, 0.5],
            t: vec![vec![-1.0]],
        };
        assert!(matches!(validate_model(&spec), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn exponent_values_by_hand() {
        let m = exp_model();
        let zero = m.laplace_exponent(0.0, Process::Y, Complex64::new(0.0, 0.0)).unwrap();
        assert!(zero.norm() < 1e-15);
        let one = m.laplace_exponent_real(0.0, Process::Y, 1.0).unwrap();
        assert!((one - 2.0 / 3.0).abs() < 1e-14);
        let x = m.laplace_exponent_real(0.5, Process::X, 1.0).unwrap();
        assert!((x - 7.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_at_zero() {
        let m = exp_model();
        let d = m.psi_derivative(0.0, Process::Y, Complex64::new(0.0, 0.0)).unwrap();
        assert!((d.re - 0.5).abs() < 1e-14);
        assert!((m.psi_derivative_at_zero(0.0, Process::Y) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn pole_is_reported() {
        let m = exp_model();
        let err = m.laplace_exponent(0.0, Process::Y, Complex64::new(-2.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::PoleAtEigenvalue { .. }));
    }

    #[test]
    fn density_at_zero_and_mixture_agree() {
        let m = exp_model();
        assert!((m.jump_density(0.0) - 2.0).abs() < 1e-14);
        let jump = PhaseTypeJump::new(
            &[0.3, 0.7],
            &[vec![-1.0, 0.4], vec![0.0, -3.0]],
        )
        .unwrap();
        let mix = jump.density_mixture().unwrap();
        for x in [0.0, 0.1, 0.7, 2.0, 5.0] {
            assert!((mix.eval(x) - jump.density(x)).abs() < 1e-12);
        }
        let hn = validate_model(&LevyModelSpec::half_normal_fit()).unwrap();
        assert!(matches!(hn.jump().density_mixture(), Err(Error::NoConvergence(_))));
    }

    #[test]
    fn characteristic_polynomial_matches_exponent() {
        let m = validate_model(&LevyModelSpec::half_normal_fit()).unwrap();
        let p = m.characteristic_polynomial(0.7, Process::X, 0.05);
        let chi = characteristic_polynomial(m.jump().subgenerator());
        for s in [Complex64::new(0.3, 0.0), Complex64::new(-1.0, 2.0), Complex64::new(3.0, -0.5)] {
            let want = (m.laplace_exponent(0.7, Process::X, s).unwrap() - 0.05) * chi.eval(s);
            assert!((p.eval(s) - want).norm() < 1e-9 * (1.0 + want.norm()));
        }
    }
}
